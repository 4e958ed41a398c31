//! Runs the item-level coder against a canned model, records the exchange,
//! then reproduces the codebook from the recording alone.
//!
//!     cargo run --example item_coding

use std::collections::BTreeMap;
use std::sync::Arc;

use opencoding::coders::{run_coder, Approach, PromptContext, TopicParams};
use opencoding::corpus::{ingest_corpus, segment_chunks, RawRecord, SegmentParams};
use opencoding::gateway::{FnProvider, Gateway, Mode, PromptRequest, StubEmbedder, Transcript};

fn canned(req: &PromptRequest) -> Result<String, opencoding::gateway::ProviderError> {
    // a real deployment would call a chat model here; tags name the message
    let reply = match req.tag.as_str() {
        "item_level:m01" => r#"[{"label": "share classroom plans", "definition": "Describing upcoming teaching."}]"#,
        "item_level:m02" => r#"[{"label": "ask for export", "definition": "Asking to save results outside the app."}]"#,
        _ => r#"[{"label": "promise a feature", "definition": "The designer says a request will ship."},
                 {"label": "ask for export", "definition": "Asking to save results outside the app."}]"#,
    }
    .to_string();
    Ok(reply)
}

fn main() {
    let records = vec![
        RawRecord::new("m01", "User-4", "user", 0, "We start circuits with year 9 next week"),
        RawRecord::new("m02", "User-4", "user", 60, "Could the app export the graphs as pictures?"),
        RawRecord::new("m03", "Designer-1", "designer", 120, "Export is on the list for the next update"),
    ];
    // item prompts show the surrounding chunk, so segment first
    let mut corpus = segment_chunks(ingest_corpus(&records).unwrap(), &SegmentParams::default());
    corpus.metadata = BTreeMap::from([
        ("research_question".into(), "How do teachers shape the software?".into()),
        ("context".into(), "A chat group around a physics simulation app.".into()),
    ]);
    let ctx = PromptContext::from_metadata(&corpus.metadata).unwrap();
    let topic = TopicParams::default();

    let recorder = Gateway::new(
        Transcript::in_memory(Mode::Record, []),
        Some(Arc::new(FnProvider(canned))),
        Arc::new(StubEmbedder::default()),
    );
    let first = run_coder(Approach::ItemLevel, &corpus, &ctx, &recorder, "item_demo", &topic).unwrap();
    for c in &first.codebook.codes {
        println!("{} {:<22} {:?}", c.id, c.label, c.example_message_ids);
    }

    let entries = recorder
        .transcript_jsonl()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect::<Vec<_>>();
    println!("recorded {} exchanges", entries.len());
    let replay = Gateway::replay(Transcript::in_memory(Mode::Replay, entries));
    let again = run_coder(Approach::ItemLevel, &corpus, &ctx, &replay, "item_demo", &topic).unwrap();
    assert_eq!(first.codebook, again.codebook);
    println!("replay reproduced the codebook with {} provider calls", replay.upstream_calls());
}
