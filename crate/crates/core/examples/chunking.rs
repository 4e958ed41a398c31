//! Splits a message stream into conversation chunks at prominent pauses.
//!
//!     cargo run --example chunking

use opencoding::corpus::{ingest_corpus, segment_chunks, RawRecord, SegmentParams};

fn main() {
    // two bursts of chat a day apart, then a short follow-up three hours later
    let stamps = [0, 40, 95, 130, 200, 86_400, 86_460, 86_530, 97_330, 97_400];
    let records: Vec<RawRecord> = stamps
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let who = if i % 3 == 0 { "Designer-1" } else { "User-7" };
            let role = if who.starts_with("Designer") { "designer" } else { "user" };
            RawRecord::new(&format!("m{:02}", i + 1), who, role, t, &format!("message {}", i + 1))
        })
        .collect();
    let corpus = ingest_corpus(&records).expect("valid records");

    for params in [
        SegmentParams::default(),
        SegmentParams { min_gap: 20_000, ..SegmentParams::default() },
    ] {
        let chunked = segment_chunks(corpus.clone(), &params);
        println!("min_gap={}s factor={}:", params.min_gap, params.prominence_factor);
        for c in &chunked.chunks {
            println!("  {} {:?}", c.id, c.message_ids);
        }
    }
}
