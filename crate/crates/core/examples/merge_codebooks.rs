//! Merges three small codebooks (one human, two machine) and shows the
//! coverage pattern and the nearest codes offered to a reviewer.
//!
//!     cargo run --example merge_codebooks

use std::path::Path;

use opencoding::codebook::Codebook;
use opencoding::corpus::read_corpus;
use opencoding::gateway::{Gateway, Mode, Transcript};
use opencoding::merging::{merge_output, suggest_near_codes, MergeParams};
use opencoding::review::ProjectConfig;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/merge_mini");
    let books: Vec<Codebook> = ["humans", "item_level", "item_verb"]
        .iter()
        .map(|c| Codebook::load(&dir.join(format!("codebooks/{c}.json"))).unwrap())
        .collect();
    let mut corpus = read_corpus(std::io::BufReader::new(std::fs::File::open(dir.join("corpus.jsonl")).unwrap())).unwrap();
    // the study framing lives in project.json and is part of every prompt
    corpus.metadata = ProjectConfig::load(&dir).unwrap().metadata;
    // merged labels come from the recorded model answers
    let gateway = Gateway::replay(Transcript::open(&dir, Mode::Replay).unwrap());

    let out = merge_output(&books, &MergeParams::default(), &gateway, Some(&corpus)).unwrap();
    println!("{} codes → {} merged codes", books.iter().map(|b| b.codes.len()).sum::<usize>(), out.merged.len());
    for m in out.merged.iter().filter(|m| m.children.len() > 1) {
        println!("\n{} \"{}\": {}", m.id, m.label, m.definition);
        for (coder, covered) in &m.algorithmic_coverage {
            println!("  {coder:<11} {}", if *covered { "covered" } else { "-" });
        }
        for b in &books[1..] {
            let near = suggest_near_codes(m, b, 2, &gateway).unwrap();
            let labels: Vec<String> = near.iter().map(|s| format!("{} ({:.2})", s.code.label, s.similarity)).collect();
            println!("  nearest in {}: {}", b.coder_id, labels.join(", "));
        }
    }
}
