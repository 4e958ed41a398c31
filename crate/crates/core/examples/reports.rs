//! Renders the validation, unique-coverage and gain-source tables from
//! hand-entered review results.
//!
//!     cargo run --example reports

use opencoding::metrics::{
    table2, table4, table5, unique_coverage, ApproachCodes, CoverageGroup, CoverageMatrix, ValidationInput,
};
use opencoding::review::{Breadth, Gain, Groundedness, Source};

fn main() {
    let mut v = ValidationInput::default();
    for (name, n, ungrounded, broad) in [("Chunk-Level", 12, 2, 1), ("Item-Level", 30, 1, 0)] {
        let ids: Vec<String> = (0..n).map(|i| format!("{name}/{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let g = if i < ungrounded { Groundedness::Ungrounded } else { Groundedness::Grounded };
            let b = if i + broad >= n { Breadth::OverlyBroad } else { Breadth::Specific };
            v.groundedness.insert(id.clone(), g);
            v.breadth.insert(id.clone(), b);
        }
        v.approaches.push(ApproachCodes { name: name.into(), code_ids: ids });
    }
    println!("{}", table2(&v).to_text());

    let coders = ["alice", "bob", "item_level"];
    let mut m = CoverageMatrix {
        coder_ids: coders.iter().map(|c| c.to_string()).collect(),
        ..CoverageMatrix::default()
    };
    // (merged id, who covered it, gain, source)
    let rows = [
        ("m1", &["alice", "bob", "item_level"][..], Gain::Little, None),
        ("m2", &["alice"][..], Gain::Substantial, Some(Source::ConversationalDynamics)),
        ("m3", &["item_level"][..], Gain::Substantial, Some(Source::Content)),
        ("m4", &["item_level"][..], Gain::Minor, None),
        ("m5", &["bob"][..], Gain::Little, None),
    ];
    for (id, by, gain, source) in rows {
        for c in coders {
            m.set(id, c, by.contains(&c));
        }
        m.gain.insert(id.into(), gain);
        if let Some(s) = source {
            m.source.insert(id.into(), s);
        }
        m.merged_ids.push(id.into());
    }
    let groups = [
        CoverageGroup::new("Humans", ["alice", "bob"]),
        CoverageGroup::new("Item-Level", ["item_level"]),
    ];
    let u = unique_coverage(&m, &groups).expect("groups name known coders");
    println!("{}", table4(&u).to_text());
    println!("{}", table5(&u).to_text());
}
