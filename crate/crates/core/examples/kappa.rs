//! Cohen's kappa between two reviewers' coverage decisions, with its band.
//!
//!     cargo run --example kappa

use opencoding::metrics::{cohen_kappa, ContingencyTable};

fn main() {
    let r1 = [true, true, false, true, false, false, true, true, false, true, true, false];
    let r2 = [true, false, false, true, false, true, true, true, false, true, false, false];
    let report = cohen_kappa(&r1, &r2).expect("non-empty, same length");
    println!("vectors: {}", report.badge());

    // the same statistic from counts alone
    let mut t = ContingencyTable::new();
    t.add(true, true, 40);
    t.add(false, false, 25);
    t.add(true, false, 9);
    t.add(false, true, 7);
    let report = t.kappa().expect("non-empty table");
    println!(
        "table of {}: {} (observed {:.3}, chance {:.3})",
        t.total(),
        report.badge(),
        report.observed_agreement,
        report.expected_agreement
    );
}
