//! Scores a few hand-written hypotheses against their references.
//!
//! cargo run --example evaluate_metrics

use disk::metrics::EvalReport;

fn main() -> disk::Result<()> {
    let pairs = [
        ("tom has 3 apples and buys 4 more", "tom has 3 apples and buys 4 more"),
        ("a train travels 60 miles in 2 hours", "a car travels 60 miles in 3 hours"),
        ("how many pens are left", "sara had 12 pens and gave away 5"),
    ];
    let split = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let ids: Vec<String> = (0..pairs.len()).map(|i| format!("ex{i}")).collect();
    let hyps: Vec<_> = pairs.iter().map(|p| split(p.0)).collect();
    let refs: Vec<_> = pairs.iter().map(|p| split(p.1)).collect();
    let report = EvalReport::compute(&ids, &hyps, &refs)?;
    println!("{}\n{}", EvalReport::TSV_HEADER, report.tsv_row());
    for e in &report.examples {
        println!("{e:?}");
    }
    Ok(())
}
