//! Finite-difference check of every loss term on the toy model.
//!
//! cargo run --release --example gradcheck

use std::time::Instant;

use disk::gradcheck::{grad_check, GradCheckConfig};

fn main() -> disk::Result<()> {
    let start = Instant::now();
    let report = grad_check(&GradCheckConfig::default())?;
    println!("{:<5} {:<12} {:>12}", "term", "block", "max rel err");
    for ((term, block), err) in report.by_block() {
        println!("{term:<5} {block:<12} {err:>12.3e}");
    }
    let worst = report.rows.iter().max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err)).expect("rows");
    println!("worst: {} {} {:.3e}", worst.term, worst.param, worst.max_rel_err);
    println!("checked {} entries, skipped {} flat, {:.1?}", report.checked(), report.skipped(), start.elapsed());
    Ok(())
}
