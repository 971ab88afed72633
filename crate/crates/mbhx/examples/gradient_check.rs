//! Verify every backward rule against central finite differences,
//! including the end-to-end gradient of the full training loss.
//!
//! Run with: cargo run --example gradient_check

use mbhx::gradcheck::run_full_suite;

fn main() -> mbhx::Result<()> {
    let report = run_full_suite(42, None)?;
    print!("{}", report.render());
    println!(
        "{} checks, all passed: {}",
        report.checks.len(),
        report.all_passed()
    );
    Ok(())
}
