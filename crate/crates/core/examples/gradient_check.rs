//! Runs the finite-difference gradient suite over every layer primitive and
//! both training objectives.
//!
//! Usage: cargo run --release --example gradient_check [step] [tolerance]

use dgpa::cli::gradient_suite;

fn main() -> dgpa::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let step = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-5);
    let tol = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-4);

    let entries = gradient_suite(step, 32)?;
    for e in &entries {
        println!("{:<24} {:>3} tensors  max rel error {:.2e}  {}", e.name, e.report.params.len(), e.report.max_rel_error(), if e.passes(tol) { "ok" } else { "FAIL" });
        for p in &e.report.params {
            println!("    {:<28} {:>4} coords  {:.2e}", p.name, p.coords_checked, p.max_rel_error);
        }
    }
    let failed = entries.iter().filter(|e| !e.passes(tol)).count();
    println!("{} of {} checks within {tol:e} at step {step:e}", entries.len() - failed, entries.len());
    Ok(())
}
