//! Runs the finite-difference suite and prints one row per check.

use unetformer::gradsuite::{run_suite, SuiteOptions, GRAD_TOL};

fn main() -> unetformer::Result<()> {
    println!("{:<28} {:>12} {:>8}  status", "check", "max rel err", "coords");
    let t0 = std::time::Instant::now();
    let reports = run_suite(SuiteOptions::default(), &mut |r| {
        let status = if r.passes(GRAD_TOL) { "ok" } else { "FAIL" };
        println!(
            "{:<28} {:>12.3e} {:>8}  {status}",
            r.op_name, r.max_rel_error, r.coordinates_checked
        );
    })?;
    let failed = reports.iter().filter(|r| !r.passes(GRAD_TOL)).count();
    println!(
        "{} checks, {failed} failed, {:.1}s",
        reports.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
    Ok(())
}
