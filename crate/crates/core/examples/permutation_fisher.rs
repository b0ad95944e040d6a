// Sign-flip permutation tests on per-cluster lifts, combined across runs
// with Fisher's method.

use merf::numerics::RngStream;
use merf::stats::{fisher_combine, permutation_test_one_sample};

pub fn run_example() -> merf::Result<()> {
    let mut rng = RngStream::new(1, "lifts");
    let mut p_values = Vec::new();
    for run in 0..5 {
        let n = if run == 4 { 30 } else { 12 };
        let lifts: Vec<f64> = (0..n).map(|_| 0.4 + rng.standard_normal()).collect();
        let r = permutation_test_one_sample(&lifts, 20, 10_000, &mut RngStream::new(run, "perm"))?;
        println!(
            "run {run}: mean lift {:+.3}, p = {:.4} ({})",
            r.observed_mean,
            r.p_value,
            if r.exact { "exact" } else { "monte carlo" }
        );
        p_values.push(r.p_value);
    }
    println!("Fisher-combined p = {:.5}", fisher_combine(&p_values)?);
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
