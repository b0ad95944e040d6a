// Fit a mixed effects random forest and compare the estimates with the
// generating parameters.

use merf::forest::RfHyperparams;
use merf::merf::{fit_merf, MerfConfig};
use merf::numerics::RngStream;
use merf::synth::{generate, ObsPerCluster, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let (ds, truth) = generate(&SynthConfig {
        n_clusters: 20,
        obs_per_cluster: ObsPerCluster::Fixed(10),
        seed: 7,
        ..SynthConfig::default()
    })?;
    let cfg = MerfConfig {
        max_iterations: 8,
        rf: RfHyperparams {
            n_trees: 50,
            ..RfHyperparams::default()
        },
        ..MerfConfig::default()
    };
    let model = fit_merf(&ds, &cfg, &RngStream::new(7, "example"))?;

    println!("iterations: {}", model.iterations());
    for (i, g) in model.gll_history().iter().enumerate() {
        println!("  GLL[{}] = {g:.3}", i + 1);
    }
    println!("sigma2_hat = {:.3} (true {:.3})", model.sigma2_hat(), truth.sigma_e2);
    println!("D_hat      = {:.3} (true {:.3})", model.d_hat()[(0, 0)], truth.sigma_b2);
    for (id, b) in model.b_hat().iter().take(4) {
        println!("  {id}: b_hat {:+.3}, b_true {:+.3}", b[0], truth.b_true[id]);
    }

    let x = ds.design_matrix()?;
    let first = ds.group_by_cluster()?.into_iter().next().expect("nonempty");
    let rows = x.select_rows(&first.1);
    let cond = model.predict(&rows, Some(&first.0))?;
    let uncond = model.predict(&rows, None)?;
    println!("cluster {}: conditional {:.3} vs unconditional {:.3}", first.0, cond[0], uncond[0]);
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
