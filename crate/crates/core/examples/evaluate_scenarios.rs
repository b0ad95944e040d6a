// Compare MERF, a plain forest and the baselines under the random, time and
// leave-one-cluster-out protocols.

use merf::evaluation::{run_experiment, ExperimentOptions, Scenario};
use merf::forest::RfHyperparams;
use merf::merf::MerfConfig;
use merf::synth::{generate_with_screen, ObsPerCluster, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let (ds, _) = generate_with_screen(&SynthConfig {
        n_clusters: 10,
        obs_per_cluster: ObsPerCluster::Fixed(8),
        seed: 11,
        ..SynthConfig::default()
    })?;
    let rf = RfHyperparams {
        n_trees: 30,
        ..RfHyperparams::default()
    };
    let cfg = MerfConfig {
        max_iterations: 5,
        rf: rf.clone(),
        ..MerfConfig::default()
    };
    let opts = ExperimentOptions {
        rf_grid: Some(vec![rf.clone(), RfHyperparams { max_depth: Some(4), ..rf }]),
        ..ExperimentOptions::default()
    };
    for scenario in [Scenario::Random, Scenario::Time, Scenario::User] {
        let report = run_experiment(&ds, scenario, &[0, 1], &cfg, &opts)?;
        println!(
            "{scenario:<6} pbl {:<14} pbl err {:.3}  merf err {:.3}  lift {:+.3}  p {:?}  wc {:.2}/{:.2}",
            report.pbl.to_string(),
            report.avg_pbl_err,
            report.avg_merf_err,
            report.avg_user_lift,
            report.user_lift_p.map(|p| (p * 1000.0).round() / 1000.0),
            report.wc_pbl_err,
            report.wc_merf_err
        );
    }
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
