// The five simple baselines on a train/test split by time.

use merf::baselines::{fit_baseline, BaselineKind};
use merf::evaluation::{group_mae, make_time_split};
use merf::synth::{generate_with_screen, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let (ds, _) = generate_with_screen(&SynthConfig {
        n_clusters: 10,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let plan = make_time_split(&ds, 3)?;
    let train = ds.subset(&plan.folds[0].train);
    let test = ds.subset(&plan.folds[0].test);
    let actual = test.targets()?;
    for kind in BaselineKind::ALL {
        let model = fit_baseline(kind, &train)?;
        let pred = model.predict(&test.cluster_column())?;
        println!("{kind:<15} MAE {:.3}", group_mae(&pred, &actual)?);
    }
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
