// Plain random-forest regression with a small cross-validated grid search.

use merf::forest::{cross_validate, fit_forest, tune_forest, MaxFeatures, RfHyperparams};
use merf::numerics::RngStream;
use merf::synth::{generate, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let (ds, _) = generate(&SynthConfig {
        n_clusters: 15,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let x = ds.design_matrix()?;
    let y = ds.targets()?;

    let base = RfHyperparams {
        n_trees: 40,
        ..RfHyperparams::default()
    };
    let grid = vec![
        base.clone(),
        RfHyperparams {
            max_features: MaxFeatures::All,
            ..base.clone()
        },
        RfHyperparams {
            max_depth: Some(4),
            ..base
        },
    ];
    let rng = RngStream::new(3, "tune");
    let scores = cross_validate(&x, &y, &grid, 3, &rng)?;
    for (hp, s) in grid.iter().zip(&scores) {
        println!("{:?} depth {:?}: CV MAE {s:.3}", hp.max_features, hp.max_depth);
    }
    let best = tune_forest(&x, &y, &grid, 3, &rng)?;
    let forest = fit_forest(&x, &y, &best, &RngStream::new(3, "final"))?;
    let pred = forest.predict(&x)?;
    let mae = pred.iter().zip(&y).map(|(p, t)| (p - t).abs()).sum::<f64>() / y.len() as f64;
    println!("{} trees, training MAE {mae:.3}", forest.trees().len());
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
