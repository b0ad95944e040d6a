// Save a fitted model to a versioned container and reload it.

use merf::cli::{dataset_fingerprint, predict_rows, ModelContainer, StoredModel};
use merf::forest::RfHyperparams;
use merf::merf::{fit_merf, MerfConfig};
use merf::numerics::RngStream;
use merf::synth::{generate, ObsPerCluster, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let (ds, _) = generate(&SynthConfig {
        n_clusters: 8,
        obs_per_cluster: ObsPerCluster::Fixed(6),
        seed: 2,
        ..SynthConfig::default()
    })?;
    let cfg = MerfConfig {
        max_iterations: 4,
        rf: RfHyperparams {
            n_trees: 20,
            ..RfHyperparams::default()
        },
        ..MerfConfig::default()
    };
    let model = fit_merf(&ds, &cfg, &RngStream::new(2, "fit"))?;
    let container = ModelContainer::new(
        StoredModel::Merf(model),
        serde_json::to_string(&cfg)?,
        dataset_fingerprint(&ds)?,
    );
    let path = std::env::temp_dir().join("merf-persistence-example.bin");
    container.save(&path)?;
    let loaded = ModelContainer::load(&path)?;
    println!(
        "{} bytes, format v{}, kind {}, data {}",
        std::fs::metadata(&path)?.len(),
        loaded.format_version,
        loaded.model_kind,
        &loaded.dataset_fingerprint[..12]
    );
    let before = predict_rows(&container.payload, &ds)?;
    let after = predict_rows(&loaded.payload, &ds)?;
    let identical = before.iter().zip(&after).all(|(a, b)| a.0.to_bits() == b.0.to_bits());
    println!("predictions identical after reload: {identical}");
    assert!(identical);
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
