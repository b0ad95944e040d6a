// Generate a synthetic clustered dataset and write it as CSV.

use merf::synth::{generate_with_screen, FixedFn, ObsPerCluster, SynthConfig};

pub fn run_example() -> merf::Result<()> {
    let cfg = SynthConfig {
        n_clusters: 12,
        obs_per_cluster: ObsPerCluster::Range(4, 8),
        p: 4,
        sigma_b: 2.0,
        sigma_e: 1.0,
        fixed_fn: FixedFn::HajjemNonlinear,
        missing_rate: 0.1,
        seed: 42,
        ..SynthConfig::default()
    };
    let (ds, truth) = generate_with_screen(&cfg)?;
    println!(
        "{} rows, {} clusters, {} missing cells",
        ds.len(),
        ds.cluster_ids().len(),
        ds.missing_count()
    );
    for (id, b) in truth.b_true.iter().take(3) {
        println!("cluster {id}: b = {b:+.3}, screen = {:?}", ds.screen_score(id));
    }

    let dir = std::env::temp_dir().join("merf-simulate-example");
    std::fs::create_dir_all(&dir)?;
    ds.save_csv(&dir.join("data.csv"), Some(&dir.join("data.meta.csv")))?;
    println!("wrote {}", dir.join("data.csv").display());
    Ok(())
}

fn main() -> merf::Result<()> {
    run_example()
}
