use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::dataset::Observation;
use crate::forest::{DecisionTree, MaxFeatures};

fn m(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

fn ones(n: usize) -> Matrix {
    Matrix::column(&vec![1.0; n])
}

fn constant_forest(value: f64, p: usize) -> RandomForestModel {
    RandomForestModel::from_trees(vec![DecisionTree::leaf(value, 1, p)], RfHyperparams::default(), (value, value))
        .unwrap()
}

/// A design whose clusters have the given sizes and a single zero feature.
fn design_with(sizes: &[usize], y: Vec<f64>) -> ClusterDesign {
    let n: usize = sizes.iter().sum();
    let mut clusters = Vec::new();
    let mut start = 0;
    for (k, &s) in sizes.iter().enumerate() {
        clusters.push(ClusterBlock {
            id: format!("c{k}"),
            rows: (start..start + s).collect(),
            z: ones(s),
        });
        start += s;
    }
    ClusterDesign::new(Matrix::zeros(n, 1), y, clusters).unwrap()
}

fn small_rf() -> RfHyperparams {
    RfHyperparams {
        n_trees: 20,
        ..RfHyperparams::default()
    }
}

/// Clustered data with a random intercept of sd `sigma_b` and a step fixed
/// effect in feature 0.
fn clustered_dataset(n_clusters: usize, per: usize, sigma_b: f64, seed: u64) -> LongitudinalDataset {
    let mut rng = RngStream::new(seed, "merf-unit");
    let mut rows = Vec::new();
    for c in 0..n_clusters {
        let b = sigma_b * rng.standard_normal();
        for v in 0..per {
            let x0 = rng.standard_normal();
            let x1 = rng.standard_normal();
            let y = 5.0 * f64::from(u8::from(x0 > 0.0)) + x1 + b + 0.5 * rng.standard_normal();
            rows.push(Observation {
                cluster_id: format!("c{c:02}"),
                visit: v as u64,
                features: vec![Some(x0), Some(x1)],
                target: Some(y),
            });
        }
    }
    LongitudinalDataset::new(rows, 2, vec![], None).unwrap()
}

#[test]
fn intercept_design_is_ones() {
    let z = build_z(&Matrix::zeros(3, 2), &RandomEffectSpec::InterceptOnly).unwrap();
    assert_eq!(z, m(&[&[1.0], &[1.0], &[1.0]]));
}

#[test]
fn column_design_selects_features() {
    let rows = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
    let spec = RandomEffectSpec::Columns {
        indices: vec![0],
        intercept: false,
    };
    assert_eq!(build_z(&rows, &spec).unwrap(), m(&[&[5.0], &[7.0]]));
    let with_intercept = RandomEffectSpec::Columns {
        indices: vec![1],
        intercept: true,
    };
    assert_eq!(build_z(&rows, &with_intercept).unwrap(), m(&[&[1.0, 6.0], &[1.0, 8.0]]));
    let bad = RandomEffectSpec::Columns {
        indices: vec![9],
        intercept: false,
    };
    assert!(build_z(&rows, &bad).is_err());
}

#[test]
fn v_inverse_two_rows() {
    let inv = v_inverse(&ones(2), &m(&[&[1.0]]), 1.0).unwrap();
    assert!(inv.max_abs_diff(&m(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]])) < 1e-14);
}

#[test]
fn v_inverse_without_random_effect() {
    for n in [3, 12] {
        let inv = v_inverse(&ones(n), &m(&[&[0.0]]), 2.0).unwrap();
        assert!(inv.max_abs_diff(&Matrix::identity(n).scale(0.5)) < 1e-15);
    }
}

#[test]
fn woodbury_matches_direct_on_random_instance() {
    let mut rng = RngStream::new(31, "woodbury");
    let z = Matrix::from_vec(6, 2, (0..12).map(|_| rng.standard_normal()).collect()).unwrap();
    let g = Matrix::from_vec(2, 2, (0..4).map(|_| rng.standard_normal()).collect()).unwrap();
    let d = g.transpose().matmul(&g).unwrap().symmetrized();
    let a = v_inverse_direct(&z, &d, 0.7).unwrap();
    let b = v_inverse_woodbury(&z, &d, 0.7).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-10);
}

#[test]
fn v_inverse_rejects_bad_sigma() {
    assert!(v_inverse(&ones(2), &m(&[&[1.0]]), 0.0).is_err());
    assert!(v_inverse(&ones(2), &m(&[&[1.0, 0.0], &[0.0, 1.0]]), 1.0).is_err());
}

fn intercept_estimate(resid: &[f64], d: f64, sigma2: f64) -> f64 {
    let z = ones(resid.len());
    let dm = m(&[&[d]]);
    let v_inv = v_inverse(&z, &dm, sigma2).unwrap();
    random_effect_estimate(&z, &dm, &v_inv, resid).unwrap()[0]
}

#[test]
fn shrinkage_closed_form_example() {
    // n = 4, d = 1, σ² = 1, mean residual 2: (4/5)·2
    assert_abs_diff_eq!(intercept_estimate(&[1.0, 3.0, 2.5, 1.5], 1.0, 1.0), 1.6, epsilon = 1e-12);
}

#[test]
fn zero_variance_gives_zero_effect() {
    assert_eq!(intercept_estimate(&[4.0, -1.0, 3.0], 0.0, 1.0), 0.0);
}

#[test]
fn vanishing_noise_recovers_mean_residual() {
    assert_abs_diff_eq!(intercept_estimate(&[3.0, 2.0, 4.0], 1.0, 1e-8), 3.0, epsilon = 1e-6);
}

proptest! {
    #[test]
    fn matrix_path_equals_shrinkage_formula(
        resid in prop::collection::vec(-10.0f64..10.0, 1..30),
        d in 0.1f64..10.0,
        sigma2 in 0.1f64..10.0,
    ) {
        let n = resid.len() as f64;
        let rbar = resid.iter().sum::<f64>() / n;
        let expected = n * d / (sigma2 + n * d) * rbar;
        let got = intercept_estimate(&resid, d, sigma2);
        prop_assert!((got - expected).abs() < 1e-10, "{} vs {}", got, expected);
        // shrinkage bound and sign
        prop_assert!(got.abs() <= rbar.abs() + 1e-12);
        if rbar != 0.0 {
            prop_assert!(got.signum() == rbar.signum());
        }
    }

    #[test]
    fn woodbury_and_direct_agree(
        n in 1usize..=12,
        q in 1usize..=3,
        seed in 0u64..10_000,
        sigma2 in 0.1f64..5.0,
    ) {
        let mut rng = RngStream::new(seed, "dual");
        let z = Matrix::from_vec(n, q, (0..n * q).map(|_| rng.standard_normal()).collect()).unwrap();
        let g = Matrix::from_vec(q, q, (0..q * q).map(|_| rng.standard_normal()).collect()).unwrap();
        let d = g.transpose().matmul(&g).unwrap().symmetrized();
        let a = v_inverse_direct(&z, &d, sigma2).unwrap();
        let b = v_inverse_woodbury(&z, &d, sigma2).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
    }
}

fn estep_with(forest_value: f64, p: usize, fitted: Vec<f64>, b_hat: Vec<Vec<f64>>, v_inv: Vec<Matrix>) -> EStep {
    EStep {
        forest: constant_forest(forest_value, p),
        fitted,
        b_hat,
        v_inv,
    }
}

#[test]
fn m_step_sigma_on_perfect_fit() {
    // m clusters of one observation each, V = [1 + d] = [2]
    let y = vec![3.0, -1.0, 4.0];
    let design = design_with(&[1, 1, 1], y.clone());
    let prev = EmState::initial(3, 1, 1.0, 1.0);
    let estep = estep_with(0.0, 1, y, vec![vec![0.0]; 3], vec![m(&[&[0.5]]); 3]);
    let (sigma2, d) = m_step(&design, &prev, &estep, 1).unwrap();
    assert_abs_diff_eq!(sigma2, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(d[(0, 0)], 0.5, epsilon = 1e-15);
}

#[test]
fn m_step_d_single_cluster() {
    // b̂ = 2, n = 1, d = 1, σ² = 1: 4 + 1 − 1·(1/2)·1
    let design = design_with(&[1], vec![5.0]);
    let prev = EmState::initial(1, 1, 1.0, 1.0);
    let estep = estep_with(0.0, 1, vec![3.0], vec![vec![2.0]], vec![m(&[&[0.5]])]);
    let (_, d) = m_step(&design, &prev, &estep, 1).unwrap();
    assert_abs_diff_eq!(d[(0, 0)], 4.5, epsilon = 1e-15);
}

#[test]
fn m_step_floors() {
    let design = design_with(&[2, 1], vec![0.0; 3]);
    let prev = EmState {
        b_hat: vec![vec![0.0]; 2],
        d_hat: m(&[&[0.0]]),
        sigma2: 1e-20,
    };
    let v_inv: Vec<Matrix> = design
        .clusters
        .iter()
        .map(|c| v_inverse(&c.z, &prev.d_hat, prev.sigma2).unwrap())
        .collect();
    let estep = estep_with(0.0, 1, vec![0.0; 3], vec![vec![0.0]; 2], v_inv);
    let (sigma2, d) = m_step(&design, &prev, &estep, 1).unwrap();
    assert_eq!(sigma2, 1e-12);
    assert_eq!(d[(0, 0)], 0.0);
}

#[test]
fn floor_psd_clamps_negative_diagonal() {
    assert_eq!(floor_psd(&m(&[&[-0.3]])).unwrap(), m(&[&[1e-12]]));
    let fixed = floor_psd(&m(&[&[1.0, 2.0], &[2.0, 1.0]])).unwrap();
    assert!(crate::numerics::cholesky_psd(&fixed, 1e-12).is_ok());
}

#[test]
fn gll_vanishes_for_perfect_unit_fit() {
    let design = design_with(&[1], vec![2.0]);
    let state = EmState::initial(1, 1, 1.0, 1.0);
    assert_eq!(compute_gll(&design, &[2.0], &state).unwrap(), 0.0);
}

#[test]
fn gll_unit_residual() {
    let design = design_with(&[1], vec![3.0]);
    let state = EmState::initial(1, 1, 1.0, 1.0);
    assert_abs_diff_eq!(compute_gll(&design, &[2.0], &state).unwrap(), 1.0, epsilon = 1e-15);
}

#[test]
fn gll_is_additive_over_clusters() {
    let y = vec![1.0, 2.5, -0.5];
    let one = design_with(&[2, 1], y.clone());
    let twice = design_with(&[2, 1, 2, 1], [y.clone(), y].concat());
    let fitted = [0.2, 1.0, 0.0];
    let state = EmState {
        b_hat: vec![vec![0.3], vec![-0.2]],
        d_hat: m(&[&[0.8]]),
        sigma2: 0.6,
    };
    let doubled = EmState {
        b_hat: [state.b_hat.clone(), state.b_hat.clone()].concat(),
        ..state.clone()
    };
    let a = compute_gll(&one, &fitted, &state).unwrap();
    let b = compute_gll(&twice, &[fitted, fitted].concat(), &doubled).unwrap();
    assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-12);
}

#[test]
fn one_iteration_is_one_e_and_one_m_step() {
    let ds = clustered_dataset(6, 5, 2.0, 1);
    let cfg = MerfConfig {
        max_iterations: 1,
        rf: small_rf(),
        ..MerfConfig::default()
    };
    let rng = RngStream::new(4, "fit");
    let model = fit_merf(&ds, &cfg, &rng).unwrap();

    let design = ClusterDesign::from_dataset(&ds, &cfg.re_spec).unwrap();
    let init = EmState::initial(design.n_clusters(), 1, 1.0, 1.0);
    let estep = e_step(&design, &init, &cfg.rf, &rng.child("em-iter-1")).unwrap();
    let (sigma2, d) = m_step(&design, &init, &estep, 1).unwrap();
    assert_eq!(model.forest(), &estep.forest);
    assert_eq!(model.sigma2_hat(), sigma2);
    assert_eq!(model.d_hat(), &d);
    for (block, b) in design.clusters.iter().zip(&estep.b_hat) {
        assert_eq!(model.random_effect(&block.id).unwrap(), b.as_slice());
    }
    assert_eq!(model.gll_history().len(), 1);
}

#[test]
fn fit_keeps_components_valid_and_is_deterministic() {
    let ds = clustered_dataset(8, 6, 3.0, 2);
    let cfg = MerfConfig {
        max_iterations: 6,
        early_stop: false,
        rf: small_rf(),
        ..MerfConfig::default()
    };
    let a = fit_merf(&ds, &cfg, &RngStream::new(1, "fit")).unwrap();
    let b = fit_merf(&ds, &cfg, &RngStream::new(1, "fit")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iterations(), 6);
    assert!(a.sigma2_hat() > 0.0);
    assert!(a.d_hat()[(0, 0)] >= 0.0);
    assert!(a.gll_history().iter().all(|g| g.is_finite()));
    assert_eq!(a.b_hat().len(), 8);
    assert_abs_diff_eq!(a.gll(&ds).unwrap(), *a.gll_history().last().unwrap(), epsilon = 1e-9);
}

#[test]
fn random_slope_model_fits() {
    let ds = clustered_dataset(8, 6, 1.0, 3);
    let cfg = MerfConfig {
        max_iterations: 4,
        rf: small_rf(),
        re_spec: RandomEffectSpec::Columns {
            indices: vec![1],
            intercept: true,
        },
        ..MerfConfig::default()
    };
    let model = fit_merf(&ds, &cfg, &RngStream::new(2, "fit")).unwrap();
    let d = model.d_hat();
    assert_eq!((d.rows(), d.cols()), (2, 2));
    assert!(d.is_symmetric(0.0));
    assert!(crate::numerics::cholesky_psd(d, 1e-12).is_ok());
    assert!(model.b_hat().values().all(|b| b.len() == 2));
}

#[test]
fn prediction_dispatch() {
    let ds = clustered_dataset(5, 4, 2.0, 4);
    let cfg = MerfConfig {
        max_iterations: 2,
        rf: small_rf(),
        ..MerfConfig::default()
    };
    let model = fit_merf(&ds, &cfg, &RngStream::new(3, "fit")).unwrap();
    let x = m(&[&[0.5, -0.2], &[-1.0, 1.0]]);
    let uncond = model.predict_unconditional(&x).unwrap();
    assert_eq!(uncond, model.forest().predict(&x).unwrap());

    let b = model.random_effect("c01").unwrap()[0];
    let cond = model.predict_conditional(&x, "c01").unwrap();
    for (c, u) in cond.iter().zip(&uncond) {
        assert_eq!(*c, u + b);
    }
    assert!(matches!(
        model.predict_conditional(&x, "nobody"),
        Err(MerfError::UnknownCluster(_))
    ));
    assert_eq!(model.predict_with_mode(&x, Some("c01")).unwrap(), (cond, PredictionMode::Conditional));
    assert_eq!(model.predict_with_mode(&x, None).unwrap(), (uncond.clone(), PredictionMode::Unconditional));
    assert_eq!(
        model.predict_with_mode(&x, Some("nobody")).unwrap(),
        (uncond, PredictionMode::Unconditional)
    );
    assert!(model.predict(&Matrix::zeros(1, 3), None).is_err());
}

#[test]
fn zero_effect_conditional_equals_unconditional() {
    let mut model = fit_merf(
        &clustered_dataset(3, 4, 1.0, 5),
        &MerfConfig {
            max_iterations: 1,
            rf: small_rf(),
            ..MerfConfig::default()
        },
        &RngStream::new(0, "fit"),
    )
    .unwrap();
    model.b_hat.insert("c00".into(), vec![0.0]);
    let x = m(&[&[0.1, 0.2]]);
    assert_eq!(model.predict_conditional(&x, "c00").unwrap(), model.predict_unconditional(&x).unwrap());
}

#[test]
fn constant_target_gives_constant_predictions() {
    let rows = (0..12)
        .map(|i| Observation {
            cluster_id: format!("c{}", i % 3),
            visit: i as u64,
            features: vec![Some(i as f64)],
            target: Some(7.0),
        })
        .collect();
    let ds = LongitudinalDataset::new(rows, 1, vec![], None).unwrap();
    let cfg = MerfConfig {
        max_iterations: 3,
        rf: RfHyperparams {
            n_trees: 10,
            max_features: MaxFeatures::All,
            ..RfHyperparams::default()
        },
        ..MerfConfig::default()
    };
    let model = fit_merf(&ds, &cfg, &RngStream::new(0, "fit")).unwrap();
    let p = model.predict_unconditional(&ds.design_matrix().unwrap()).unwrap();
    assert!(p.iter().all(|&v| v == 7.0));
}

#[test]
fn config_validation() {
    let mut cfg = MerfConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.max_iterations = 0;
    assert!(cfg.validate().is_err());
    cfg = MerfConfig {
        sigma2_init: 0.0,
        ..MerfConfig::default()
    };
    assert!(cfg.validate().is_err());
}
