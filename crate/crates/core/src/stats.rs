//! Sign-flip permutation test for "mean greater than zero" and Fisher's
//! method for combining p-values.

use serde::{Deserialize, Serialize};

use crate::error::{MerfError, Result};
use crate::numerics::{chi_square_survival, RngStream};

pub const DEFAULT_MAX_EXACT: usize = 20;
pub const DEFAULT_MC_RESAMPLES: usize = 10_000;

/// Smallest p-value passed on to Fisher's method.
pub const FISHER_P_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermResult {
    pub observed_mean: f64,
    pub p_value: f64,
    /// Sign patterns enumerated (exact) or drawn (Monte Carlo).
    pub resamples: usize,
    pub exact: bool,
}

/// One-tailed sign-flip test of the sample mean.
///
/// Counts permuted means that are `>=` the observed mean. Sums are compared
/// with a relative tolerance so that patterns equal to the observed one up to
/// rounding count as ties.
pub fn permutation_test_one_sample(
    values: &[f64],
    max_exact: usize,
    mc_resamples: usize,
    rng: &mut RngStream,
) -> Result<PermResult> {
    if values.is_empty() {
        return Err(MerfError::InvalidArgument("permutation test needs at least one value".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MerfError::InvalidArgument("permutation test input is not finite".into()));
    }
    let n = values.len();
    let observed: f64 = values.iter().sum();
    let scale: f64 = values.iter().map(|v| v.abs()).sum();
    let threshold = observed - 1e-12 * scale.max(1.0);
    let observed_mean = observed / n as f64;

    if n <= max_exact.min(62) {
        let patterns = 1u64 << n;
        let mut count = 0u64;
        for mask in 0..patterns {
            let s: f64 = values
                .iter()
                .enumerate()
                .map(|(i, &v)| if mask >> i & 1 == 1 { -v } else { v })
                .sum();
            if s >= threshold {
                count += 1;
            }
        }
        return Ok(PermResult {
            observed_mean,
            p_value: count as f64 / patterns as f64,
            resamples: patterns as usize,
            exact: true,
        });
    }

    if mc_resamples == 0 {
        return Err(MerfError::InvalidArgument("mc_resamples must be positive".into()));
    }
    let mut count = 0usize;
    for _ in 0..mc_resamples {
        let s: f64 = values.iter().map(|&v| if rng.coin() { -v } else { v }).sum();
        if s >= threshold {
            count += 1;
        }
    }
    Ok(PermResult {
        observed_mean,
        p_value: (1 + count) as f64 / (1 + mc_resamples) as f64,
        resamples: mc_resamples,
        exact: false,
    })
}

/// Monte Carlo version of the sign-flip test regardless of sample size.
pub fn permutation_test_monte_carlo(values: &[f64], mc_resamples: usize, rng: &mut RngStream) -> Result<PermResult> {
    permutation_test_one_sample(values, 0, mc_resamples, rng)
}

/// Fisher's method: survival of `χ²_{2k}` at `-2 Σ ln p`.
pub fn fisher_combine(p_values: &[f64]) -> Result<f64> {
    if p_values.is_empty() {
        return Err(MerfError::InvalidArgument("fisher_combine needs at least one p-value".into()));
    }
    let mut x = 0.0;
    for &p in p_values {
        if p.is_nan() || p > 1.0 || p < 0.0 {
            return Err(MerfError::InvalidArgument(format!("invalid p-value {p}")));
        }
        x -= 2.0 * p.max(FISHER_P_FLOOR).ln();
    }
    chi_square_survival(x, 2 * p_values.len() as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rng(label: &str) -> RngStream {
        RngStream::new(7, label)
    }

    #[test]
    fn all_ones_exact() {
        let r = permutation_test_one_sample(&[1.0, 1.0, 1.0], 20, 10_000, &mut rng("a")).unwrap();
        assert!(r.exact);
        assert_eq!(r.resamples, 8);
        assert_eq!(r.p_value, 0.125);
        assert_eq!(r.observed_mean, 1.0);
    }

    #[test]
    fn zero_is_p_one() {
        let r = permutation_test_one_sample(&[0.0], 20, 10_000, &mut rng("a")).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_errors() {
        assert!(permutation_test_one_sample(&[], 20, 100, &mut rng("a")).is_err());
    }

    /// Independent oracle: counts patterns by walking sign vectors recursively.
    fn exact_oracle(values: &[f64]) -> f64 {
        fn walk(v: &[f64], acc: f64, obs: f64, hits: &mut u64) {
            match v.split_first() {
                None => {
                    if acc >= obs - 1e-9 {
                        *hits += 1
                    }
                }
                Some((&h, t)) => {
                    walk(t, acc + h, obs, hits);
                    walk(t, acc - h, obs, hits);
                }
            }
        }
        let mut hits = 0;
        walk(values, 0.0, values.iter().sum(), &mut hits);
        hits as f64 / 2f64.powi(values.len() as i32)
    }

    #[test]
    fn exact_matches_recursive_oracle() {
        let mut r = rng("oracle");
        for _ in 0..30 {
            let n = 1 + r.below(10);
            let v: Vec<f64> = (0..n).map(|_| (r.standard_normal() * 4.0).round() / 2.0 + 0.3).collect();
            let got = permutation_test_one_sample(&v, 20, 0, &mut r).unwrap().p_value;
            assert_eq!(got, exact_oracle(&v), "{v:?}");
        }
    }

    #[test]
    fn monte_carlo_close_to_exact() {
        let mut gen = rng("mc-data");
        for k in 0..5 {
            let v: Vec<f64> = (0..10).map(|_| gen.standard_normal() + 0.3).collect();
            let exact = permutation_test_one_sample(&v, 20, 0, &mut gen).unwrap();
            let mc = permutation_test_monte_carlo(&v, 10_000, &mut rng(&format!("mc-{k}"))).unwrap();
            assert!(!mc.exact);
            assert!((exact.p_value - mc.p_value).abs() < 0.02, "{} vs {}", exact.p_value, mc.p_value);
        }
    }

    #[test]
    fn p_value_lower_bounds() {
        let r = permutation_test_one_sample(&[5.0; 4], 20, 0, &mut rng("a")).unwrap();
        assert_eq!(r.p_value, 1.0 / 16.0);
        let r = permutation_test_monte_carlo(&[5.0; 30], 99, &mut rng("b")).unwrap();
        assert!(r.p_value >= 1.0 / 100.0);
    }

    #[test]
    fn shifting_up_never_raises_p() {
        let mut gen = rng("shift");
        for _ in 0..20 {
            let v: Vec<f64> = (0..8).map(|_| gen.standard_normal()).collect();
            let p0 = permutation_test_one_sample(&v, 20, 0, &mut gen).unwrap().p_value;
            let up: Vec<f64> = v.iter().map(|x| x + 0.5).collect();
            let p1 = permutation_test_one_sample(&up, 20, 0, &mut gen).unwrap().p_value;
            assert!(p1 <= p0 + 1e-12);
        }
    }

    #[test]
    fn fisher_single_identity() {
        for p in [0.001, 0.05, 0.5, 0.99] {
            assert_abs_diff_eq!(fisher_combine(&[p]).unwrap(), p, epsilon = 1e-9);
        }
    }

    #[test]
    fn fisher_two_halves() {
        let x = -2.0 * 2.0 * 0.5f64.ln();
        let oracle = (-x / 2.0).exp() * (1.0 + x / 2.0);
        let got = fisher_combine(&[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.5966, epsilon = 1e-4);
    }

    #[test]
    fn fisher_clamps_tiny() {
        assert_abs_diff_eq!(fisher_combine(&[1e-30]).unwrap(), 1e-15, epsilon = 1e-24);
        assert_abs_diff_eq!(fisher_combine(&[0.0]).unwrap(), 1e-15, epsilon = 1e-24);
    }

    #[test]
    fn fisher_rejects_nan_and_empty() {
        assert!(fisher_combine(&[f64::NAN]).is_err());
        assert!(fisher_combine(&[]).is_err());
    }

    #[test]
    fn fisher_order_invariant_and_monotone() {
        let a = fisher_combine(&[0.1, 0.4, 0.7]).unwrap();
        let b = fisher_combine(&[0.7, 0.1, 0.4]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        assert!(fisher_combine(&[0.05, 0.4, 0.7]).unwrap() < a);
    }

    #[test]
    fn null_calibration() {
        let mut gen = rng("null");
        let rejections = (0..1000)
            .filter(|_| {
                let v: Vec<f64> = (0..10).map(|_| gen.standard_normal()).collect();
                permutation_test_one_sample(&v, 20, 0, &mut gen).unwrap().p_value <= 0.05
            })
            .count();
        let rate = rejections as f64 / 1000.0;
        assert!((0.03..=0.07).contains(&rate), "rate {rate}");
    }
}
