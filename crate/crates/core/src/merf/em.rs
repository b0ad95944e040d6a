//! The pieces of one EM iteration: per-cluster covariance inverses, the
//! E-step (forest refit on adjusted targets, random-effect posterior means),
//! the M-step variance updates, and the generalised log-likelihood.

use rayon::prelude::*;

use super::ClusterDesign;
use crate::error::{MerfError, Result};
use crate::forest::{fit_forest, RandomForestModel, RfHyperparams};
use crate::numerics::{cholesky_psd, logdet_spd, spd_inverse, Matrix, RngStream};

/// Clusters with at most this many rows invert `V_i` directly; larger ones
/// go through the Woodbury identity.
pub const DIRECT_INVERSE_MAX_ROWS: usize = 8;

pub(crate) const SIGMA2_FLOOR: f64 = 1e-12;
pub(crate) const D_DIAG_FLOOR: f64 = 1e-12;

/// Variance components and random effects carried between iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct EmState {
    /// One q-vector per cluster, in [`ClusterDesign`] order.
    pub b_hat: Vec<Vec<f64>>,
    pub d_hat: Matrix,
    pub sigma2: f64,
}

impl EmState {
    pub fn initial(n_clusters: usize, q: usize, d_init_scale: f64, sigma2_init: f64) -> Self {
        Self {
            b_hat: vec![vec![0.0; q]; n_clusters],
            d_hat: Matrix::identity(q).scale(d_init_scale),
            sigma2: sigma2_init,
        }
    }
}

/// Output of an E-step.
#[derive(Debug, Clone)]
pub struct EStep {
    pub forest: RandomForestModel,
    /// In-sample forest predictions `f̂(X)` for every training row.
    pub fitted: Vec<f64>,
    pub b_hat: Vec<Vec<f64>>,
    /// `V̂_i⁻¹` built from the previous iteration's `D̂`, `σ̂²`.
    pub v_inv: Vec<Matrix>,
}

/// `(Z D Zᵀ + σ² I)⁻¹` by factorising the full `n_i × n_i` matrix.
pub fn v_inverse_direct(z: &Matrix, d: &Matrix, sigma2: f64) -> Result<Matrix> {
    check_v_args(z, d, sigma2)?;
    let zd = z.matmul(d)?;
    let mut v = zd.matmul(&z.transpose())?;
    for i in 0..v.rows() {
        v[(i, i)] += sigma2;
    }
    spd_inverse(&v.symmetrized())
}

/// `(Z D Zᵀ + σ² I)⁻¹` via Woodbury: with `D = L Lᵀ` and `W = Z L`,
/// `V⁻¹ = σ⁻² (I − W (σ² I + WᵀW)⁻¹ Wᵀ)`. Only a `q × q` system is
/// factorised, and `D` may be singular.
pub fn v_inverse_woodbury(z: &Matrix, d: &Matrix, sigma2: f64) -> Result<Matrix> {
    check_v_args(z, d, sigma2)?;
    let l = cholesky_psd(&d.symmetrized(), 1e-14)?;
    let w = z.matmul(&l)?;
    let wt = w.transpose();
    let mut inner = wt.matmul(&w)?;
    for i in 0..inner.rows() {
        inner[(i, i)] += sigma2;
    }
    let inner_inv = spd_inverse(&inner.symmetrized())?;
    let correction = w.matmul(&inner_inv)?.matmul(&wt)?;
    let n = z.rows();
    let mut out = Matrix::identity(n).sub(&correction)?.scale(1.0 / sigma2);
    out = out.symmetrized();
    Ok(out)
}

/// `(Z D Zᵀ + σ² I)⁻¹`, choosing the direct or Woodbury path by cluster size.
pub fn v_inverse(z: &Matrix, d: &Matrix, sigma2: f64) -> Result<Matrix> {
    if z.rows() <= DIRECT_INVERSE_MAX_ROWS {
        // a singular D is still fine here since σ² I keeps V positive definite
        v_inverse_direct(z, d, sigma2)
    } else {
        v_inverse_woodbury(z, d, sigma2)
    }
}

fn check_v_args(z: &Matrix, d: &Matrix, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(MerfError::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !d.is_square() || d.rows() != z.cols() {
        return Err(MerfError::Dimension(format!(
            "Z is {}x{} but D is {}x{}",
            z.rows(),
            z.cols(),
            d.rows(),
            d.cols()
        )));
    }
    Ok(())
}

/// Posterior mean of a cluster's random effect, `D Zᵀ V⁻¹ r`.
pub fn random_effect_estimate(z: &Matrix, d: &Matrix, v_inv: &Matrix, resid: &[f64]) -> Result<Vec<f64>> {
    let vr = v_inv.mul_vec(resid)?;
    let ztvr = z.transpose().mul_vec(&vr)?;
    d.mul_vec(&ztvr)
}

/// One E-step:
/// 1. `Y*_i = Y_i − Z_i b̂_i` with the previous `b̂`;
/// 2. refit the forest on the pooled `(X, Y*)`;
/// 3. `b̂_i = D̂ Z_iᵀ V̂_i⁻¹ (Y_i − f̂(X_i))` with the previous `D̂`, `σ̂²`.
pub fn e_step(design: &ClusterDesign, state: &EmState, rf: &RfHyperparams, rng: &RngStream) -> Result<EStep> {
    let mut y_star = design.y.clone();
    for (block, b) in design.clusters.iter().zip(&state.b_hat) {
        let zb = block.z.mul_vec(b)?;
        for (&row, shift) in block.rows.iter().zip(zb) {
            y_star[row] -= shift;
        }
    }
    let forest = fit_forest(&design.x, &y_star, rf, rng)?;
    let fitted = forest.predict(&design.x)?;
    let (b_hat, v_inv) = update_random_effects(design, &fitted, &state.d_hat, state.sigma2)?;
    Ok(EStep {
        forest,
        fitted,
        b_hat,
        v_inv,
    })
}

/// Step (iii) of the E-step given forest predictions for every row.
pub fn update_random_effects(
    design: &ClusterDesign,
    fitted: &[f64],
    d: &Matrix,
    sigma2: f64,
) -> Result<(Vec<Vec<f64>>, Vec<Matrix>)> {
    design
        .clusters
        .par_iter()
        .map(|block| {
            let v_inv = v_inverse(&block.z, d, sigma2)?;
            let resid: Vec<f64> = block.rows.iter().map(|&r| design.y[r] - fitted[r]).collect();
            let b = random_effect_estimate(&block.z, d, &v_inv, &resid)?;
            Ok((b, v_inv))
        })
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}

/// Residuals `ε̂_i = Y_i − f̂(X_i) − Z_i b̂_i`, one vector per cluster.
pub fn cluster_residuals(design: &ClusterDesign, fitted: &[f64], b_hat: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    design
        .clusters
        .iter()
        .zip(b_hat)
        .map(|(block, b)| {
            let zb = block.z.mul_vec(b)?;
            Ok(block
                .rows
                .iter()
                .zip(zb)
                .map(|(&r, s)| design.y[r] - fitted[r] - s)
                .collect())
        })
        .collect()
}

/// M-step updates of `σ̂²` and `D̂`:
///
/// ```text
/// σ̂²(r) = N⁻¹ Σ_i [ ε̂_iᵀε̂_i + σ̂²(r−1) (n_i − σ̂²(r−1) tr V̂_i⁻¹) ]
/// D̂(r)  = m⁻¹ Σ_i [ b̂_i b̂_iᵀ + D̂(r−1) − D̂(r−1) Z_iᵀ V̂_i⁻¹ Z_i D̂(r−1) ]
/// ```
///
/// `V̂_i⁻¹` comes from the previous `D̂`, `σ̂²` (as used by the E-step). The
/// new `D̂` is symmetrised and floored to PSD, and `σ̂²` floored at 1e-12.
pub fn m_step(
    design: &ClusterDesign,
    prev: &EmState,
    estep: &EStep,
    iteration: usize,
) -> Result<(f64, Matrix)> {
    let resid = cluster_residuals(design, &estep.fitted, &estep.b_hat)?;
    let s_prev = prev.sigma2;
    let d_prev = &prev.d_hat;
    let q = d_prev.rows();
    let n_total = design.y.len() as f64;
    let m = design.clusters.len() as f64;

    let mut sigma_acc = 0.0;
    let mut d_acc = Matrix::zeros(q, q);
    for ((block, eps), (b, v_inv)) in design.clusters.iter().zip(&resid).zip(estep.b_hat.iter().zip(&estep.v_inv)) {
        let n_i = block.rows.len() as f64;
        let sse: f64 = eps.iter().map(|e| e * e).sum();
        sigma_acc += sse + s_prev * (n_i - s_prev * v_inv.trace());

        let dz = d_prev.matmul(&block.z.transpose())?;
        let shrink = dz.matmul(v_inv)?.matmul(&dz.transpose())?;
        let outer = Matrix::column(b).matmul(&Matrix::column(b).transpose())?;
        d_acc = d_acc.add(&outer.add(d_prev)?.sub(&shrink)?)?;
    }
    let sigma2 = sigma_acc / n_total;
    let d_new = d_acc.scale(1.0 / m);
    if !sigma2.is_finite() {
        return Err(MerfError::NonFinite {
            iteration,
            what: "sigma2".into(),
        });
    }
    if !d_new.all_finite() {
        return Err(MerfError::NonFinite {
            iteration,
            what: "D".into(),
        });
    }
    Ok((sigma2.max(SIGMA2_FLOOR), floor_psd(&d_new)?))
}

/// Symmetrises `d`, clamps negative diagonal entries to 1e-12 and, if the
/// result is still not PSD, adds a growing ridge until it is.
pub fn floor_psd(d: &Matrix) -> Result<Matrix> {
    let mut out = d.symmetrized();
    for i in 0..out.rows() {
        if out[(i, i)] < 0.0 {
            out[(i, i)] = D_DIAG_FLOOR;
        }
    }
    if out.rows() <= 1 || cholesky_psd(&out, 1e-12).is_ok() {
        return Ok(out);
    }
    let scale = out.trace().abs().max(1.0) / out.rows() as f64;
    let mut ridge = 1e-12 * scale;
    while ridge < scale {
        let mut trial = out.clone();
        for i in 0..trial.rows() {
            trial[(i, i)] += ridge;
        }
        if cholesky_psd(&trial, 1e-12).is_ok() {
            return Ok(trial);
        }
        ridge *= 10.0;
    }
    Err(MerfError::InvalidArgument("random-effect covariance cannot be made PSD".into()))
}

/// Inverse and log-determinant of an SPD matrix, adding a growing ridge
/// when the plain factorisation fails.
pub(crate) fn jittered_inverse_logdet(d: &Matrix) -> Result<(Matrix, f64)> {
    if let (Ok(inv), Ok(ld)) = (spd_inverse(d), logdet_spd(d)) {
        return Ok((inv, ld));
    }
    let q = d.rows().max(1) as f64;
    let scale = (d.trace().abs() / q).max(1.0);
    let mut ridge = 1e-12 * scale;
    let mut last_err = None;
    while ridge <= 1e-4 * scale {
        let mut trial = d.symmetrized();
        for i in 0..trial.rows() {
            trial[(i, i)] += ridge;
        }
        match (spd_inverse(&trial), logdet_spd(&trial)) {
            (Ok(inv), Ok(ld)) => return Ok((inv, ld)),
            (Err(e), _) | (_, Err(e)) => last_err = Some(e),
        }
        ridge *= 10.0;
    }
    Err(last_err.unwrap_or_else(|| MerfError::InvalidArgument("singular random-effect covariance".into())))
}

/// Generalised log-likelihood
/// `Σ_i [ ε̂_iᵀ R_i⁻¹ ε̂_i + b̂_iᵀ D̂⁻¹ b̂_i + log|D̂| + log|R_i| ]` with
/// `R_i = σ̂² I`.
pub fn compute_gll(design: &ClusterDesign, fitted: &[f64], state: &EmState) -> Result<f64> {
    if !(state.sigma2 > 0.0) {
        return Err(MerfError::InvalidArgument(format!("sigma2 must be positive, got {}", state.sigma2)));
    }
    let (d_inv, logdet_d) = jittered_inverse_logdet(&state.d_hat)?;
    let resid = cluster_residuals(design, fitted, &state.b_hat)?;
    let mut gll = 0.0;
    for (eps, b) in resid.iter().zip(&state.b_hat) {
        let n_i = eps.len() as f64;
        let sse: f64 = eps.iter().map(|e| e * e).sum();
        let quad: f64 = d_inv.mul_vec(b)?.iter().zip(b).map(|(a, c)| a * c).sum();
        gll += sse / state.sigma2 + quad + logdet_d + n_i * state.sigma2.ln();
    }
    Ok(gll)
}
