//! Distances between style representations.
//!
//! [`hellinger`] and [`style_similarity`] score how well a photo's style
//! matches an exemplar during ranking; [`frechet`] is the Wasserstein-2
//! distance between chroma Gaussians used to keep sampled styles apart.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mat2::{trace_sqrt_spd2, Mat2};
use crate::stylestats::{ChromaStats, LumaFeature, StyleDescriptor, LUMA_SAMPLES};

/// Added to the diagonal of a singular covariance before Hellinger evaluation.
const SINGULAR_RIDGE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("covariance is singular even after regularization")]
    SingularCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityParams {
    /// Bandwidth of the lightness kernel.
    pub lambda_l: f64,
    /// Bandwidth of the chroma kernel.
    pub lambda_c: f64,
    /// Offset added to each component of the mean difference.
    pub epsilon: f64,
    /// Divide the lightness distance by `√32`.
    #[serde(default)]
    pub normalize_luma: bool,
}

impl Default for SimilarityParams {
    fn default() -> Self {
        Self {
            lambda_l: 0.005,
            lambda_c: 0.05,
            epsilon: 1.0,
            normalize_luma: false,
        }
    }
}

impl SimilarityParams {
    pub fn violations(&self) -> Vec<String> {
        [
            ("lambda_l", self.lambda_l),
            ("lambda_c", self.lambda_c),
            ("epsilon", self.epsilon),
        ]
        .into_iter()
        .filter(|(_, v)| !(*v > 0.0 && v.is_finite()))
        .map(|(name, v)| format!("{name} must be > 0, got {v}"))
        .collect()
    }
}

fn ridge_if_singular(cov: &Mat2) -> Mat2 {
    let c = cov.symmetrize();
    if c.det() > 0.0 {
        c
    } else {
        c + Mat2::scaled_identity(SINGULAR_RIDGE)
    }
}

/// One minus the Bhattacharyya-style overlap coefficient of two Gaussians,
/// with the mean difference taken per component as `|μ_P − μ_S| + ε`.
///
/// The result lies in `[0, 1]`; identical inputs with `ε = 0` give 0.
pub fn hellinger(p: &ChromaStats, s: &ChromaStats, epsilon: f64) -> Result<f64, SimilarityError> {
    let cp = ridge_if_singular(&p.cov);
    let cs = ridge_if_singular(&s.cov);
    let avg = (cp + cs).scale(0.5);
    let det_avg = avg.det();
    if !(det_avg > 0.0) {
        return Err(SimilarityError::SingularCovariance);
    }
    let inv = avg.inverse().map_err(|_| SimilarityError::SingularCovariance)?;
    let mu = [
        (p.mean[0] - s.mean[0]).abs() + epsilon,
        (p.mean[1] - s.mean[1]).abs() + epsilon,
    ];
    let coefficient = (cp.det() * cs.det()).max(0.0).powf(0.25) / det_avg.sqrt();
    let exponent = -0.125 * inv.quad_form(mu);
    let d = 1.0 - coefficient * exponent.exp();
    if d.is_nan() {
        return Err(SimilarityError::SingularCovariance);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Euclidean distance between two lightness features.
pub fn luma_distance(a: &LumaFeature, b: &LumaFeature, normalize: bool) -> f64 {
    let sq: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    let d = sq.sqrt();
    if normalize {
        d / (LUMA_SAMPLES as f64).sqrt()
    } else {
        d
    }
}

/// `R = exp(−D_e²/λ_l) · exp(−D_h²/λ_c)`.
pub fn style_similarity(
    p: &StyleDescriptor,
    s: &StyleDescriptor,
    params: &SimilarityParams,
) -> Result<f64, SimilarityError> {
    let de = luma_distance(&p.luma, &s.luma, params.normalize_luma);
    let dh = hellinger(&p.chroma, &s.chroma, params.epsilon)?;
    Ok((-de * de / params.lambda_l).exp() * (-dh * dh / params.lambda_c).exp())
}

/// Wasserstein-2 (Fréchet) distance between two chroma Gaussians:
/// `√(‖μ_P − μ_Q‖² + tr[Σ_P + Σ_Q − 2(Σ_P Σ_Q)^{1/2}])`.
///
/// The cross term uses `tr (Σ_P^{1/2} Σ_Q Σ_P^{1/2})^{1/2}`, evaluated in
/// closed form from the trace and determinant of `Σ_P Σ_Q`.
pub fn frechet(p: &ChromaStats, q: &ChromaStats) -> f64 {
    if p == q {
        return 0.0;
    }
    let (a, b) = (p.cov.symmetrize(), q.cov.symmetrize());
    let dm = [p.mean[0] - q.mean[0], p.mean[1] - q.mean[1]];
    let mean_term = dm[0] * dm[0] + dm[1] * dm[1];
    // tr(AB) written symmetrically in A and B
    let tr_prod = a.get(0, 0) * b.get(0, 0) + a.get(1, 1) * b.get(1, 1) + 2.0 * a.get(0, 1) * b.get(0, 1);
    let det_prod = a.det().max(0.0) * b.det().max(0.0);
    let cross = trace_sqrt_spd2(tr_prod, det_prod);
    let trace_term = (a.trace() + b.trace() - 2.0 * cross).max(0.0);
    (mean_term + trace_term).sqrt()
}
