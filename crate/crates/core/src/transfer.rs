//! Robust global style transfer.
//!
//! Chrominance is moved with the linear Monge-Kantorovich map between the
//! input and style Gaussians, after flooring the input covariance diagonal so
//! that low-variation inputs cannot receive explosive gains. Lightness is
//! remapped with a two-parameter arctan curve fitted to a damped version of
//! the style's percentile feature. Dark faces are optionally brightened with
//! a soft, locally weighted gamma correction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::{lab_to_srgb, lab_to_srgb_mapped, srgb_to_lab, stretch_luminance, ColorError, LabImage};
use crate::imgio::RgbImage;
use crate::mat2::{sqrt_spd2, Mat2, MatrixError, Vec2};
use crate::quantile::quantile_select;
use crate::stylestats::{style_descriptor, ChromaStats, LumaFeature, StatsError, StyleDescriptor, LUMA_SAMPLES};

/// Smallest allowed tone-curve stretch scale.
pub const DELTA_MIN: f64 = 0.01;
/// Upper end of the δ search range.
pub const DELTA_MAX: f64 = 4.0;
/// Largest correlation magnitude kept after covariance regularization.
pub const MAX_CORRELATION: f64 = 0.999;
/// Entries in the lightness lookup table used by [`apply_tone`].
pub const TONE_LUT_SIZE: usize = 4096;

/// Spacing of the sweep along `ln δ`.
const SWEEP_DS: f64 = 0.125;
/// Sweep spacing along `m` is `δ` times this, but never above 1/32.
const SWEEP_DM_PER_DELTA: f64 = 0.5;
/// Distinct sweep points polished before the box search starts.
const POLISH_BEAM: usize = 8;
/// Boxes per axis in the initial partition of the search domain.
const BOX_SPLIT: usize = 8;
/// A box is discarded once its lower bound is within this of the incumbent.
/// The interval bound is first order, so much tighter values make flat
/// regions of the cost explode into millions of boxes.
const BOUND_TOL: f64 = 1e-3;
/// Cap on boxes split per fit; keeps the worst case near a few ms.
const MAX_BOXES: usize = 2000;
/// Spatial face weights below this are treated as zero.
const FACE_WEIGHT_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("regularized input covariance is singular")]
    SingularCovariance,
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid face region: {0}")]
    InvalidFace(String),
    #[error("malformed faces document: {0}")]
    FacesJson(#[from] serde_json::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Color(#[from] ColorError),
}

// ---------------------------------------------------------------------------
// chrominance

/// `c ↦ T·(c − mu_in) + mu_style` on the (a, b) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaMap {
    pub t: Mat2,
    pub mu_in: Vec2,
    pub mu_style: Vec2,
}

impl ChromaMap {
    pub fn identity(mean: Vec2) -> Self {
        Self {
            t: Mat2::IDENTITY,
            mu_in: mean,
            mu_style: mean,
        }
    }

    pub fn apply_pixel(&self, c: Vec2) -> Vec2 {
        let d = self.t.apply([c[0] - self.mu_in[0], c[1] - self.mu_in[1]]);
        [d[0] + self.mu_style[0], d[1] + self.mu_style[1]]
    }
}

/// Floors each diagonal entry at `lambda_r`, keeping the correlation
/// coefficient (clamped to ±[`MAX_CORRELATION`]).
pub fn regularize_covariance(cov: &Mat2, lambda_r: f64) -> Mat2 {
    let (xx, xy, yy) = (cov.get(0, 0), 0.5 * (cov.get(0, 1) + cov.get(1, 0)), cov.get(1, 1));
    let (rx, ry) = (xx.max(lambda_r), yy.max(lambda_r));
    let denom = (xx * yy).sqrt();
    let rho = if denom > 0.0 { xy / denom } else { 0.0 };
    let lifted = rx != xx || ry != yy;
    let off = if !lifted && rho.abs() <= MAX_CORRELATION {
        xy
    } else {
        rho.clamp(-MAX_CORRELATION, MAX_CORRELATION) * (rx * ry).sqrt()
    };
    Mat2::symmetric(rx, off, ry)
}

/// Builds the regularized linear chroma map from `input` to `style`:
/// `T = A^{-1/2} (A^{1/2} Σ_S A^{1/2})^{1/2} A^{-1/2}` with `A` the
/// regularized input covariance.
pub fn chroma_transform(input: &ChromaStats, style: &ChromaStats, lambda_r: f64) -> Result<ChromaMap, TransferError> {
    if !(lambda_r >= 0.0) {
        return Err(TransferError::InvalidParams(format!("lambda_r = {lambda_r}")));
    }
    let a = regularize_covariance(&input.cov, lambda_r);
    if !(a.det() > 0.0) {
        return Err(TransferError::SingularCovariance);
    }
    let a_half = sqrt_spd2(&a)?;
    let a_inv_half = a_half.inverse().map_err(|_| TransferError::SingularCovariance)?;
    let middle = (a_half * style.cov.symmetrize() * a_half).symmetrize();
    let t = (a_inv_half * sqrt_spd2(&middle)? * a_inv_half).symmetrize();
    if !t.is_finite() {
        return Err(TransferError::SingularCovariance);
    }
    Ok(ChromaMap {
        t,
        mu_in: input.mean,
        mu_style: style.mean,
    })
}

pub fn apply_chroma_in_place(img: &mut LabImage, map: &ChromaMap) {
    let LabImage { a, b, .. } = img;
    a.par_iter_mut().zip(b.par_iter_mut()).for_each(|(a, b)| {
        let [na, nb] = map.apply_pixel([*a, *b]);
        *a = na;
        *b = nb;
    });
}

/// Applies `map` to every pixel's chrominance; lightness is unchanged.
pub fn apply_chroma(img: &LabImage, map: &ChromaMap) -> LabImage {
    let mut out = img.clone();
    apply_chroma_in_place(&mut out, map);
    out
}

// ---------------------------------------------------------------------------
// lightness

/// Parameters of the arctan tone curve: inflection point `m` and stretch
/// scale `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneCurveParams {
    pub m: f64,
    pub delta: f64,
}

impl ToneCurveParams {
    pub fn new(m: f64, delta: f64) -> Result<Self, TransferError> {
        if !(0.0..=1.0).contains(&m) || !(delta >= DELTA_MIN) || !delta.is_finite() {
            return Err(TransferError::InvalidParams(format!(
                "tone curve needs 0 <= m <= 1 and delta >= {DELTA_MIN}, got m={m} delta={delta}"
            )));
        }
        Ok(Self { m, delta })
    }

    fn curve(&self) -> ToneCurve {
        let offset = (self.m / self.delta).atan();
        let span = offset + ((1.0 - self.m) / self.delta).atan();
        ToneCurve {
            m: self.m,
            inv_delta: 1.0 / self.delta,
            offset,
            inv_span: 1.0 / span,
        }
    }
}

/// Precomputed constants of one tone curve.
struct ToneCurve {
    m: f64,
    inv_delta: f64,
    offset: f64,
    inv_span: f64,
}

impl ToneCurve {
    fn eval(&self, l: f64) -> f64 {
        (self.offset + ((l - self.m) * self.inv_delta).atan()) * self.inv_span
    }
}

/// `g(l) = [atan(m/δ) + atan((l − m)/δ)] / [atan(m/δ) + atan((1 − m)/δ)]`.
pub fn tone_curve_eval(params: &ToneCurveParams, l: f64) -> f64 {
    let m = params.m;
    let d = params.delta;
    ((m / d).atan() + ((l - m) / d).atan()) / ((m / d).atan() + ((1.0 - m) / d).atan())
}

/// How the fitting target interpolates between input and style features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToneTarget {
    /// Move toward the style by at most `tau` in sup-norm.
    #[default]
    Capped,
    /// Scale the displacement by `tau / min(tau, ‖L_S − L_I‖∞)`.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneFitConfig {
    pub tau: f64,
    pub target: ToneTarget,
}

impl Default for ToneFitConfig {
    fn default() -> Self {
        Self {
            tau: 0.4,
            target: ToneTarget::Capped,
        }
    }
}

/// The damped lightness feature the tone curve is fitted to.
pub fn tone_target(l_in: &LumaFeature, l_style: &LumaFeature, cfg: &ToneFitConfig) -> [f64; LUMA_SAMPLES] {
    let (li, ls) = (l_in.values(), l_style.values());
    let sup = li.iter().zip(ls).fold(0.0_f64, |m, (a, b)| m.max((b - a).abs()));
    let factor = if sup == 0.0 {
        0.0
    } else {
        match cfg.target {
            ToneTarget::Capped => (cfg.tau / cfg.tau.max(sup)).min(1.0),
            ToneTarget::Literal => cfg.tau / cfg.tau.min(sup),
        }
    };
    let mut out = [0.0; LUMA_SAMPLES];
    for i in 0..LUMA_SAMPLES {
        out[i] = li[i] + (ls[i] - li[i]) * factor;
    }
    out
}

/// Sum of squared residuals `Σ (g(L_I[i]) − target[i])²`.
pub fn tone_fit_cost(params: &ToneCurveParams, l_in: &LumaFeature, target: &[f64; LUMA_SAMPLES]) -> f64 {
    let curve = params.curve();
    l_in.values()
        .iter()
        .zip(target)
        .map(|(&l, &t)| {
            let r = curve.eval(l) - t;
            r * r
        })
        .sum()
}

fn linspace(lo: f64, hi: f64, steps: usize) -> impl Iterator<Item = f64> {
    (0..steps).map(move |i| {
        if i + 1 == steps {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (steps - 1) as f64
        }
    })
}

struct SweepPoint {
    cost: f64,
    x: [f64; 2],
}

/// Evaluates the cost on rows of constant `ln δ` and returns the discrete
/// local minima, best first. Curves with small δ are nearly steps whose good
/// `m` values form narrow bands, so the `m` spacing shrinks with δ.
fn sweep(obj: &ToneObjective) -> Vec<SweepPoint> {
    let n_rows = ((LOG_DELTA_MAX - LOG_DELTA_MIN) / SWEEP_DS).ceil() as usize + 1;
    let rows: Vec<(f64, Vec<f64>)> = linspace(LOG_DELTA_MIN, LOG_DELTA_MAX, n_rows)
        .map(|s| {
            let steps = (1.0 / (SWEEP_DM_PER_DELTA * s.exp()).min(1.0 / 32.0)).ceil() as usize + 1;
            let costs = linspace(0.0, 1.0, steps).map(|m| obj.cost([m, s])).collect();
            (s, costs)
        })
        .collect();
    let m_of = |row: &[f64], i: usize| i as f64 / (row.len() - 1) as f64;
    let mut minima = Vec::new();
    for (r, (s, row)) in rows.iter().enumerate() {
        for (i, &c) in row.iter().enumerate() {
            let m = m_of(row, i);
            let mut is_min = (i == 0 || row[i - 1] >= c) && (i + 1 == row.len() || row[i + 1] >= c);
            for adj in [r.wrapping_sub(1), r + 1] {
                let Some((_, other)) = rows.get(adj) else { continue };
                let pos = m * (other.len() - 1) as f64;
                is_min &= other[pos.floor() as usize] >= c && other[pos.ceil() as usize] >= c;
            }
            if is_min {
                minima.push(SweepPoint { cost: c, x: [m, *s] });
            }
        }
    }
    // stable sort: equal costs keep sweep order
    minima.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    minima
}

/// Tone fit objective over `(m, ln δ)`.
struct ToneObjective<'a> {
    l: &'a [f64; LUMA_SAMPLES],
    target: &'a [f64; LUMA_SAMPLES],
}

const LOG_DELTA_MIN: f64 = -4.605_170_185_988_091; // ln 0.01
const LOG_DELTA_MAX: f64 = 1.386_294_361_119_890_6; // ln 4

fn params_at(x: [f64; 2]) -> ToneCurveParams {
    ToneCurveParams {
        m: x[0],
        delta: x[1].exp().clamp(DELTA_MIN, DELTA_MAX),
    }
}

fn clamp_point(x: [f64; 2]) -> [f64; 2] {
    [x[0].clamp(0.0, 1.0), x[1].clamp(LOG_DELTA_MIN, LOG_DELTA_MAX)]
}

impl ToneObjective<'_> {
    fn residuals(&self, x: [f64; 2]) -> [f64; LUMA_SAMPLES] {
        let curve = params_at(x).curve();
        std::array::from_fn(|i| curve.eval(self.l[i]) - self.target[i])
    }

    fn cost(&self, x: [f64; 2]) -> f64 {
        self.residuals(x).iter().map(|r| r * r).sum()
    }

    /// Lower bound of the cost over the box `m ∈ [m0, m1]`, `ln δ ∈ [s0, s1]`
    /// by interval arithmetic on
    /// `g = (A + B) / (A + C) = 1 − (C − B) / (A + C)` with `A = atan(m/δ)`,
    /// `B = atan((l − m)/δ)`, `C = atan((1 − m)/δ)`.
    fn lower_bound(&self, b: &SearchBox) -> f64 {
        let (d0, d1) = (b.s0.exp(), b.s1.exp());
        let span = |n0: f64, n1: f64| {
            let (lo, hi) = div_by_positive(n0, n1, d0, d1);
            (lo.atan(), hi.atan())
        };
        let (a0, a1) = span(b.m0, b.m1);
        let (c0, c1) = span(1.0 - b.m1, 1.0 - b.m0);
        let (den0, den1) = (a0 + c0, a1 + c1);
        let mut lb = 0.0;
        for (&l, &t) in self.l.iter().zip(self.target) {
            let (mut g0, mut g1) = (0.0f64, 1.0f64);
            if den0 > 0.0 {
                let (b0, b1) = span(l - b.m1, l - b.m0);
                let (n0, n1) = div_by_positive((a0 + b0).max(0.0), a1 + b1, den0, den1);
                let (r0, r1) = div_by_positive((c0 - b1).max(0.0), c1 - b0, den0, den1);
                g0 = g0.max(n0).max(1.0 - r1);
                g1 = g1.min(n1).min(1.0 - r0);
            }
            let gap = if t < g0 {
                g0 - t
            } else if t > g1 {
                t - g1
            } else {
                0.0
            };
            lb += gap * gap;
        }
        lb
    }

    /// Bounded Levenberg-Marquardt descent from `x`; returns the final point
    /// and its cost, never worse than the start.
    fn polish(&self, x: [f64; 2]) -> ([f64; 2], f64) {
        const H: f64 = 1e-7;
        let lower = [0.0, LOG_DELTA_MIN];
        let upper = [1.0, LOG_DELTA_MAX];
        let mut x = clamp_point(x);
        let mut r = self.residuals(x);
        let mut cost: f64 = r.iter().map(|v| v * v).sum();
        let mut lambda = 1e-3;
        for _ in 0..100 {
            let mut jac = [[0.0; LUMA_SAMPLES]; 2];
            for (j, col) in jac.iter_mut().enumerate() {
                let mut xp = x;
                let h = if x[j] + H <= upper[j] { H } else { -H };
                xp[j] += h;
                let rp = self.residuals(xp);
                for i in 0..LUMA_SAMPLES {
                    col[i] = (rp[i] - r[i]) / h;
                }
            }
            let dot =
                |u: &[f64; LUMA_SAMPLES], v: &[f64; LUMA_SAMPLES]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum() };
            let grad = [dot(&jac[0], &r), dot(&jac[1], &r)];
            let hess = [
                [dot(&jac[0], &jac[0]), dot(&jac[0], &jac[1])],
                [dot(&jac[0], &jac[1]), dot(&jac[1], &jac[1])],
            ];
            // a coordinate on its bound whose descent direction points out is frozen
            let free: [bool; 2] =
                std::array::from_fn(|j| !((x[j] <= lower[j] && grad[j] > 0.0) || (x[j] >= upper[j] && grad[j] < 0.0)));
            let mut improved = false;
            while lambda < 1e12 {
                let step = lm_step(&hess, &grad, free, lambda);
                let xn = clamp_point([x[0] + step[0], x[1] + step[1]]);
                let rn = self.residuals(xn);
                let cn: f64 = rn.iter().map(|v| v * v).sum();
                if cn < cost {
                    let gain = cost - cn;
                    (x, r, cost) = (xn, rn, cn);
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = gain > 1e-15 * cost.max(1e-300);
                    break;
                }
                lambda *= 4.0;
            }
            if !improved {
                break;
            }
        }
        (x, cost)
    }
}

fn div_by_positive(n0: f64, n1: f64, d0: f64, d1: f64) -> (f64, f64) {
    let lo = if n0 >= 0.0 { n0 / d1 } else { n0 / d0 };
    let hi = if n1 >= 0.0 { n1 / d0 } else { n1 / d1 };
    (lo, hi)
}

/// Solves `(H + λ diag H) Δ = −g` over the free coordinates.
fn lm_step(hess: &[[f64; 2]; 2], grad: &[f64; 2], free: [bool; 2], lambda: f64) -> [f64; 2] {
    let damp = |j: usize| hess[j][j] * (1.0 + lambda) + lambda * 1e-12;
    match free {
        [true, true] => {
            let (a, d) = (damp(0), damp(1));
            let c = hess[0][1];
            let det = a * d - c * c;
            if !(det > 0.0) {
                return [0.0, 0.0];
            }
            [(-grad[0] * d + grad[1] * c) / det, (grad[0] * c - grad[1] * a) / det]
        }
        [true, false] => [-grad[0] / damp(0), 0.0],
        [false, true] => [0.0, -grad[1] / damp(1)],
        [false, false] => [0.0, 0.0],
    }
}

#[derive(Clone, Copy)]
struct SearchBox {
    m0: f64,
    m1: f64,
    s0: f64,
    s1: f64,
    lb: f64,
}

impl SearchBox {
    fn center(&self) -> [f64; 2] {
        [0.5 * (self.m0 + self.m1), 0.5 * (self.s0 + self.s1)]
    }

    /// Halves the longer side, measured relative to the domain.
    fn split(&self) -> [SearchBox; 2] {
        let (mut a, mut b) = (*self, *self);
        if self.m1 - self.m0 >= (self.s1 - self.s0) / (LOG_DELTA_MAX - LOG_DELTA_MIN) {
            let mid = 0.5 * (self.m0 + self.m1);
            (a.m1, b.m0) = (mid, mid);
        } else {
            let mid = 0.5 * (self.s0 + self.s1);
            (a.s1, b.s0) = (mid, mid);
        }
        [a, b]
    }
}

/// Min-heap entry ordered by lower bound, ties by insertion order.
struct Pending {
    lb: f64,
    seq: usize,
    b: SearchBox,
}

impl PartialEq for Pending {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == std::cmp::Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Pending {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.lb.total_cmp(&self.lb).then(o.seq.cmp(&self.seq))
    }
}

/// Fits `(m, δ)` over `m ∈ [0, 1]`, `δ ∈ [0.01, 4]` by branch-and-bound.
///
/// A sweep whose `m` spacing follows δ finds the local minima of the cost;
/// the best few are polished by bounded Levenberg-Marquardt. Boxes in
/// `(m, ln δ)` are then explored best-first by an interval lower bound and
/// any box whose center beats the incumbent is polished from there. The
/// search ends when no box can improve on the incumbent by more than
/// `BOUND_TOL`, or at the box cap.
pub fn fit_tone_curve(
    l_in: &LumaFeature,
    l_style: &LumaFeature,
    cfg: &ToneFitConfig,
) -> Result<ToneCurveParams, TransferError> {
    if !(cfg.tau > 0.0) {
        return Err(TransferError::InvalidParams(format!("tau = {}", cfg.tau)));
    }
    let target = tone_target(l_in, l_style, cfg);
    let obj = ToneObjective {
        l: l_in.values(),
        target: &target,
    };

    let seeds = sweep(&obj);
    let (mut best_x, mut best) = (seeds[0].x, seeds[0].cost);
    for p in seeds.iter().take(POLISH_BEAM) {
        let (px, pc) = obj.polish(p.x);
        if pc < best {
            (best_x, best) = (px, pc);
        }
    }

    let mut heap = std::collections::BinaryHeap::new();
    let mut seq = 0;
    let ms: Vec<f64> = linspace(0.0, 1.0, BOX_SPLIT + 1).collect();
    let ss: Vec<f64> = linspace(LOG_DELTA_MIN, LOG_DELTA_MAX, BOX_SPLIT + 1).collect();
    for i in 0..BOX_SPLIT {
        for j in 0..BOX_SPLIT {
            let mut b = SearchBox {
                m0: ms[i],
                m1: ms[i + 1],
                s0: ss[j],
                s1: ss[j + 1],
                lb: 0.0,
            };
            b.lb = obj.lower_bound(&b);
            heap.push(Pending { lb: b.lb, seq, b });
            seq += 1;
        }
    }
    let mut examined = 0;
    while let Some(Pending { b, .. }) = heap.pop() {
        if b.lb >= best - BOUND_TOL || examined >= MAX_BOXES {
            break;
        }
        examined += 1;
        for mut child in b.split() {
            child.lb = obj.lower_bound(&child);
            if child.lb >= best - BOUND_TOL {
                continue;
            }
            let c = child.center();
            if obj.cost(c) < best {
                let (px, pc) = obj.polish(c);
                if pc < best {
                    (best_x, best) = (px, pc);
                }
            }
            heap.push(Pending {
                lb: child.lb,
                seq,
                b: child,
            });
            seq += 1;
        }
    }
    if examined >= MAX_BOXES {
        log::debug!(
            "tone fit stopped at the box cap with bound gap {:.2e}",
            best - heap.peek().map_or(best, |p| p.lb)
        );
    }
    let p = params_at(best_x);
    ToneCurveParams::new(p.m, p.delta)
}

/// Tabulated tone curve with linear interpolation; endpoints are exact.
pub struct ToneLut {
    table: Vec<f64>,
}

impl ToneLut {
    pub fn new(params: &ToneCurveParams) -> Self {
        let curve = params.curve();
        let last = TONE_LUT_SIZE - 1;
        let mut table: Vec<f64> = (0..TONE_LUT_SIZE).map(|i| curve.eval(i as f64 / last as f64)).collect();
        table[0] = 0.0;
        table[last] = 1.0;
        for i in 1..TONE_LUT_SIZE {
            table[i] = table[i].max(table[i - 1]);
        }
        Self { table }
    }

    pub fn eval(&self, l: f64) -> f64 {
        let last = TONE_LUT_SIZE - 1;
        let pos = l.clamp(0.0, 1.0) * last as f64;
        let i = (pos as usize).min(last - 1);
        let frac = pos - i as f64;
        self.table[i] + frac * (self.table[i + 1] - self.table[i])
    }
}

pub fn apply_tone_in_place(img: &mut LabImage, params: &ToneCurveParams) {
    let lut = ToneLut::new(params);
    img.l.par_iter_mut().for_each(|l| *l = lut.eval(*l));
}

/// Remaps lightness through the tone curve; chrominance is unchanged.
pub fn apply_tone(img: &LabImage, params: &ToneCurveParams) -> LabImage {
    let mut out = img.clone();
    apply_tone_in_place(&mut out, params);
    out
}

// ---------------------------------------------------------------------------
// faces

/// A detected face: pixel center and radius, as supplied by an external
/// detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceRegion {
    pub cx: u32,
    pub cy: u32,
    pub r: u32,
}

impl FaceRegion {
    pub fn validate(&self, width: u32, height: u32) -> Result<(), TransferError> {
        if self.r == 0 {
            return Err(TransferError::InvalidFace(format!("{self:?}: radius must be positive")));
        }
        if self.cx >= width || self.cy >= height {
            return Err(TransferError::InvalidFace(format!(
                "{self:?}: center outside {width}x{height} image"
            )));
        }
        Ok(())
    }
}

/// Parses a faces document: `[{"cx": int, "cy": int, "r": int}, ...]`.
pub fn parse_faces(json: &str) -> Result<Vec<FaceRegion>, TransferError> {
    Ok(serde_json::from_str(json)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceCorrectionConfig {
    /// Median face lightness below which correction triggers.
    pub l_th: f64,
    /// Smallest gamma, i.e. the strongest allowed correction.
    pub gamma_th: f64,
    pub alpha_r: f64,
    pub alpha_c: f64,
}

impl Default for FaceCorrectionConfig {
    fn default() -> Self {
        Self {
            l_th: 0.3,
            gamma_th: 0.5,
            alpha_r: 0.45,
            alpha_c: 0.001,
        }
    }
}

struct FaceStats {
    face: FaceRegion,
    gamma: f64,
    chroma: Vec2,
}

fn face_stats(img: &LabImage, face: &FaceRegion, cfg: &FaceCorrectionConfig) -> Option<FaceStats> {
    let x0 = face.cx.saturating_sub(face.r);
    let y0 = face.cy.saturating_sub(face.r);
    let x1 = face.cx.saturating_add(face.r).min(img.width() - 1);
    let y1 = face.cy.saturating_add(face.r).min(img.height() - 1);
    let cap = ((x1 - x0 + 1) * (y1 - y0 + 1)) as usize;
    let (mut ls, mut as_, mut bs) = (
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    );
    for y in y0..=y1 {
        for x in x0..=x1 {
            let i = img.index(x, y);
            ls.push(img.l[i]);
            as_.push(img.a[i]);
            bs.push(img.b[i]);
        }
    }
    let median_l = quantile_select(&mut ls, 0.5);
    if median_l >= cfg.l_th {
        return None;
    }
    let gamma = cfg.gamma_th.max(0.65 * median_l / cfg.l_th);
    let chroma = [quantile_select(&mut as_, 0.5), quantile_select(&mut bs, 0.5)];
    Some(FaceStats {
        face: *face,
        gamma,
        chroma,
    })
}

/// Brightens faces whose median lightness falls below `cfg.l_th`.
///
/// Each triggered face blends `L` toward `L^γ` with weight
/// `exp(−α_r‖(x − p)/r‖²)·exp(−α_c‖c(x) − c̄‖²)`. Trigger statistics are
/// measured on the uncorrected image. Corrected lightness never decreases.
pub fn correct_face_exposure(img: &LabImage, faces: &[FaceRegion], cfg: &FaceCorrectionConfig) -> LabImage {
    let mut out = img.clone();
    correct_face_exposure_in_place(&mut out, faces, cfg);
    out
}

pub fn correct_face_exposure_in_place(img: &mut LabImage, faces: &[FaceRegion], cfg: &FaceCorrectionConfig) {
    let triggered: Vec<FaceStats> = faces
        .iter()
        .filter(|f| f.r > 0 && f.cx < img.width() && f.cy < img.height())
        .filter_map(|f| face_stats(img, f, cfg))
        .collect();
    let width = img.width() as usize;
    for stats in triggered {
        let (px, py) = (stats.face.cx as f64, stats.face.cy as f64);
        let inv_r2 = 1.0 / (stats.face.r as f64 * stats.face.r as f64);
        let LabImage { l, a, b, .. } = img;
        l.par_iter_mut().enumerate().for_each(|(i, lv)| {
            let (x, y) = ((i % width) as f64, (i / width) as f64);
            let d2 = ((x - px).powi(2) + (y - py).powi(2)) * inv_r2;
            let spatial = (-cfg.alpha_r * d2).exp();
            if spatial < FACE_WEIGHT_CUTOFF {
                return;
            }
            let dc2 = (a[i] - stats.chroma[0]).powi(2) + (b[i] - stats.chroma[1]).powi(2);
            let w = spatial * (-cfg.alpha_c * dc2).exp();
            let lift = (lv.powf(stats.gamma) - *lv).max(0.0);
            *lv = (*lv + w * lift).min(1.0);
        });
    }
}

// ---------------------------------------------------------------------------
// full pipeline

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub gamma: f64,
    /// Compress with `v^γ` instead of `v^(1/γ)`.
    pub invert_gamma: bool,
    pub clip_fraction: f64,
    pub lambda_r: f64,
    pub tone: ToneFitConfig,
    pub face: FaceCorrectionConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            gamma: 2.2,
            invert_gamma: false,
            clip_fraction: 0.005,
            lambda_r: 7.5,
            tone: ToneFitConfig::default(),
            face: FaceCorrectionConfig::default(),
        }
    }
}

impl TransferConfig {
    /// The exponent handed to the color conversions.
    pub fn effective_gamma(&self) -> f64 {
        if self.invert_gamma {
            1.0 / self.gamma
        } else {
            self.gamma
        }
    }

    /// Every out-of-range field, reported together.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            v.push(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(0.0..0.5).contains(&self.clip_fraction) {
            v.push(format!("clip must lie in [0, 0.5), got {}", self.clip_fraction));
        }
        if !(self.lambda_r >= 0.0) {
            v.push(format!("lambda_r must be >= 0, got {}", self.lambda_r));
        }
        if !(self.tone.tau > 0.0) {
            v.push(format!("tau must be > 0, got {}", self.tone.tau));
        }
        let f = &self.face;
        if !(f.l_th > 0.0 && f.l_th <= 1.0) {
            v.push(format!("l_th must lie in (0, 1], got {}", f.l_th));
        }
        for (name, val) in [("gamma_th", f.gamma_th), ("alpha_r", f.alpha_r), ("alpha_c", f.alpha_c)] {
            if !(val > 0.0) {
                v.push(format!("{name} must be > 0, got {val}"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), TransferError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(TransferError::InvalidParams(v.join("; ")))
        }
    }
}

/// Converts to Lab and stretches lightness. A constant-lightness image is
/// passed through unstretched.
pub fn preprocess(rgb: &RgbImage, cfg: &TransferConfig) -> Result<(LabImage, bool), TransferError> {
    let lab = srgb_to_lab(rgb, cfg.effective_gamma());
    match stretch_luminance(&lab, cfg.clip_fraction) {
        Ok(stretched) => Ok((stretched, true)),
        Err(ColorError::DegenerateLuminance(level)) => {
            log::warn!("constant luminance ({level:.4}); skipping stretch");
            Ok((lab, false))
        }
        Err(e) => Err(e.into()),
    }
}

/// Style descriptor of an image after preprocessing.
pub fn describe_image(rgb: &RgbImage, cfg: &TransferConfig) -> Result<StyleDescriptor, TransferError> {
    let (lab, _) = preprocess(rgb, cfg)?;
    Ok(style_descriptor(&lab)?)
}

/// A preprocessed input, reusable across several styles.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub lab: LabImage,
    pub descriptor: StyleDescriptor,
    pub stretched: bool,
}

pub fn prepare_input(rgb: &RgbImage, cfg: &TransferConfig) -> Result<PreparedInput, TransferError> {
    cfg.validate()?;
    let (lab, stretched) = preprocess(rgb, cfg)?;
    let descriptor = style_descriptor(&lab)?;
    Ok(PreparedInput {
        lab,
        descriptor,
        stretched,
    })
}

#[derive(Debug, Clone)]
pub struct LabTransfer {
    pub lab: LabImage,
    pub chroma: ChromaMap,
    pub tone: ToneCurveParams,
}

/// Transfers `style` onto a prepared input, staying in Lab.
pub fn stylize_lab(
    input: &PreparedInput,
    style: &StyleDescriptor,
    faces: &[FaceRegion],
    cfg: &TransferConfig,
) -> Result<LabTransfer, TransferError> {
    for f in faces {
        f.validate(input.lab.width(), input.lab.height())?;
    }
    let chroma = chroma_transform(&input.descriptor.chroma, &style.chroma, cfg.lambda_r)?;
    let tone = fit_tone_curve(&input.descriptor.luma, &style.luma, &cfg.tone)?;
    let mut lab = input.lab.clone();
    apply_chroma_in_place(&mut lab, &chroma);
    apply_tone_in_place(&mut lab, &tone);
    correct_face_exposure_in_place(&mut lab, faces, &cfg.face);
    Ok(LabTransfer { lab, chroma, tone })
}

#[derive(Debug, Clone)]
pub struct TransferResult {
    pub image: RgbImage,
    pub chroma: ChromaMap,
    pub tone: ToneCurveParams,
}

pub fn stylize_prepared(
    input: &PreparedInput,
    style: &StyleDescriptor,
    faces: &[FaceRegion],
    cfg: &TransferConfig,
) -> Result<TransferResult, TransferError> {
    if !faces.is_empty() {
        let LabTransfer { lab, chroma, tone } = stylize_lab(input, style, faces, cfg)?;
        return Ok(TransferResult {
            image: lab_to_srgb(&lab, cfg.effective_gamma()),
            chroma,
            tone,
        });
    }
    // without faces every step is per-pixel, so fuse them into one pass
    let chroma = chroma_transform(&input.descriptor.chroma, &style.chroma, cfg.lambda_r)?;
    let tone = fit_tone_curve(&input.descriptor.luma, &style.luma, &cfg.tone)?;
    let lut = ToneLut::new(&tone);
    let image = lab_to_srgb_mapped(&input.lab, cfg.effective_gamma(), |[l, a, b]| {
        let [a, b] = chroma.apply_pixel([a, b]);
        [lut.eval(l), a, b]
    });
    Ok(TransferResult { image, chroma, tone })
}

/// Full transfer: preprocess, map chroma, fit and apply the tone curve,
/// correct faces, convert back to sRGB.
pub fn transfer_style(
    input: &RgbImage,
    style: &StyleDescriptor,
    faces: &[FaceRegion],
    cfg: &TransferConfig,
) -> Result<TransferResult, TransferError> {
    let prepared = prepare_input(input, cfg)?;
    stylize_prepared(&prepared, style, faces, cfg)
}
