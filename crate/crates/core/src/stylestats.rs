//! Global style statistics of an image: a Gaussian over the (a, b)
//! chrominance plane and 32 percentiles of the lightness distribution.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colorspace::LabImage;
use crate::mat2::{Mat2, Vec2};
use crate::quantile::{quantile_sorted, sort_values};

pub use crate::mat2::{sqrt_spd2, MatrixError};

/// Number of lightness percentiles in a [`LumaFeature`].
pub const LUMA_SAMPLES: usize = 32;

/// Images with more pixels than this are subsampled on a regular grid
/// before descriptor extraction.
pub const MAX_STATS_SAMPLES: usize = 512 * 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} pixels, got {got}")]
    TooFewPixels { needed: usize, got: usize },
    #[error("luma feature must be {LUMA_SAMPLES} nondecreasing values in [0, 1]")]
    InvalidLumaFeature,
    #[error("covariance is not symmetric positive semidefinite: {0}")]
    InvalidCovariance(#[from] MatrixError),
}

/// Mean and covariance of the (a, b) chrominance samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaStats {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl ChromaStats {
    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        Self { mean, cov }
    }

    /// Checks that `cov` is symmetric positive semidefinite.
    pub fn validate(&self) -> Result<(), StatsError> {
        sqrt_spd2(&self.cov)?;
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(StatsError::InvalidCovariance(MatrixError::Singular));
        }
        Ok(())
    }
}

/// Lightness percentiles at levels `(i + 0.5) / 32`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LumaFeature([f64; LUMA_SAMPLES]);

impl LumaFeature {
    pub fn new(q: [f64; LUMA_SAMPLES]) -> Result<Self, StatsError> {
        let in_range = q.iter().all(|v| (0.0..=1.0).contains(v));
        let sorted = q.windows(2).all(|w| w[0] <= w[1]);
        if in_range && sorted {
            Ok(Self(q))
        } else {
            Err(StatsError::InvalidLumaFeature)
        }
    }

    pub fn values(&self) -> &[f64; LUMA_SAMPLES] {
        &self.0
    }

    /// Percentile level of entry `i`.
    pub fn level(i: usize) -> f64 {
        (i as f64 + 0.5) / LUMA_SAMPLES as f64
    }
}

impl TryFrom<Vec<f64>> for LumaFeature {
    type Error = StatsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; LUMA_SAMPLES] = v.try_into().map_err(|_| StatsError::InvalidLumaFeature)?;
        Self::new(arr)
    }
}

impl From<LumaFeature> for Vec<f64> {
    fn from(f: LumaFeature) -> Self {
        f.0.to_vec()
    }
}

/// The complete style representation of one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StyleDescriptor {
    pub chroma: ChromaStats,
    pub luma: LumaFeature,
}

/// Neumaier-compensated running sum; deterministic for a fixed input order.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Population mean and covariance of the (a, b) planes.
pub fn chroma_stats(img: &LabImage) -> Result<ChromaStats, StatsError> {
    let n = img.len();
    if n < 2 {
        return Err(StatsError::TooFewPixels { needed: 2, got: n });
    }
    let inv_n = 1.0 / n as f64;
    let (mut sa, mut sb) = (CompensatedSum::default(), CompensatedSum::default());
    for (&a, &b) in img.a.iter().zip(&img.b) {
        sa.add(a);
        sb.add(b);
    }
    let mean = [sa.value() * inv_n, sb.value() * inv_n];
    let (mut saa, mut sab, mut sbb) = (
        CompensatedSum::default(),
        CompensatedSum::default(),
        CompensatedSum::default(),
    );
    for (&a, &b) in img.a.iter().zip(&img.b) {
        let (da, db) = (a - mean[0], b - mean[1]);
        saa.add(da * da);
        sab.add(da * db);
        sbb.add(db * db);
    }
    let cov = Mat2::symmetric(saa.value() * inv_n, sab.value() * inv_n, sbb.value() * inv_n);
    Ok(ChromaStats { mean, cov })
}

/// Lightness percentiles at the 32 mid-bin levels.
pub fn luma_feature(img: &LabImage) -> Result<LumaFeature, StatsError> {
    if img.is_empty() {
        return Err(StatsError::TooFewPixels { needed: 1, got: 0 });
    }
    let mut sorted = img.l.clone();
    sort_values(&mut sorted);
    Ok(luma_feature_sorted(&sorted))
}

fn luma_feature_sorted(sorted: &[f64]) -> LumaFeature {
    let mut q = [0.0; LUMA_SAMPLES];
    for (i, slot) in q.iter_mut().enumerate() {
        *slot = quantile_sorted(sorted, LumaFeature::level(i)).clamp(0.0, 1.0);
    }
    // interpolation keeps sorted input sorted; enforce against rounding anyway
    for i in 1..LUMA_SAMPLES {
        q[i] = q[i].max(q[i - 1]);
    }
    LumaFeature(q)
}

/// Regular-grid subsample with at most [`MAX_STATS_SAMPLES`] pixels.
pub fn stats_sample(img: &LabImage) -> Cow<'_, LabImage> {
    if img.len() <= MAX_STATS_SAMPLES {
        return Cow::Borrowed(img);
    }
    let ratio = img.len() as f64 / MAX_STATS_SAMPLES as f64;
    let mut step = ratio.sqrt().ceil() as u32;
    while (img.width().div_ceil(step) as usize) * (img.height().div_ceil(step) as usize) > MAX_STATS_SAMPLES {
        step += 1;
    }
    let (w, h) = (img.width().div_ceil(step), img.height().div_ceil(step));
    let n = w as usize * h as usize;
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for y in (0..img.height()).step_by(step as usize) {
        for x in (0..img.width()).step_by(step as usize) {
            let i = img.index(x, y);
            l.push(img.l[i]);
            a.push(img.a[i]);
            b.push(img.b[i]);
        }
    }
    Cow::Owned(LabImage::new(w, h, l, a, b).expect("subsample planes are consistent"))
}

/// Chroma statistics and lightness feature of `img`, computed on a regular
/// subsample for large images.
pub fn style_descriptor(img: &LabImage) -> Result<StyleDescriptor, StatsError> {
    let sample = stats_sample(img);
    Ok(StyleDescriptor {
        chroma: chroma_stats(&sample)?,
        luma: luma_feature(&sample)?,
    })
}
