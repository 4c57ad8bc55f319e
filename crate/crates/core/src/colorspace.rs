//! Preprocessing into the working color space and back.
//!
//! Forward: every stored sRGB sample is compressed with `v ↦ v^(1/γ)`, the
//! compressed triple is converted with the standard sRGB → XYZ (D65) → CIELab
//! formulas, and lightness is stored as `L*/100`. The inverse runs the same
//! chain backwards and clamps out-of-gamut results.

use rayon::prelude::*;
use thiserror::Error;

use crate::imgio::RgbImage;
use crate::quantile::quantile_select;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColorError {
    #[error("luminance is constant between the clip quantiles ({0})")]
    DegenerateLuminance(f64),
    #[error("clip fraction must lie in [0, 0.5), got {0}")]
    InvalidClipFraction(f64),
    #[error("plane sizes do not match {width}x{height}")]
    DimensionMismatch { width: u32, height: u32 },
}

/// D65 reference white in XYZ, matching the rows of [`SRGB_TO_XYZ`].
const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

const XYZ_TO_SRGB: [[f64; 3]; 3] = [
    [3.240_454_2, -1.537_138_5, -0.498_531_4],
    [-0.969_266_0, 1.876_010_8, 0.041_556_0],
    [0.055_643_4, -0.204_025_9, 1.057_225_2],
];

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

/// Entries in the output transfer lookup table (linear light → stored value).
const OUTPUT_LUT_SIZE: usize = 16384;

/// Planar CIELab image. `l` holds `L*/100`, `a` and `b` hold raw Lab units.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: u32,
    height: u32,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn new(width: u32, height: u32, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, ColorError> {
        let n = width as usize * height as usize;
        if width == 0 || height == 0 || l.len() != n || a.len() != n || b.len() != n {
            return Err(ColorError::DimensionMismatch { width, height });
        }
        Ok(Self { width, height, l, a, b })
    }

    /// A flat `width × height` image filled with one color.
    pub fn filled(width: u32, height: u32, l: f64, a: f64, b: f64) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            l: vec![l; n],
            a: vec![a; n],
            b: vec![b; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }

    pub fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }
}

fn srgb_decode(v: f64) -> f64 {
    if v <= 0.040_45 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn srgb_encode(v: f64) -> f64 {
    if v <= 0.003_130_8 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Cube root for positive finite `t`; about 4x faster than `f64::cbrt`
/// and within a few ulps of it.
fn fast_cbrt(t: f64) -> f64 {
    // exponent divided by three gives a seed within a few percent
    let mut y = f64::from_bits(t.to_bits() / 3 + 0x2A9F_7893_782D_A1CE);
    for _ in 0..2 {
        let y3 = y * y * y;
        y *= (y3 + 2.0 * t) / (2.0 * y3 + t);
    }
    y
}

fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        fast_cbrt(t)
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > LAB_EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

/// Stored sample → linear light of the gamma-compressed sample.
fn compress_to_linear(v: f64, gamma: f64) -> f64 {
    srgb_decode(v.max(0.0).powf(1.0 / gamma))
}

/// Linear light → stored sample, undoing the compression.
fn linear_to_stored(lin: f64, gamma: f64) -> f64 {
    srgb_encode(lin.clamp(0.0, 1.0)).clamp(0.0, 1.0).powf(gamma)
}

fn linear_rgb_to_lab(lin: [f64; 3]) -> [f64; 3] {
    let m = &SRGB_TO_XYZ;
    let xyz = [0, 1, 2].map(|r| m[r][0] * lin[0] + m[r][1] * lin[1] + m[r][2] * lin[2]);
    let [fx, fy, fz] = [0, 1, 2].map(|i| lab_f(xyz[i] / WHITE[i]));
    let l = (116.0 * fy - 16.0) / 100.0;
    [l.clamp(0.0, 1.0), 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn lab_to_linear_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] * 100.0 + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [
        lab_f_inv(fx) * WHITE[0],
        lab_f_inv(fy) * WHITE[1],
        lab_f_inv(fz) * WHITE[2],
    ];
    let m = &XYZ_TO_SRGB;
    [0, 1, 2].map(|r| m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2])
}

/// Converts one stored sRGB triple to `[L/100, a, b]`.
pub fn srgb_pixel_to_lab(rgb: [f64; 3], gamma: f64) -> [f64; 3] {
    linear_rgb_to_lab(rgb.map(|v| compress_to_linear(v, gamma)))
}

/// Converts one `[L/100, a, b]` triple back to clamped stored sRGB.
pub fn lab_pixel_to_srgb(lab: [f64; 3], gamma: f64) -> [f64; 3] {
    let lin = lab_to_linear_rgb(lab);
    lin.map(|v| {
        let v = if v.is_nan() { 0.0 } else { v };
        linear_to_stored(v, gamma)
    })
}

/// Forward per-channel table, exact for 8-bit sourced samples.
struct InputTable {
    gamma: f64,
    table: [f64; 256],
}

impl InputTable {
    fn new(gamma: f64) -> Self {
        let mut table = [0.0; 256];
        for (k, slot) in table.iter_mut().enumerate() {
            *slot = compress_to_linear(k as f64 / 255.0, gamma);
        }
        Self { gamma, table }
    }

    fn lookup(&self, v: f32) -> f64 {
        // saturating cast: negatives and NaN land on 0 and fail the check
        let k = (v * 255.0 + 0.5) as usize;
        if k <= 255 && k as f32 / 255.0 == v {
            self.table[k]
        } else {
            compress_to_linear(v as f64, self.gamma)
        }
    }
}

/// Output transfer function, tabulated over linear light when it is smooth
/// enough (γ ≥ 1) and evaluated directly otherwise.
struct OutputTable {
    gamma: f64,
    table: Option<Vec<f64>>,
}

impl OutputTable {
    fn new(gamma: f64) -> Self {
        let table = (gamma >= 1.0).then(|| {
            (0..=OUTPUT_LUT_SIZE)
                .map(|i| linear_to_stored(i as f64 / OUTPUT_LUT_SIZE as f64, gamma))
                .collect()
        });
        Self { gamma, table }
    }

    fn eval(&self, lin: f64) -> f64 {
        let lin = if lin.is_nan() { 0.0 } else { lin.clamp(0.0, 1.0) };
        match &self.table {
            Some(t) => {
                let pos = lin * OUTPUT_LUT_SIZE as f64;
                let i = (pos as usize).min(OUTPUT_LUT_SIZE - 1);
                let frac = pos - i as f64;
                t[i] + frac * (t[i + 1] - t[i])
            }
            None => linear_to_stored(lin, self.gamma),
        }
    }
}

/// Gamma-compresses `rgb` and converts it to normalized CIELab.
pub fn srgb_to_lab(rgb: &RgbImage, gamma: f64) -> LabImage {
    assert!(gamma > 0.0, "gamma must be positive");
    let table = InputTable::new(gamma);
    let mut out = LabImage::filled(rgb.width(), rgb.height(), 0.0, 0.0, 0.0);
    let LabImage { l, a, b, .. } = &mut out;
    l.par_iter_mut()
        .zip(a.par_iter_mut())
        .zip(b.par_iter_mut())
        .zip(rgb.pixels().par_iter())
        .for_each(|(((l, a), b), p)| {
            [*l, *a, *b] = linear_rgb_to_lab(p.map(|v| table.lookup(v)));
        });
    out
}

/// Converts normalized CIELab back to stored sRGB, clamping to the gamut.
pub fn lab_to_srgb(lab: &LabImage, gamma: f64) -> RgbImage {
    lab_to_srgb_mapped(lab, gamma, |p| p)
}

/// Like [`lab_to_srgb`] but passes every `[L/100, a, b]` pixel through `f`
/// first, saving a separate pass over the planes.
pub fn lab_to_srgb_mapped<F>(lab: &LabImage, gamma: f64, f: F) -> RgbImage
where
    F: Fn([f64; 3]) -> [f64; 3] + Sync,
{
    assert!(gamma > 0.0, "gamma must be positive");
    let table = OutputTable::new(gamma);
    const CHUNK: usize = 1 << 14;
    let mut pixels = vec![[0.0f32; 3]; lab.len()];
    pixels.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
        let start = c * CHUNK;
        let (l, a, b) = (&lab.l[start..], &lab.a[start..], &lab.b[start..]);
        for (i, px) in out.iter_mut().enumerate() {
            let lin = lab_to_linear_rgb(f([l[i], a[i], b[i]]));
            *px = lin.map(|v| table.eval(v) as f32);
        }
    });
    RgbImage::new(lab.width(), lab.height(), pixels).expect("dimensions carried over from a valid LabImage")
}

/// Linearly stretches lightness so the `clip_fraction` and
/// `1 - clip_fraction` quantiles land on 0 and 1, clamping the tails.
pub fn stretch_luminance(lab: &LabImage, clip_fraction: f64) -> Result<LabImage, ColorError> {
    if !(0.0..0.5).contains(&clip_fraction) {
        return Err(ColorError::InvalidClipFraction(clip_fraction));
    }
    let (lo, hi) = luminance_bounds(&lab.l, clip_fraction);
    if hi <= lo {
        return Err(ColorError::DegenerateLuminance(lo));
    }
    let scale = 1.0 / (hi - lo);
    let mut out = lab.clone();
    out.l
        .par_iter_mut()
        .for_each(|v| *v = ((*v - lo) * scale).clamp(0.0, 1.0));
    Ok(out)
}

fn luminance_bounds(l: &[f64], clip_fraction: f64) -> (f64, f64) {
    let mut scratch = l.to_vec();
    let lo = quantile_select(&mut scratch, clip_fraction);
    let hi = quantile_select(&mut scratch, 1.0 - clip_fraction);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_cbrt_tracks_std() {
        let mut worst = 0.0f64;
        let mut t = LAB_EPSILON;
        while t < 4.0 {
            worst = worst.max((fast_cbrt(t) / t.cbrt() - 1.0).abs());
            t *= 1.000_37;
        }
        assert!(worst < 1e-14, "worst relative error {worst:e}");
    }
    use crate::quantile::{quantile_sorted, sort_values};

    /// Textbook Lab reference: piecewise sRGB decode, the IEC 61966-2-1
    /// matrix, and the CIE 1976 formulas written out longhand.
    fn reference_lab(v: [f64; 3], gamma: f64) -> [f64; 3] {
        let lin: Vec<f64> = v
            .iter()
            .map(|c| {
                let c = c.powf(1.0 / gamma);
                if c <= 0.04045 {
                    c / 12.92
                } else {
                    ((c + 0.055) / 1.055).powf(2.4)
                }
            })
            .collect();
        let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
        let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
        let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
        let f = |t: f64| {
            if t > (6.0f64 / 29.0).powi(3) {
                t.powf(1.0 / 3.0)
            } else {
                t / (3.0 * (6.0f64 / 29.0).powi(2)) + 4.0 / 29.0
            }
        };
        let (fx, fy, fz) = (f(x / 0.95047), f(y), f(z / 1.08883));
        [(116.0 * fy - 16.0) / 100.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    fn one_pixel(v: [f32; 3]) -> RgbImage {
        RgbImage::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab(&one_pixel([1.0; 3]), 2.2);
        assert!((w.l[0] - 1.0).abs() < 1e-6);
        assert!(w.a[0].abs() < 0.5 && w.b[0].abs() < 0.5);
        let k = srgb_to_lab(&one_pixel([0.0; 3]), 2.2);
        assert_eq!((k.l[0], k.a[0], k.b[0]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn matches_reference_formulas() {
        // 8-bit levels (tabulated as exact k/255) and binary fractions
        let samples = [
            [0.5, 0.5, 0.5],
            [51.0 / 255.0, 178.0 / 255.0, 25.0 / 255.0],
            [0.875, 0.3125, 0.625],
            [3.0 / 256.0, 6.0 / 256.0, 8.0 / 256.0],
            [1.0, 0.0, 0.0],
        ];
        for s in samples {
            let got = srgb_to_lab(&one_pixel(s.map(|v| v as f32)), 2.2);
            let want = reference_lab(s, 2.2);
            assert!((got.l[0] - want[0]).abs() < 1e-9, "{s:?}");
            assert!((got.a[0] - want[1]).abs() < 1e-7, "{s:?}");
            assert!((got.b[0] - want[2]).abs() < 1e-7, "{s:?}");
        }
        // gray 0.5 compresses to 0.5^(1/2.2) before conversion
        let compressed = 0.5f64.powf(1.0 / 2.2);
        assert!((compressed - 0.7297).abs() < 1e-4);
    }

    #[test]
    fn eight_bit_table_is_exact() {
        let table = InputTable::new(2.2);
        for k in 0..=255u32 {
            let v = k as f32 / 255.0;
            assert_eq!(table.lookup(v), compress_to_linear(k as f64 / 255.0, 2.2));
        }
        let v = 0.123_456_f32;
        assert_eq!(table.lookup(v), compress_to_linear(v as f64, 2.2));
    }

    #[test]
    fn black_lab_maps_to_black() {
        let lab = LabImage::filled(1, 1, 0.0, 0.0, 0.0);
        assert_eq!(lab_to_srgb(&lab, 2.2).pixel(0, 0), [0.0; 3]);
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let lab = LabImage::filled(1, 1, 0.5, 120.0, -120.0);
        let p = lab_to_srgb(&lab, 2.2).pixel(0, 0);
        assert!(p.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)), "{p:?}");
    }

    #[test]
    fn round_trip_including_inverted_gamma() {
        for gamma in [2.2, 1.0 / 2.2] {
            let img = RgbImage::from_fn(16, 16, |x, y| {
                [x as f32 / 15.0, y as f32 / 15.0, ((x * 7 + y * 3) % 16) as f32 / 15.0]
            });
            let back = lab_to_srgb(&srgb_to_lab(&img, gamma), gamma);
            for (p, q) in img.pixels().iter().zip(back.pixels()) {
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() <= 1.0 / 255.0, "{gamma}: {p:?} {q:?}");
                }
            }
        }
    }

    #[test]
    fn stretch_identity_when_range_already_full() {
        // 1001 samples: the 0.5 % quantile positions land on order statistics
        let n = 1001;
        let mut l: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        for v in l.iter_mut().take(6) {
            *v = 0.0;
        }
        for v in l.iter_mut().skip(n - 6) {
            *v = 1.0;
        }
        let lab = LabImage::new(n as u32, 1, l.clone(), vec![1.0; n], vec![-2.0; n]).unwrap();
        let out = stretch_luminance(&lab, 0.005).unwrap();
        assert_eq!(out.l, l);
        assert_eq!(out.a, lab.a);
    }

    proptest::proptest! {
        // tails long enough to cover the clipped quantiles are ties, so a
        // second stretch sees lo = 0 and hi = 1
        #[test]
        fn stretch_is_idempotent_when_tails_tie(
            mid in proptest::collection::vec(0.2f64..0.8, 50..400),
            lo in 0.0f64..0.15, hi in 0.85f64..1.0, tail in 10usize..40,
        ) {
            let mut l = vec![lo; tail];
            l.extend(&mid);
            l.extend(std::iter::repeat_n(hi, tail));
            let n = l.len();
            let lab = LabImage::new(n as u32, 1, l, vec![0.0; n], vec![0.0; n]).unwrap();
            let once = stretch_luminance(&lab, 0.005).unwrap();
            let twice = stretch_luminance(&once, 0.005).unwrap();
            for (a, b) in once.l.iter().zip(&twice.l) {
                proptest::prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn stretch_ramp_matches_quantile_oracle() {
        let n = 1000;
        let l: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let lab = LabImage::new(n as u32, 1, l.clone(), vec![0.0; n], vec![0.0; n]).unwrap();
        let out = stretch_luminance(&lab, 0.005).unwrap();
        let mut sorted = l.clone();
        sort_values(&mut sorted);
        let lo = quantile_sorted(&sorted, 0.005);
        let hi = quantile_sorted(&sorted, 0.995);
        assert!((lo - 0.005).abs() < 1e-12 && (hi - 0.995).abs() < 1e-12);
        for i in [0, 3, 250, 499, 500, 750, 996, 999] {
            let want = ((l[i] - lo) / (hi - lo)).clamp(0.0, 1.0);
            assert!((out.l[i] - want).abs() < 1e-12, "{i}");
        }
    }

    #[test]
    fn stretch_rejects_constant_and_bad_fraction() {
        let lab = LabImage::filled(4, 4, 0.3, 0.0, 0.0);
        assert!(matches!(
            stretch_luminance(&lab, 0.005),
            Err(ColorError::DegenerateLuminance(_))
        ));
        assert!(matches!(
            stretch_luminance(&lab, 0.5),
            Err(ColorError::InvalidClipFraction(_))
        ));
    }

    #[test]
    fn rejects_mismatched_planes() {
        assert!(LabImage::new(2, 2, vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]).is_err());
    }
}
