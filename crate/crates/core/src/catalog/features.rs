use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::colorspace::srgb_to_lab;
use crate::imgio::RgbImage;

use super::CatalogError;

/// Dimension of the built-in descriptor and of the default external embedding.
pub const SEMANTIC_DIM: usize = 512;
pub const FEATURE_FILE_VERSION: u32 = 1;
const FEATURE_MAGIC: &[u8; 4] = b"CAFT";

const GRID: usize = 8;
const CHROMA_BINS: usize = 16;
const CHROMA_RANGE: f64 = 60.0;
const LUMA_BINS: usize = 64;
/// Brings mean a/b (Lab units) to roughly the scale of mean lightness.
const CHROMA_MEAN_SCALE: f64 = 1.0 / 50.0;

/// An L2-normalized semantic embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticFeature {
    v: Vec<f32>,
}

impl SemanticFeature {
    /// Normalizes `raw` to unit length. Fails on non-finite or zero input.
    pub fn new(raw: Vec<f32>) -> Result<Self, String> {
        if raw.is_empty() {
            return Err("empty feature vector".into());
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err("non-finite feature value".into());
        }
        let norm = raw.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err("zero feature vector cannot be normalized".into());
        }
        Ok(Self {
            v: raw.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.v
    }
}

/// Source of semantic features for run-time inputs.
pub trait FeatureProvider: Sync {
    fn dim(&self) -> usize;
    fn feature(&self, img: &RgbImage) -> Result<SemanticFeature, CatalogError>;
}

/// The built-in handcrafted descriptor.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinFeatures;

impl FeatureProvider for BuiltinFeatures {
    fn dim(&self) -> usize {
        SEMANTIC_DIM
    }

    fn feature(&self, img: &RgbImage) -> Result<SemanticFeature, CatalogError> {
        Ok(builtin_semantic_feature(img))
    }
}

/// A feature computed elsewhere for one specific input.
#[derive(Debug, Clone)]
pub struct FixedFeature(pub SemanticFeature);

impl FeatureProvider for FixedFeature {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn feature(&self, _img: &RgbImage) -> Result<SemanticFeature, CatalogError> {
        Ok(self.0.clone())
    }
}

fn cell_of(coord: u32, extent: u32) -> usize {
    (coord as usize * GRID) / extent as usize
}

fn bin_of(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((t * bins as f64) as usize).min(bins - 1)
}

/// 512-d descriptor: 8×8 grid of mean lightness, 8×8 grids of mean a and b,
/// a 16×16 joint (a, b) histogram over [−60, 60]², and a 64-bin lightness
/// histogram, concatenated and L2-normalized.
pub fn builtin_semantic_feature(img: &RgbImage) -> SemanticFeature {
    let lab = srgb_to_lab(img, 2.2);
    let (w, h) = (lab.width(), lab.height());
    let n = lab.len() as f64;

    let mut sums = [[0.0f64; 3]; GRID * GRID];
    let mut counts = [0usize; GRID * GRID];
    let mut chroma_hist = [0.0f64; CHROMA_BINS * CHROMA_BINS];
    let mut luma_hist = [0.0f64; LUMA_BINS];
    for y in 0..h {
        let cy = cell_of(y, h);
        for x in 0..w {
            let i = lab.index(x, y);
            let (l, a, b) = (lab.l[i], lab.a[i], lab.b[i]);
            let cell = cy * GRID + cell_of(x, w);
            sums[cell][0] += l;
            sums[cell][1] += a;
            sums[cell][2] += b;
            counts[cell] += 1;
            let ba = bin_of(a, -CHROMA_RANGE, CHROMA_RANGE, CHROMA_BINS);
            let bb = bin_of(b, -CHROMA_RANGE, CHROMA_RANGE, CHROMA_BINS);
            chroma_hist[ba * CHROMA_BINS + bb] += 1.0;
            luma_hist[bin_of(l, 0.0, 1.0, LUMA_BINS)] += 1.0;
        }
    }

    let mut means = [[0.0f64; 3]; GRID * GRID];
    for cy in 0..GRID {
        for cx in 0..GRID {
            let cell = cy * GRID + cx;
            means[cell] = if counts[cell] > 0 {
                sums[cell].map(|s| s / counts[cell] as f64)
            } else {
                // images narrower than the grid: borrow the pixel under the cell center
                let px = (((cx as f64 + 0.5) * w as f64 / GRID as f64) as u32).min(w - 1);
                let py = (((cy as f64 + 0.5) * h as f64 / GRID as f64) as u32).min(h - 1);
                let i = lab.index(px, py);
                [lab.l[i], lab.a[i], lab.b[i]]
            };
        }
    }

    let mut raw = Vec::with_capacity(SEMANTIC_DIM);
    raw.extend(means.iter().map(|m| m[0] as f32));
    raw.extend(means.iter().map(|m| (m[1] * CHROMA_MEAN_SCALE) as f32));
    raw.extend(means.iter().map(|m| (m[2] * CHROMA_MEAN_SCALE) as f32));
    raw.extend(chroma_hist.iter().map(|c| (c / n) as f32));
    raw.extend(luma_hist.iter().map(|c| (c / n) as f32));
    debug_assert_eq!(raw.len(), SEMANTIC_DIM);
    // the chroma histogram always has one nonzero bin, so the norm is positive
    SemanticFeature::new(raw).expect("descriptor has a nonzero histogram block")
}

/// Writes a feature file: `CAFT`, u32 version, u32 dim, dim × f32, all LE.
pub fn write_feature_file(path: &Path, values: &[f32]) -> Result<(), CatalogError> {
    let mut bytes = Vec::with_capacity(12 + 4 * values.len());
    bytes.extend_from_slice(FEATURE_MAGIC);
    bytes.extend_from_slice(&FEATURE_FILE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads and normalizes one feature file.
pub fn read_feature_file(path: &Path) -> Result<SemanticFeature, CatalogError> {
    let corrupt = |reason: &str| CatalogError::CorruptFeatureFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != FEATURE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FEATURE_FILE_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let dim = word(8) as usize;
    if dim == 0 {
        return Err(corrupt("zero dimension"));
    }
    if bytes.len() != 12 + 4 * dim {
        return Err(corrupt(&format!(
            "expected {} payload bytes, found {}",
            4 * dim,
            bytes.len() - 12
        )));
    }
    let values: Vec<f32> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SemanticFeature::new(values).map_err(|e| corrupt(&e))
}

/// Loads the features listed in a JSON manifest mapping image id to a
/// feature file path relative to `dir`. All features must share one
/// dimension.
pub fn load_external_features(dir: &Path, manifest: &Path) -> Result<BTreeMap<String, SemanticFeature>, CatalogError> {
    let entries: BTreeMap<String, String> = serde_json::from_str(&fs::read_to_string(manifest)?)?;
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (id, file) in entries {
        let path = dir.join(&file);
        if !path.exists() {
            return Err(CatalogError::MissingEntry(format!("{id}: {}", path.display())));
        }
        let f = read_feature_file(&path)?;
        match dim {
            None => dim = Some(f.dim()),
            Some(d) if d != f.dim() => {
                return Err(CatalogError::DimensionMismatch {
                    expected: d,
                    got: f.dim(),
                })
            }
            _ => {}
        }
        out.insert(id, f);
    }
    Ok(out)
}
