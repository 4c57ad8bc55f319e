//! Synthetic photo and style corpus shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use autostyle::colorspace::lab_to_srgb;
use autostyle::imgio::{encode_image, OutputFormat};
use autostyle::{LabImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Global color and tone of a synthetic image.
#[derive(Debug, Clone, Copy)]
pub struct Look {
    pub mean: [f64; 2],
    /// Lower-triangular factor of the chroma covariance.
    pub chol: [[f64; 2]; 2],
    /// Lightness is `u^tone` for a spatial pattern `u`.
    pub tone: f64,
}

impl Look {
    pub fn perturbed(&self, rng: &mut ChaCha8Rng, color: f64, tone: f64) -> Look {
        let n = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        Look {
            mean: [self.mean[0] + color * n(rng), self.mean[1] + color * n(rng)],
            chol: self.chol,
            tone: self.tone * (1.0 + tone * (2.0 * rng.random::<f64>() - 1.0)),
        }
    }
}

/// Spatial lightness pattern in [0, 1]; layouts stand in for scene content.
fn pattern(layout: u32, x: u32, y: u32, w: u32, h: u32) -> f64 {
    let (fx, fy) = (x as f64 / (w - 1).max(1) as f64, y as f64 / (h - 1).max(1) as f64);
    match layout % 4 {
        0 => fx,
        1 => 1.0 - fy,
        2 => 1.0 - ((fx - 0.5).hypot(fy - 0.5) * 2.0_f64.sqrt()).min(1.0),
        _ => {
            let cell = ((x * 8 / w) + (y * 8 / h)) % 2;
            0.25 + 0.5 * cell as f64
        }
    }
}

pub fn render(look: &Look, layout: u32, w: u32, h: u32, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (w * h) as usize;
    let mut lab = LabImage::filled(w, h, 0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = ((i as u32) % w, (i as u32) / w);
        let u = (0.75 * pattern(layout, x, y, w, h) + 0.25 * rng.random::<f64>()).clamp(0.0, 1.0);
        let z0: f64 = StandardNormal.sample(&mut rng);
        let z1: f64 = StandardNormal.sample(&mut rng);
        let c = look.chol;
        lab.l[i] = 0.05 + 0.9 * u.powf(look.tone);
        lab.a[i] = look.mean[0] + c[0][0] * z0;
        lab.b[i] = look.mean[1] + c[1][0] * z0 + c[1][1] * z1;
    }
    lab_to_srgb(&lab, 2.2)
}

/// Twelve looks spread around the chroma plane plus three near-duplicates
/// of looks 0, 4 and 8.
pub fn style_looks() -> Vec<Look> {
    let mut looks: Vec<Look> = (0..12)
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / 12.0;
            let s = 3.0 + (i % 3) as f64 * 1.5;
            Look {
                mean: [22.0 * angle.cos(), 22.0 * angle.sin()],
                chol: [[s, 0.0], [0.3 * s, s * (1.0 - 0.09f64).sqrt()]],
                tone: 0.6 + 0.1 * i as f64,
            }
        })
        .collect();
    for i in [0, 4, 8] {
        let mut l = looks[i];
        l.mean[0] += 1.0;
        looks.push(l);
    }
    looks
}

pub struct Corpus {
    pub root: PathBuf,
    pub photos: PathBuf,
    pub styles: PathBuf,
    pub inputs: Vec<PathBuf>,
}

/// Writes `photos_per_layout × 4` photos, the style set and six held-out
/// inputs under `root`.
pub fn write_corpus(root: &Path, photos_per_layout: u32) -> Corpus {
    let photos = root.join("photos");
    let styles = root.join("styles");
    let inputs_dir = root.join("inputs");
    for d in [&photos, &styles, &inputs_dir] {
        std::fs::create_dir_all(d).unwrap();
    }
    let looks = style_looks();
    for (i, look) in looks.iter().enumerate() {
        let img = render(look, i as u32, 64, 64, 1000 + i as u64);
        encode_image(&img, &styles.join(format!("style_{i:02}.png")), OutputFormat::Png).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for layout in 0..4u32 {
        for j in 0..photos_per_layout {
            let base = looks[(layout * 3 + j % 3) as usize];
            let look = base.perturbed(&mut rng, 1.5, 0.1);
            let img = render(&look, layout, 64, 48, rng.random());
            encode_image(&img, &photos.join(format!("p{layout}_{j:03}.png")), OutputFormat::Png).unwrap();
        }
    }
    let inputs = (0..6u32)
        .map(|i| {
            let look = looks[(i * 2) as usize].perturbed(&mut rng, 3.0, 0.2);
            let img = render(&look, i, 96, 80, rng.random());
            let path = inputs_dir.join(format!("input_{i}.png"));
            encode_image(&img, &path, OutputFormat::Png).unwrap();
            path
        })
        .collect();
    Corpus {
        root: root.to_path_buf(),
        photos,
        styles,
        inputs,
    }
}
