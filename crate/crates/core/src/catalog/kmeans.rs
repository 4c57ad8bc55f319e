use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::features::SemanticFeature;
use super::CatalogError;

const MAX_ITERATIONS: usize = 100;
const RELATIVE_MOVEMENT_TOL: f64 = 1e-4;

/// k cluster centers in feature space, row-major `k × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    k: usize,
    dim: usize,
    centers: Vec<f32>,
}

impl ClusterModel {
    pub fn new(k: usize, dim: usize, centers: Vec<f32>) -> Result<Self, CatalogError> {
        if k == 0 || dim == 0 {
            return Err(CatalogError::Invalid(format!(
                "cluster model needs k, dim >= 1 (k={k}, dim={dim})"
            )));
        }
        if centers.len() != k * dim {
            return Err(CatalogError::Invalid(format!(
                "expected {} center values, got {}",
                k * dim,
                centers.len()
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(CatalogError::Invalid("non-finite cluster center".into()));
        }
        Ok(Self { k, dim, centers })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centers(&self) -> &[f32] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &[f32] {
        &self.centers[i * self.dim..(i + 1) * self.dim]
    }

    /// Squared Euclidean distance from `f` to every center.
    pub fn squared_distances(&self, f: &SemanticFeature) -> Result<Vec<f64>, CatalogError> {
        if f.dim() != self.dim {
            return Err(CatalogError::DimensionMismatch {
                expected: self.dim,
                got: f.dim(),
            });
        }
        Ok((0..self.k)
            .map(|c| squared_distance_f32(f.as_slice(), self.center(c)))
            .collect())
    }
}

fn squared_distance_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest id.
pub fn assign_cluster(f: &SemanticFeature, model: &ClusterModel) -> Result<usize, CatalogError> {
    let d = model.squared_distances(f)?;
    Ok(argmin(&d).0)
}

fn argmin(values: &[f64]) -> (usize, f64) {
    let mut best = (0, values[0]);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Result of a k-means run with its convergence trace.
#[derive(Debug, Clone)]
pub struct KMeansReport {
    pub model: ClusterModel,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub distortions: Vec<f64>,
    pub iterations: usize,
}

/// k-means with k-means++ seeding; deterministic for a fixed feature order,
/// `k` and `seed`.
pub fn kmeans_cluster(features: &[SemanticFeature], k: usize, seed: u64) -> Result<ClusterModel, CatalogError> {
    Ok(kmeans_cluster_detailed(features, k, seed)?.model)
}

pub fn kmeans_cluster_detailed(
    features: &[SemanticFeature],
    k: usize,
    seed: u64,
) -> Result<KMeansReport, CatalogError> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(CatalogError::TooFewPoints { k, n });
    }
    let dim = features[0].dim();
    if let Some(bad) = features.iter().find(|f| f.dim() != dim) {
        return Err(CatalogError::DimensionMismatch {
            expected: dim,
            got: bad.dim(),
        });
    }
    let points: Vec<f64> = features
        .iter()
        .flat_map(|f| f.as_slice().iter().map(|&v| v as f64))
        .collect();
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(&points, n, dim, k, &mut rng);

    let mut distortions = Vec::new();
    let mut assignments = vec![0usize; n];
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let nearest = assign_points(&points, dim, &centers);
        for (slot, &(c, _)) in assignments.iter_mut().zip(&nearest) {
            *slot = c;
        }
        distortions.push(nearest.iter().map(|&(_, d)| d).sum());

        if converged || iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += v;
            }
        }

        // empty clusters take the points farthest from their current centers
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| nearest[b].1.total_cmp(&nearest[a].1).then(a.cmp(&b)));
        let mut far = far.into_iter();

        let mut new_centers = vec![0.0f64; k * dim];
        for c in 0..k {
            let dst = &mut new_centers[c * dim..(c + 1) * dim];
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (d, s) in dst.iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                    *d = s * inv;
                }
            } else {
                let p = far.next().expect("k <= n guarantees a donor point");
                dst.copy_from_slice(point(p));
            }
        }

        let moved: f64 = squared_distance(&new_centers, &centers);
        let scale: f64 = centers.iter().map(|v| v * v).sum();
        centers = new_centers;
        // the next pass still reassigns so labels match the final centers
        converged = moved.sqrt() <= RELATIVE_MOVEMENT_TOL * scale.sqrt().max(f64::MIN_POSITIVE);
    }

    let model = ClusterModel::new(k, dim, centers.iter().map(|&v| v as f32).collect())?;
    Ok(KMeansReport {
        model,
        assignments,
        distortions,
        iterations,
    })
}

/// Nearest center and its squared distance for every point.
fn assign_points(points: &[f64], dim: usize, centers: &[f64]) -> Vec<(usize, f64)> {
    points
        .par_chunks(dim)
        .map(|p| {
            let d: Vec<f64> = centers.chunks(dim).map(|c| squared_distance(p, c)).collect();
            argmin(&d)
        })
        .collect()
}

fn seed_plus_plus(points: &[f64], n: usize, dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(point(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let chosen = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target at the very end of the mass
            pick.unwrap_or_else(|| nearest.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..n)
        };
        let c = point(chosen);
        centers.extend_from_slice(c);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(point(i), c));
        }
    }
    centers
}
