//! Run-time style selection: nearest semantic clusters, merged ranking and
//! greedy diverse sampling.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{
    CatalogError, ClusterModel, FeatureProvider, RankingTable, SemanticFeature, StyleEntry, StyleIndex,
};
use crate::imgio::RgbImage;
use crate::similarity::frechet;
use crate::stylestats::StyleDescriptor;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("cluster {0} is not in the ranking table")]
    UnknownCluster(usize),
    #[error("ranking refers to style {0}, which is not in the index")]
    UnknownStyle(u32),
    #[error("invalid selection config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Number of nearest semantic clusters whose rankings are merged.
    pub n_clusters: usize,
    /// Minimum Fréchet chroma distance between any two selected styles.
    pub diversity_threshold: f64,
    pub k_outputs: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            n_clusters: 3,
            diversity_threshold: 7.5,
            k_outputs: 5,
        }
    }
}

impl SelectionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_clusters == 0 {
            out.push("n_clusters must be >= 1".to_string());
        }
        if self.k_outputs == 0 {
            out.push("k_outputs must be >= 1".to_string());
        }
        if !(self.diversity_threshold >= 0.0 && self.diversity_threshold.is_finite()) {
            out.push(format!(
                "diversity_threshold must be >= 0, got {}",
                self.diversity_threshold
            ));
        }
        out
    }
}

/// The `n` cluster ids closest to `f`, nearest first, ties by id.
/// `n` is capped at the number of clusters.
pub fn nearest_clusters(f: &SemanticFeature, model: &ClusterModel, n: usize) -> Result<Vec<usize>, CatalogError> {
    let d = model.squared_distances(f)?;
    let mut ids: Vec<usize> = (0..d.len()).collect();
    ids.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    ids.truncate(n);
    Ok(ids)
}

/// Sums each style's score over the chosen clusters and sorts descending,
/// ties by style id.
pub fn merge_rankings(table: &RankingTable, clusters: &[usize]) -> Result<Vec<(u32, f64)>, SelectionError> {
    let mut totals: BTreeMap<u32, f64> = BTreeMap::new();
    for &c in clusters {
        let list = table.cluster(c).ok_or(SelectionError::UnknownCluster(c))?;
        for r in list {
            *totals.entry(r.style_id).or_insert(0.0) += r.score as f64;
        }
    }
    let mut merged: Vec<(u32, f64)> = totals.into_iter().collect();
    merged.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(merged)
}

/// Greedy scan in rank order: a style is kept when its chroma Fréchet
/// distance to every style kept so far is at least `threshold`. Stops after
/// `k` styles. Ids without a descriptor are skipped.
pub fn sample_diverse(ranked: &[u32], styles: &BTreeMap<u32, StyleDescriptor>, threshold: f64, k: usize) -> Vec<u32> {
    let mut accepted: Vec<(u32, &StyleDescriptor)> = Vec::with_capacity(k);
    for &id in ranked {
        if accepted.len() == k {
            break;
        }
        let Some(candidate) = styles.get(&id) else {
            continue;
        };
        if accepted
            .iter()
            .all(|(_, kept)| frechet(&candidate.chroma, &kept.chroma) >= threshold)
        {
            accepted.push((id, candidate));
        }
    }
    accepted.into_iter().map(|(id, _)| id).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedStyle {
    pub entry: StyleEntry,
    /// Merged ranking score.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub clusters: Vec<usize>,
    pub merged: Vec<(u32, f64)>,
    pub chosen: Vec<SelectedStyle>,
}

impl Selection {
    pub fn entries(&self) -> Vec<StyleEntry> {
        self.chosen.iter().map(|s| s.entry.clone()).collect()
    }
}

/// Selection for an already computed semantic feature.
pub fn select_for_feature(
    feature: &SemanticFeature,
    index: &StyleIndex,
    cfg: &SelectionConfig,
) -> Result<Selection, SelectionError> {
    let problems = cfg.violations();
    if !problems.is_empty() {
        return Err(SelectionError::InvalidConfig(problems));
    }
    let clusters = nearest_clusters(feature, &index.model, cfg.n_clusters)?;
    let merged = merge_rankings(&index.rankings, &clusters)?;
    let by_id: BTreeMap<u32, &StyleEntry> = index.styles.iter().map(|s| (s.style_id, s)).collect();
    if let Some(&(missing, _)) = merged.iter().find(|(id, _)| !by_id.contains_key(id)) {
        return Err(SelectionError::UnknownStyle(missing));
    }
    let descriptors: BTreeMap<u32, StyleDescriptor> = by_id.iter().map(|(&id, s)| (id, s.descriptor)).collect();
    let ranked: Vec<u32> = merged.iter().map(|&(id, _)| id).collect();
    let picked = sample_diverse(&ranked, &descriptors, cfg.diversity_threshold, cfg.k_outputs);
    let score_of: BTreeMap<u32, f64> = merged.iter().copied().collect();
    let chosen = picked
        .into_iter()
        .map(|id| SelectedStyle {
            entry: by_id[&id].clone(),
            score: score_of[&id],
        })
        .collect();
    Ok(Selection {
        clusters,
        merged,
        chosen,
    })
}

/// Full run-time selection for an input photo.
pub fn select_styles(
    input: &RgbImage,
    index: &StyleIndex,
    provider: &dyn FeatureProvider,
    cfg: &SelectionConfig,
) -> Result<Selection, SelectionError> {
    let feature = provider.feature(input)?;
    select_for_feature(&feature, index, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{FixedFeature, RankedStyle};
    use crate::mat2::Mat2;
    use crate::stylestats::{ChromaStats, LumaFeature};
    use proptest::prelude::*;

    fn descriptor_at(mean: [f64; 2]) -> StyleDescriptor {
        StyleDescriptor {
            chroma: ChromaStats::new(mean, Mat2::symmetric(20.0, 2.0, 15.0)),
            luma: LumaFeature::new(std::array::from_fn(LumaFeature::level)).unwrap(),
        }
    }

    fn table(lists: &[&[(u32, f32)]]) -> RankingTable {
        RankingTable::new(
            lists
                .iter()
                .map(|l| {
                    l.iter()
                        .map(|&(style_id, score)| RankedStyle { style_id, score })
                        .collect()
                })
                .collect(),
        )
    }

    fn feat(v: &[f32]) -> SemanticFeature {
        SemanticFeature::new(v.to_vec()).unwrap()
    }

    #[test]
    fn nearest_cluster_exact_center() {
        let m = ClusterModel::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.6, 0.8]).unwrap();
        assert_eq!(nearest_clusters(&feat(&[0.6, 0.8]), &m, 1).unwrap(), vec![2]);
        let all = nearest_clusters(&feat(&[0.6, 0.8]), &m, 3).unwrap();
        assert_eq!(all, vec![2, 1, 0]);
    }

    #[test]
    fn nearest_clusters_dimension_mismatch() {
        let m = ClusterModel::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            nearest_clusters(&feat(&[1.0, 0.0, 0.0]), &m, 1),
            Err(CatalogError::DimensionMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn nearest_clusters_match_full_sort(
            centers in proptest::collection::vec(-1.0f32..1.0, 8 * 4),
            f in proptest::collection::vec(0.01f32..1.0, 4),
        ) {
            let m = ClusterModel::new(8, 4, centers.clone()).unwrap();
            let f = feat(&f);
            let mut oracle: Vec<(f64, usize)> = (0..8)
                .map(|c| {
                    let d: f64 = f.as_slice().iter().zip(&centers[c * 4..c * 4 + 4])
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
                    (d, c)
                })
                .collect();
            oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = oracle.iter().take(3).map(|x| x.1).collect();
            prop_assert_eq!(nearest_clusters(&f, &m, 3).unwrap(), expect);
        }
    }

    #[test]
    fn merge_single_cluster_unchanged() {
        let t = table(&[&[(4, 0.9), (1, 0.5), (2, 0.5)]]);
        let merged = merge_rankings(&t, &[0]).unwrap();
        assert_eq!(merged.iter().map(|x| x.0).collect::<Vec<_>>(), vec![4, 1, 2]);
    }

    #[test]
    fn merge_sums_scores() {
        let t = table(&[&[(1, 0.9), (2, 0.1)], &[(2, 0.85), (1, 0.0)]]);
        let merged = merge_rankings(&t, &[0, 1]).unwrap();
        assert_eq!(merged[0].0, 2);
        assert!((merged[0].1 - 0.95).abs() < 1e-6);
        assert_eq!(merged[1].0, 1);
        assert!((merged[1].1 - 0.9).abs() < 1e-6);
    }

    #[test]
    fn merge_identical_clusters_doubles() {
        let t = table(&[&[(3, 0.7), (1, 0.2)], &[(3, 0.7), (1, 0.2)]]);
        let merged = merge_rankings(&t, &[0, 1]).unwrap();
        assert_eq!(merged, vec![(3, 2.0 * 0.7f32 as f64), (1, 2.0 * 0.2f32 as f64)]);
    }

    #[test]
    fn merge_unknown_cluster() {
        let t = table(&[&[(1, 0.5)]]);
        assert!(matches!(
            merge_rankings(&t, &[0, 3]),
            Err(SelectionError::UnknownCluster(3))
        ));
    }

    #[test]
    fn threshold_zero_is_top_k() {
        let styles: BTreeMap<u32, StyleDescriptor> = (0..6).map(|i| (i, descriptor_at([0.0, 0.0]))).collect();
        assert_eq!(sample_diverse(&[5, 3, 1, 0, 2, 4], &styles, 0.0, 4), vec![5, 3, 1, 0]);
    }

    #[test]
    fn identical_styles_yield_one() {
        let styles: BTreeMap<u32, StyleDescriptor> = (0..6).map(|i| (i, descriptor_at([1.0, 2.0]))).collect();
        assert_eq!(sample_diverse(&[2, 0, 1, 3, 4, 5], &styles, 7.5, 5), vec![2]);
    }

    #[test]
    fn triangle_example() {
        // equal covariances, so distances are the distances between means: 5, 10, 10
        let h = 93.75f64.sqrt();
        let styles: BTreeMap<u32, StyleDescriptor> = [(1, [0.0, 0.0]), (2, [5.0, 0.0]), (3, [2.5, h])]
            .into_iter()
            .map(|(id, m)| (id, descriptor_at(m)))
            .collect();
        assert!((frechet(&styles[&1].chroma, &styles[&2].chroma) - 5.0).abs() < 1e-9);
        assert!((frechet(&styles[&1].chroma, &styles[&3].chroma) - 10.0).abs() < 1e-9);
        assert!((frechet(&styles[&2].chroma, &styles[&3].chroma) - 10.0).abs() < 1e-9);
        assert_eq!(sample_diverse(&[1, 2, 3], &styles, 7.5, 3), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn sampling_properties(
            means in proptest::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 2..20),
            t1 in 0.0f64..20.0,
            t2 in 0.0f64..20.0,
            k in 1usize..8,
        ) {
            let styles: BTreeMap<u32, StyleDescriptor> = means
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| (i as u32, descriptor_at([a, b])))
                .collect();
            let ranked: Vec<u32> = (0..means.len() as u32).rev().collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let a = sample_diverse(&ranked, &styles, lo, k);
            let b = sample_diverse(&ranked, &styles, hi, k);
            prop_assert!(b.len() <= a.len());
            prop_assert_eq!(a[0], ranked[0]);
            // subsequence of the ranking
            let mut pos = ranked.iter();
            prop_assert!(b.iter().all(|id| pos.any(|r| r == id)));
            for (i, x) in b.iter().enumerate() {
                for y in &b[i + 1..] {
                    prop_assert!(frechet(&styles[x].chroma, &styles[y].chroma) >= hi);
                }
            }
        }
    }

    fn index_one_cluster() -> StyleIndex {
        let styles: Vec<StyleEntry> = (0..6)
            .map(|i| StyleEntry {
                style_id: i,
                source_path: format!("s{i}.png"),
                descriptor: descriptor_at([20.0 * i as f64, 0.0]),
            })
            .collect();
        StyleIndex {
            model: ClusterModel::new(1, 2, vec![1.0, 0.0]).unwrap(),
            rankings: table(&[&[(2, 0.9), (0, 0.8), (5, 0.7), (1, 0.6), (3, 0.5), (4, 0.4)]]),
            styles,
            fingerprint: String::new(),
        }
    }

    #[test]
    fn one_cluster_far_styles_top_k() {
        let index = index_one_cluster();
        let provider = FixedFeature(feat(&[1.0, 0.0]));
        let input = RgbImage::new(1, 1, vec![[0.5; 3]]).unwrap();
        let cfg = SelectionConfig::default();
        let sel = select_styles(&input, &index, &provider, &cfg).unwrap();
        let ids: Vec<u32> = sel.chosen.iter().map(|s| s.entry.style_id).collect();
        assert_eq!(ids, vec![2, 0, 5, 1, 3]);
        assert_eq!(sel.clusters, vec![0]);
        assert_eq!(select_styles(&input, &index, &provider, &cfg).unwrap(), sel);
    }

    #[test]
    fn invalid_config_reports_everything() {
        let cfg = SelectionConfig {
            n_clusters: 0,
            diversity_threshold: -1.0,
            k_outputs: 0,
        };
        assert_eq!(cfg.violations().len(), 3);
        let index = index_one_cluster();
        assert!(matches!(
            select_for_feature(&feat(&[1.0, 0.0]), &index, &cfg),
            Err(SelectionError::InvalidConfig(v)) if v.len() == 3
        ));
    }
}
