use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::SemanticFeature;
use super::kmeans::{assign_cluster, ClusterModel};
use super::CatalogError;
use crate::similarity::{style_similarity, SimilarityParams};
use crate::stylestats::StyleDescriptor;

/// A curated style exemplar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleEntry {
    #[serde(rename = "id")]
    pub style_id: u32,
    pub source_path: String,
    pub descriptor: StyleDescriptor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedStyle {
    pub style_id: u32,
    pub score: f32,
}

/// Per-cluster style lists, each sorted by score descending with ties
/// broken by ascending style id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankingTable {
    clusters: Vec<Vec<RankedStyle>>,
}

impl RankingTable {
    pub fn new(clusters: Vec<Vec<RankedStyle>>) -> Self {
        Self { clusters }
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster(&self, k: usize) -> Option<&[RankedStyle]> {
        self.clusters.get(k).map(Vec::as_slice)
    }

    pub fn clusters(&self) -> &[Vec<RankedStyle>] {
        &self.clusters
    }
}

pub(crate) fn sort_ranking(list: &mut [RankedStyle]) {
    list.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.style_id.cmp(&b.style_id)));
}

/// Sums `values` in ascending order, so the result does not depend on the
/// order the values were produced in.
fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

/// Scores every style in every cluster by summing its style similarity to
/// each member photo, then sorts each cluster's list.
pub fn build_ranking(
    model: &ClusterModel,
    collection: &[(SemanticFeature, StyleDescriptor)],
    styles: &[StyleEntry],
    params: &SimilarityParams,
) -> Result<RankingTable, CatalogError> {
    if styles.is_empty() {
        return Err(CatalogError::Invalid("no styles to rank".into()));
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); model.k()];
    for (i, (feature, _)) in collection.iter().enumerate() {
        members[assign_cluster(feature, model)?].push(i);
    }

    let clusters = members
        .par_iter()
        .map(|ids| -> Result<Vec<RankedStyle>, CatalogError> {
            let mut list = Vec::with_capacity(styles.len());
            let mut votes = Vec::with_capacity(ids.len());
            for style in styles {
                votes.clear();
                for &i in ids {
                    votes.push(style_similarity(&collection[i].1, &style.descriptor, params)?);
                }
                list.push(RankedStyle {
                    style_id: style.style_id,
                    score: order_free_sum(&mut votes) as f32,
                });
            }
            sort_ranking(&mut list);
            Ok(list)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RankingTable { clusters })
}
