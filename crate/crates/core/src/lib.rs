//! Content-aware automatic photo stylization.
//!
//! The crate has two halves. The offline half ([`catalog`]) clusters a photo
//! collection by semantic content and lets every photo vote for the curated
//! style exemplars whose color and tone statistics it resembles, producing a
//! per-cluster style ranking. The online half ([`selection`] and [`transfer`])
//! maps an input photo to its nearest clusters, samples a diverse set of
//! highly ranked styles, and transfers each style's global chrominance and
//! luminance statistics onto the photo.
//!
//! All transfer math happens on [`colorspace::LabImage`], a planar CIELab
//! image whose lightness is normalized to `[0, 1]`.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod colorspace;
pub mod imgio;
pub mod mat2;
pub mod quantile;
pub mod selection;
pub mod similarity;
pub mod stylestats;
pub mod transfer;

pub use catalog::{ClusterModel, FeatureProvider, RankingTable, SemanticFeature, StyleEntry, StyleIndex};
pub use colorspace::LabImage;
pub use imgio::RgbImage;
pub use mat2::{Mat2, Vec2};
pub use selection::SelectionConfig;
pub use similarity::SimilarityParams;
pub use stylestats::{ChromaStats, LumaFeature, StyleDescriptor};
pub use transfer::{ChromaMap, FaceRegion, ToneCurveParams, TransferConfig};
