//! On-disk index layout:
//!
//! ```text
//! manifest.json   version, k, dim, style count, parameter fingerprint, SHA-256 per file
//! centers.bin     "CACE", u32 version, u32 k, u32 dim, k·dim f32        (little endian)
//! rankings.bin    "CARK", u32 version, u32 k, u32 n, k·n (u32 id, f32 score)
//! styles.json     [{id, source_path, descriptor}]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::kmeans::ClusterModel;
use super::ranking::{RankedStyle, RankingTable, StyleEntry};

pub const INDEX_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const CENTERS: &str = "centers.bin";
const RANKINGS: &str = "rankings.bin";
const STYLES: &str = "styles.json";
const CENTERS_MAGIC: &[u8; 4] = b"CACE";
const RANKINGS_MAGIC: &[u8; 4] = b"CARK";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("index format version {found} is not supported (expected {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything the run-time stage needs: cluster centers, per-cluster
/// rankings and the style descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleIndex {
    pub model: ClusterModel,
    pub rankings: RankingTable,
    pub styles: Vec<StyleEntry>,
    /// Hash of the parameters the index was built with.
    pub fingerprint: String,
}

impl StyleIndex {
    /// Checks that rankings cover every style exactly once per cluster.
    pub fn validate(&self) -> Result<(), IndexError> {
        let ids: BTreeSet<u32> = self.styles.iter().map(|s| s.style_id).collect();
        if ids.len() != self.styles.len() {
            return Err(IndexError::CorruptIndex("duplicate style ids".into()));
        }
        if self.rankings.num_clusters() != self.model.k() {
            return Err(IndexError::CorruptIndex(format!(
                "{} ranking lists for {} clusters",
                self.rankings.num_clusters(),
                self.model.k()
            )));
        }
        for (k, list) in self.rankings.clusters().iter().enumerate() {
            let seen: BTreeSet<u32> = list.iter().map(|r| r.style_id).collect();
            if seen != ids || list.len() != ids.len() {
                return Err(IndexError::CorruptIndex(format!(
                    "cluster {k} does not rank every style exactly once"
                )));
            }
        }
        Ok(())
    }

    pub fn style(&self, id: u32) -> Option<&StyleEntry> {
        self.styles.iter().find(|s| s.style_id == id)
    }
}

/// SHA-256 hex digest of the JSON encoding of `params`.
pub fn fingerprint_of<T: Serialize>(params: &T) -> String {
    let json = serde_json::to_vec(params).expect("parameters serialize to JSON");
    hex::encode(Sha256::digest(json))
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    k: usize,
    dim: usize,
    n_styles: usize,
    fingerprint: String,
    checksums: BTreeMap<String, String>,
}

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn encode_centers(model: &ClusterModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * model.centers().len());
    buf.extend_from_slice(CENTERS_MAGIC);
    push_u32(&mut buf, INDEX_FORMAT_VERSION);
    push_u32(&mut buf, model.k() as u32);
    push_u32(&mut buf, model.dim() as u32);
    for v in model.centers() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

fn encode_rankings(table: &RankingTable, n: usize) -> Vec<u8> {
    let k = table.num_clusters();
    let mut buf = Vec::with_capacity(16 + 8 * k * n);
    buf.extend_from_slice(RANKINGS_MAGIC);
    push_u32(&mut buf, INDEX_FORMAT_VERSION);
    push_u32(&mut buf, k as u32);
    push_u32(&mut buf, n as u32);
    for list in table.clusters() {
        for r in list {
            push_u32(&mut buf, r.style_id);
            buf.extend_from_slice(&r.score.to_le_bytes());
        }
    }
    buf
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the index into `dir`, creating it if needed.
pub fn save_index(index: &StyleIndex, dir: &Path) -> Result<(), IndexError> {
    index.validate()?;
    fs::create_dir_all(dir)?;
    let n = index.styles.len();
    let mut styles_json = serde_json::to_vec_pretty(&index.styles)?;
    styles_json.push(b'\n');
    let payloads = [
        (CENTERS, encode_centers(&index.model)),
        (RANKINGS, encode_rankings(&index.rankings, n)),
        (STYLES, styles_json),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &payloads {
        fs::write(dir.join(name), bytes)?;
        checksums.insert(name.to_string(), digest(bytes));
    }
    let manifest = Manifest {
        version: INDEX_FORMAT_VERSION,
        k: index.model.k(),
        dim: index.model.dim(),
        n_styles: n,
        fingerprint: index.fingerprint.clone(),
        checksums,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

struct Reader<'a> {
    name: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(name: &'static str, bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self, IndexError> {
        if bytes.len() < 8 || &bytes[..4] != magic {
            return Err(IndexError::CorruptIndex(format!("{name}: bad magic")));
        }
        let mut r = Self { name, bytes, pos: 4 };
        let version = r.u32()?;
        if version != INDEX_FORMAT_VERSION {
            return Err(IndexError::VersionMismatch {
                found: version,
                supported: INDEX_FORMAT_VERSION,
            });
        }
        Ok(r)
    }

    fn take4(&mut self) -> Result<[u8; 4], IndexError> {
        let end = self.pos + 4;
        let chunk = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| IndexError::CorruptIndex(format!("{}: truncated", self.name)))?;
        self.pos = end;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take4()?))
    }

    fn f32(&mut self) -> Result<f32, IndexError> {
        Ok(f32::from_le_bytes(self.take4()?))
    }

    fn finish(self) -> Result<(), IndexError> {
        if self.pos != self.bytes.len() {
            return Err(IndexError::CorruptIndex(format!("{}: trailing bytes", self.name)));
        }
        Ok(())
    }
}

fn read_checked(dir: &Path, name: &'static str, manifest: &Manifest) -> Result<Vec<u8>, IndexError> {
    let bytes = fs::read(dir.join(name))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| IndexError::CorruptIndex(format!("manifest lacks a checksum for {name}")))?;
    if &digest(&bytes) != expected {
        return Err(IndexError::ChecksumMismatch(name.to_string()));
    }
    Ok(bytes)
}

/// Reads an index written by [`save_index`], verifying versions and checksums.
pub fn load_index(dir: &Path) -> Result<StyleIndex, IndexError> {
    let raw: serde_json::Value = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let found = raw
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| IndexError::CorruptIndex("manifest has no version".into()))?;
    if found != INDEX_FORMAT_VERSION as u64 {
        return Err(IndexError::VersionMismatch {
            found: found as u32,
            supported: INDEX_FORMAT_VERSION,
        });
    }
    let manifest: Manifest = serde_json::from_value(raw)?;

    let bytes = read_checked(dir, CENTERS, &manifest)?;
    let mut r = Reader::new(CENTERS, &bytes, CENTERS_MAGIC)?;
    let (k, dim) = (r.u32()? as usize, r.u32()? as usize);
    if k != manifest.k || dim != manifest.dim {
        return Err(IndexError::CorruptIndex("centers.bin disagrees with manifest".into()));
    }
    let centers = (0..k * dim).map(|_| r.f32()).collect::<Result<Vec<_>, _>>()?;
    r.finish()?;
    let model = ClusterModel::new(k, dim, centers).map_err(|e| IndexError::CorruptIndex(e.to_string()))?;

    let bytes = read_checked(dir, RANKINGS, &manifest)?;
    let mut r = Reader::new(RANKINGS, &bytes, RANKINGS_MAGIC)?;
    let (rk, n) = (r.u32()? as usize, r.u32()? as usize);
    if rk != k || n != manifest.n_styles {
        return Err(IndexError::CorruptIndex("rankings.bin disagrees with manifest".into()));
    }
    let mut clusters = Vec::with_capacity(k);
    for _ in 0..k {
        let list = (0..n)
            .map(|_| {
                Ok(RankedStyle {
                    style_id: r.u32()?,
                    score: r.f32()?,
                })
            })
            .collect::<Result<Vec<_>, IndexError>>()?;
        clusters.push(list);
    }
    r.finish()?;

    let bytes = read_checked(dir, STYLES, &manifest)?;
    let styles: Vec<StyleEntry> = serde_json::from_slice(&bytes)?;

    let index = StyleIndex {
        model,
        rankings: RankingTable::new(clusters),
        styles,
        fingerprint: manifest.fingerprint,
    };
    index.validate()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat2::Mat2;
    use crate::stylestats::{ChromaStats, LumaFeature, StyleDescriptor};

    pub(crate) fn small_index() -> StyleIndex {
        let styles: Vec<StyleEntry> = (0..3)
            .map(|i| StyleEntry {
                style_id: i,
                source_path: format!("styles/s{i}.jpg"),
                descriptor: StyleDescriptor {
                    chroma: ChromaStats::new(
                        [1.0 / (i as f64 + 3.0), -0.1 * i as f64],
                        Mat2::symmetric(10.0 + i as f64 / 7.0, 0.3, 20.0),
                    ),
                    luma: LumaFeature::new(std::array::from_fn(|j| {
                        LumaFeature::level(j).powf(1.1 + i as f64 / 10.0)
                    }))
                    .unwrap(),
                },
            })
            .collect();
        let rankings = RankingTable::new(vec![
            vec![
                RankedStyle {
                    style_id: 2,
                    score: 0.7,
                },
                RankedStyle {
                    style_id: 0,
                    score: 0.1 / 3.0,
                },
                RankedStyle {
                    style_id: 1,
                    score: 0.0,
                },
            ],
            vec![
                RankedStyle {
                    style_id: 0,
                    score: 1.5,
                },
                RankedStyle {
                    style_id: 1,
                    score: 1.5,
                },
                RankedStyle {
                    style_id: 2,
                    score: 1e-30,
                },
            ],
        ]);
        StyleIndex {
            model: ClusterModel::new(2, 3, vec![0.1, 0.2, 0.3, -0.5, 1.0 / 3.0, 0.7]).unwrap(),
            rankings,
            styles,
            fingerprint: fingerprint_of(&("k", 2)),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let index = small_index();
        save_index(&index, dir.path()).unwrap();
        assert_eq!(load_index(dir.path()).unwrap(), index);
    }

    #[test]
    fn truncated_centers_detected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&small_index(), dir.path()).unwrap();
        let path = dir.path().join(CENTERS);
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_index(dir.path()), Err(IndexError::ChecksumMismatch(_))));
    }

    #[test]
    fn newer_manifest_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_index(&small_index(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(IndexError::VersionMismatch { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn payload_version_checked_too() {
        let dir = tempfile::tempdir().unwrap();
        let index = small_index();
        save_index(&index, dir.path()).unwrap();
        // rewrite centers.bin with version 2 and a matching checksum
        let path = dir.path().join(CENTERS);
        let mut bytes = fs::read(&path).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        let mpath = dir.path().join(MANIFEST);
        let mut manifest: Manifest = serde_json::from_slice(&fs::read(&mpath).unwrap()).unwrap();
        manifest.checksums.insert(CENTERS.into(), digest(&bytes));
        fs::write(&mpath, serde_json::to_vec(&manifest).unwrap()).unwrap();
        assert!(matches!(
            load_index(dir.path()),
            Err(IndexError::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn incomplete_rankings_rejected_on_save() {
        let mut index = small_index();
        index.rankings = RankingTable::new(vec![vec![], vec![]]);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            save_index(&index, dir.path()),
            Err(IndexError::CorruptIndex(_))
        ));
    }

    #[test]
    fn missing_directory() {
        assert!(matches!(
            load_index(Path::new("/nonexistent/index")),
            Err(IndexError::Io(_))
        ));
    }
}
