use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use autostyle::catalog::{
    build_ranking, fingerprint_of, kmeans_cluster, load_external_features, load_index, read_feature_file, save_index,
    BuiltinFeatures, FeatureProvider, FixedFeature, IndexError, SEMANTIC_DIM,
};
use autostyle::imgio::{decode_image, encode_image, ImageError, OutputFormat};
use autostyle::selection::{merge_rankings, nearest_clusters, select_for_feature};
use autostyle::similarity::frechet;
use autostyle::transfer::{describe_image, parse_faces, prepare_input, stylize_prepared, transfer_style};
use autostyle::{
    ChromaMap, FaceRegion, RgbImage, SemanticFeature, StyleDescriptor, StyleEntry, StyleIndex, ToneCurveParams,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::config::CliConfig;
use crate::CliError;

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];
const FEATURE_MANIFEST: &str = "manifest.json";

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn decode(path: &Path) -> Result<RgbImage, CliError> {
    decode_image(path).map_err(|e| match e {
        ImageError::Io(io) => CliError::Input(format!("{}: {io}", path.display())),
        other => CliError::Input(other.to_string()),
    })
}

fn encode(img: &RgbImage, path: &Path, format: OutputFormat) -> Result<(), CliError> {
    encode_image(img, path, format).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn open_index(dir: &Path) -> Result<StyleIndex, CliError> {
    load_index(dir).map_err(|e| match e {
        IndexError::Io(io) => CliError::Input(format!("cannot read index {}: {io}", dir.display())),
        other => CliError::Input(format!("index {}: {other}", dir.display())),
    })
}

fn read_faces(path: Option<&Path>) -> Result<Vec<FaceRegion>, CliError> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?;
            parse_faces(&text).map_err(input_err)
        }
    }
}

/// Image files under `dir`, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Io(e.to_string()))?;
        let is_image = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if entry.file_type().is_file() && is_image {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

fn relative_key(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

// ---------------------------------------------------------------------------
// build-index

#[derive(Debug, Clone)]
pub struct BuildIndexArgs {
    pub photos: PathBuf,
    pub styles: PathBuf,
    /// Directory holding `manifest.json` (photo path → feature file).
    pub features: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSummary {
    pub photos: usize,
    pub styles: usize,
    pub k: usize,
    pub dim: usize,
    /// Photos per cluster.
    pub occupancy: Vec<usize>,
    pub warnings: Vec<String>,
}

impl BuildSummary {
    pub fn render(&self) -> String {
        let mut s = format!(
            "indexed {} photos and {} styles into {} clusters ({}-d features)\n",
            self.photos, self.styles, self.k, self.dim
        );
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for &n in &self.occupancy {
            *hist.entry(n).or_insert(0) += 1;
        }
        s.push_str("cluster occupancy (photos: clusters)\n");
        for (size, count) in hist {
            s.push_str(&format!("  {size:>5}: {count}\n"));
        }
        if !self.warnings.is_empty() {
            s.push_str(&format!("{} warning(s)\n", self.warnings.len()));
        }
        s
    }
}

/// Parameters the index depends on, hashed into its fingerprint.
#[derive(Serialize)]
struct BuildParams<'a> {
    transfer: &'a autostyle::TransferConfig,
    similarity: &'a autostyle::SimilarityParams,
    k: usize,
    seed: u64,
    features: &'a str,
}

type PhotoResult = Result<(StyleDescriptor, SemanticFeature), String>;

pub fn cmd_build_index(args: &BuildIndexArgs, cfg: &CliConfig) -> Result<BuildSummary, CliError> {
    let photo_paths = list_images(&args.photos)?;
    let style_paths = list_images(&args.styles)?;
    let external = match &args.features {
        Some(dir) => Some(load_external_features(dir, &dir.join(FEATURE_MANIFEST)).map_err(input_err)?),
        None => None,
    };

    let photo_results: Vec<PhotoResult> = photo_paths
        .par_iter()
        .map(|path| {
            let img = decode_image(path).map_err(|e| e.to_string())?;
            let descriptor = describe_image(&img, &cfg.transfer).map_err(|e| format!("{}: {e}", path.display()))?;
            let feature = match &external {
                Some(map) => {
                    let key = relative_key(&args.photos, path);
                    map.get(&key)
                        .cloned()
                        .ok_or_else(|| format!("{}: no external feature for {key:?}", path.display()))?
                }
                None => BuiltinFeatures.feature(&img).map_err(|e| e.to_string())?,
            };
            Ok((descriptor, feature))
        })
        .collect();

    let mut warnings = Vec::new();
    let mut collection = Vec::new();
    for r in photo_results {
        match r {
            Ok(item) => collection.push(item),
            Err(e) => {
                log::warn!("skipping photo: {e}");
                warnings.push(format!("skipped photo: {e}"));
            }
        }
    }

    let style_results: Vec<Result<StyleDescriptor, String>> = style_paths
        .par_iter()
        .map(|path| {
            let img = decode_image(path).map_err(|e| e.to_string())?;
            describe_image(&img, &cfg.transfer).map_err(|e| format!("{}: {e}", path.display()))
        })
        .collect();
    let mut styles = Vec::new();
    for (path, r) in style_paths.iter().zip(style_results) {
        match r {
            Ok(descriptor) => styles.push(StyleEntry {
                style_id: styles.len() as u32,
                source_path: relative_key(&args.styles, path),
                descriptor,
            }),
            Err(e) => {
                log::warn!("skipping style: {e}");
                warnings.push(format!("skipped style: {e}"));
            }
        }
    }

    if collection.is_empty() {
        return Err(CliError::Input(format!(
            "no usable photos in {}",
            args.photos.display()
        )));
    }
    if styles.is_empty() {
        return Err(CliError::Input(format!(
            "no usable styles in {}",
            args.styles.display()
        )));
    }

    let k = cfg.kmeans_k.min(collection.len());
    if k < cfg.kmeans_k {
        let msg = format!(
            "k = {} exceeds the {} photos; using k = {k}",
            cfg.kmeans_k,
            collection.len()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let features: Vec<SemanticFeature> = collection.iter().map(|(_, f)| f.clone()).collect();
    let model = kmeans_cluster(&features, k, cfg.seed).map_err(input_err)?;
    let pairs: Vec<(SemanticFeature, StyleDescriptor)> = collection.into_iter().map(|(d, f)| (f, d)).collect();
    let rankings = build_ranking(&model, &pairs, &styles, &cfg.similarity).map_err(input_err)?;

    let mut occupancy = vec![0usize; k];
    for (f, _) in &pairs {
        occupancy[autostyle::catalog::assign_cluster(f, &model).map_err(input_err)?] += 1;
    }

    let fingerprint = fingerprint_of(&BuildParams {
        transfer: &cfg.transfer,
        similarity: &cfg.similarity,
        k,
        seed: cfg.seed,
        features: if args.features.is_some() { "external" } else { "builtin" },
    });
    let dim = model.dim();
    let index = StyleIndex {
        model,
        rankings,
        styles,
        fingerprint,
    };
    save_index(&index, &args.out).map_err(|e| CliError::Io(format!("writing {}: {e}", args.out.display())))?;

    Ok(BuildSummary {
        photos: pairs.len(),
        styles: index.styles.len(),
        k,
        dim,
        occupancy,
        warnings,
    })
}

// ---------------------------------------------------------------------------
// stylize

#[derive(Debug, Clone)]
pub struct StylizeArgs {
    pub index: PathBuf,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub faces: Option<PathBuf>,
    /// Precomputed semantic feature for the input.
    pub feature: Option<PathBuf>,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedOutput {
    pub style_id: u32,
    pub score: f64,
    pub m: f64,
    pub delta: f64,
    pub source_path: String,
    pub output: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub feature: f64,
    pub select: f64,
    /// Preprocessing plus every transfer, excluding image encoding.
    pub transfer_total: f64,
    pub write: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub input: String,
    pub clusters: Vec<usize>,
    pub threshold: f64,
    pub selected: Vec<SelectedOutput>,
    pub pairwise_frechet: Vec<Vec<f64>>,
    pub timings_ms: Timings,
    pub warnings: Vec<String>,
}

pub const REPORT_FILE: &str = "report.json";

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Feature for a run-time input: the given file, or the built-in
/// descriptor when the index was built with it.
fn input_feature(index: &StyleIndex, img: &RgbImage, file: Option<&Path>) -> Result<SemanticFeature, CliError> {
    let provider: Box<dyn FeatureProvider> = match file {
        Some(p) => Box::new(FixedFeature(read_feature_file(p).map_err(input_err)?)),
        None => Box::new(BuiltinFeatures),
    };
    if provider.dim() != index.model.dim() {
        let hint = if file.is_none() && index.model.dim() != SEMANTIC_DIM {
            "; the index uses external features, pass --feature"
        } else {
            ""
        };
        return Err(CliError::Input(format!(
            "feature dimension {} does not match index dimension {}{hint}",
            provider.dim(),
            index.model.dim()
        )));
    }
    provider.feature(img).map_err(input_err)
}

pub fn cmd_stylize(args: &StylizeArgs, cfg: &CliConfig) -> Result<Report, CliError> {
    let index = open_index(&args.index)?;
    let input = decode(&args.input)?;
    let faces = read_faces(args.faces.as_deref())?;
    for f in &faces {
        f.validate(input.width(), input.height()).map_err(input_err)?;
    }
    let mut warnings = Vec::new();

    let t = Instant::now();
    let feature = input_feature(&index, &input, args.feature.as_deref())?;
    let feature_ms = ms_since(t);

    let t = Instant::now();
    let selection = select_for_feature(&feature, &index, &cfg.selection).map_err(input_err)?;
    let select_ms = ms_since(t);

    let t = Instant::now();
    let prepared = prepare_input(&input, &cfg.transfer).map_err(input_err)?;
    let results = selection
        .chosen
        .par_iter()
        .map(|s| stylize_prepared(&prepared, &s.entry.descriptor, &faces, &cfg.transfer))
        .collect::<Result<Vec<_>, _>>()
        .map_err(input_err)?;
    let transfer_ms = ms_since(t);

    if !prepared.stretched {
        warnings.push("input lightness is constant; range stretch skipped".into());
    }
    let wanted = cfg.selection.k_outputs;
    if selection.chosen.len() < wanted {
        let msg = format!(
            "only {} of {wanted} styles are at least {} apart; returning fewer outputs",
            selection.chosen.len(),
            cfg.selection.diversity_threshold
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let t = Instant::now();
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Io(format!("{}: {e}", args.out_dir.display())))?;
    let stem = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into());
    let names: Vec<String> = selection
        .chosen
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            format!(
                "{stem}_style{}_{}.{}",
                rank + 1,
                s.entry.style_id,
                args.format.extension()
            )
        })
        .collect();
    names
        .par_iter()
        .zip(&results)
        .try_for_each(|(name, r)| encode(&r.image, &args.out_dir.join(name), args.format))?;
    let write_ms = ms_since(t);

    let chroma: Vec<_> = selection.chosen.iter().map(|s| s.entry.descriptor.chroma).collect();
    let pairwise_frechet = chroma
        .iter()
        .map(|p| chroma.iter().map(|q| frechet(p, q)).collect())
        .collect();
    let selected = selection
        .chosen
        .iter()
        .zip(&results)
        .zip(names)
        .map(|((s, r), output)| SelectedOutput {
            style_id: s.entry.style_id,
            score: s.score,
            m: r.tone.m,
            delta: r.tone.delta,
            source_path: s.entry.source_path.clone(),
            output,
        })
        .collect();

    let report = Report {
        input: args.input.display().to_string(),
        clusters: selection.clusters,
        threshold: cfg.selection.diversity_threshold,
        selected,
        pairwise_frechet,
        timings_ms: Timings {
            feature: feature_ms,
            select: select_ms,
            transfer_total: transfer_ms,
            write: write_ms,
        },
        warnings,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    let path = args.out_dir.join(REPORT_FILE);
    fs::write(&path, json + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// transfer

#[derive(Debug, Clone)]
pub struct TransferArgs {
    pub input: PathBuf,
    pub style: PathBuf,
    pub out: PathBuf,
    pub faces: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone)]
pub struct TransferSummary {
    pub tone: ToneCurveParams,
    pub chroma: ChromaMap,
}

impl TransferSummary {
    pub fn render(&self) -> String {
        let t = &self.chroma.t.0;
        format!(
            "tone curve: m = {:.6}, delta = {:.6}\nchroma map T = [[{:.6}, {:.6}], [{:.6}, {:.6}]]\n",
            self.tone.m, self.tone.delta, t[0][0], t[0][1], t[1][0], t[1][1]
        )
    }
}

/// Output format from the flag, else the file extension, else PNG.
fn output_format(flag: Option<OutputFormat>, out: &Path) -> OutputFormat {
    flag.or_else(|| out.extension()?.to_str()?.parse().ok())
        .unwrap_or(OutputFormat::Png)
}

pub fn cmd_transfer(args: &TransferArgs, cfg: &CliConfig) -> Result<TransferSummary, CliError> {
    let input = decode(&args.input)?;
    let style_img = decode(&args.style)?;
    let faces = read_faces(args.faces.as_deref())?;
    let style = describe_image(&style_img, &cfg.transfer).map_err(input_err)?;
    let result = transfer_style(&input, &style, &faces, &cfg.transfer).map_err(input_err)?;
    encode(&result.image, &args.out, output_format(args.format, &args.out))?;
    Ok(TransferSummary {
        tone: result.tone,
        chroma: result.chroma,
    })
}

// ---------------------------------------------------------------------------
// rank

#[derive(Debug, Clone)]
pub struct RankArgs {
    pub index: PathBuf,
    pub input: PathBuf,
    pub top: usize,
    pub feature: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub style_id: u32,
    pub score: f64,
    pub source_path: String,
}

pub fn cmd_rank(args: &RankArgs, cfg: &CliConfig) -> Result<Vec<RankRow>, CliError> {
    let index = open_index(&args.index)?;
    let input = decode(&args.input)?;
    let feature = input_feature(&index, &input, args.feature.as_deref())?;
    let clusters = nearest_clusters(&feature, &index.model, cfg.selection.n_clusters).map_err(input_err)?;
    let merged = merge_rankings(&index.rankings, &clusters).map_err(input_err)?;
    Ok(merged
        .into_iter()
        .take(args.top)
        .map(|(style_id, score)| RankRow {
            style_id,
            score,
            source_path: index.style(style_id).map(|s| s.source_path.clone()).unwrap_or_default(),
        })
        .collect())
}

pub fn render_rank(rows: &[RankRow]) -> String {
    let mut s = String::from("rank\tstyle_id\tscore\tsource\n");
    for (i, r) in rows.iter().enumerate() {
        s.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\n",
            i + 1,
            r.style_id,
            r.score,
            r.source_path
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_keys_use_forward_slashes() {
        let root = Path::new("/data/photos");
        assert_eq!(relative_key(root, Path::new("/data/photos/a/b.png")), "a/b.png");
    }

    #[test]
    fn format_inference() {
        assert_eq!(output_format(None, Path::new("x.jpg")), OutputFormat::Jpeg);
        assert_eq!(output_format(None, Path::new("x.out")), OutputFormat::Png);
        assert_eq!(
            output_format(Some(OutputFormat::Png), Path::new("x.jpeg")),
            OutputFormat::Png
        );
    }

    #[test]
    fn listing_filters_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.PNG", "a.jpg", "notes.txt", "c.jpeg"] {
            fs::write(dir.path().join(name), b"x").unwrap();
        }
        let found: Vec<String> = list_images(dir.path())
            .unwrap()
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(found, vec!["a.jpg", "b.PNG", "c.jpeg"]);
        assert!(matches!(
            list_images(&dir.path().join("missing")),
            Err(CliError::Input(_))
        ));
    }

    #[test]
    fn rank_rendering() {
        let rows = vec![RankRow {
            style_id: 3,
            score: 1.5,
            source_path: "s.png".into(),
        }];
        assert!(render_rank(&rows).contains("1\t3\t1.500000\ts.png"));
    }
}
