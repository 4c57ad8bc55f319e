//! Command-line front end: offline index building and run-time stylization.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use autostyle::imgio::OutputFormat;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{
    cmd_build_index, cmd_rank, cmd_stylize, cmd_transfer, BuildIndexArgs, BuildSummary, RankArgs, RankRow, Report,
    StylizeArgs, TransferArgs, REPORT_FILE,
};
pub use config::CliConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    /// Missing, empty or undecodable inputs.
    #[error("{0}")]
    Input(String),
    /// Failure writing results.
    #[error("io error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "autostyle", version, about = "Content-aware automatic photo stylization")]
pub struct Cli {
    /// Config file with one `key = value` per line.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override a config key (repeatable); applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SelectionFlags {
    /// Number of nearest semantic clusters to merge.
    #[arg(long)]
    pub n_clusters: Option<usize>,
    /// Minimum Fréchet distance between selected styles.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Number of stylized outputs.
    #[arg(long)]
    pub k_outputs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cluster a photo collection and rank a style set per cluster.
    BuildIndex {
        #[arg(long)]
        photos: PathBuf,
        #[arg(long)]
        styles: PathBuf,
        /// Directory with external features and a manifest.json mapping
        /// photo paths (relative to --photos) to feature files.
        #[arg(long)]
        features: Option<PathBuf>,
        /// Number of semantic clusters.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce several diverse stylizations of one photo.
    Stylize {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Face boxes as JSON: [{"cx":..,"cy":..,"r":..}].
        #[arg(long)]
        faces: Option<PathBuf>,
        /// Precomputed semantic feature file for the input.
        #[arg(long)]
        feature: Option<PathBuf>,
        #[arg(long, default_value = "png")]
        format: OutputFormat,
        #[command(flatten)]
        selection: SelectionFlags,
    },
    /// Transfer the look of one image onto another.
    Transfer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        style: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        faces: Option<PathBuf>,
        /// Defaults to the output extension.
        #[arg(long)]
        format: Option<OutputFormat>,
    },
    /// Print the merged style ranking for a photo.
    Rank {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        feature: Option<PathBuf>,
        #[arg(long)]
        n_clusters: Option<usize>,
    },
}

fn push<T: ToString>(out: &mut Vec<String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push(format!("{key}={}", v.to_string()));
    }
}

impl Cli {
    /// `--set` values followed by dedicated flags, which take precedence.
    fn overrides(&self) -> Vec<String> {
        let mut o = self.set.clone();
        match &self.command {
            Command::BuildIndex { k, seed, .. } => {
                push(&mut o, "k", k);
                push(&mut o, "seed", seed);
            }
            Command::Stylize { selection, .. } => {
                push(&mut o, "n_clusters", &selection.n_clusters);
                push(&mut o, "threshold", &selection.threshold);
                push(&mut o, "k_outputs", &selection.k_outputs);
            }
            Command::Rank { n_clusters, .. } => push(&mut o, "n_clusters", n_clusters),
            Command::Transfer { .. } => {}
        }
        o
    }

    pub fn resolve_config(&self) -> Result<CliConfig, CliError> {
        CliConfig::load(self.config.as_deref(), &self.overrides()).map_err(CliError::Config)
    }
}

/// Runs one command and returns what should go to stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::BuildIndex {
            photos,
            styles,
            features,
            out,
            ..
        } => {
            let args = BuildIndexArgs {
                photos: photos.clone(),
                styles: styles.clone(),
                features: features.clone(),
                out: out.clone(),
            };
            Ok(cmd_build_index(&args, &cfg)?.render())
        }
        Command::Stylize {
            index,
            input,
            out,
            faces,
            feature,
            format,
            ..
        } => {
            let args = StylizeArgs {
                index: index.clone(),
                input: input.clone(),
                out_dir: out.clone(),
                faces: faces.clone(),
                feature: feature.clone(),
                format: *format,
            };
            let report = cmd_stylize(&args, &cfg)?;
            let mut s = String::new();
            for o in &report.selected {
                s.push_str(&format!(
                    "{}  style {} (score {:.4}, m {:.4}, delta {:.4})\n",
                    o.output, o.style_id, o.score, o.m, o.delta
                ));
            }
            for w in &report.warnings {
                s.push_str(&format!("warning: {w}\n"));
            }
            s.push_str(&format!("report: {}\n", out.join(REPORT_FILE).display()));
            Ok(s)
        }
        Command::Transfer {
            input,
            style,
            out,
            faces,
            format,
        } => {
            let args = TransferArgs {
                input: input.clone(),
                style: style.clone(),
                out: out.clone(),
                faces: faces.clone(),
                format: *format,
            };
            Ok(cmd_transfer(&args, &cfg)?.render())
        }
        Command::Rank {
            index,
            input,
            top,
            json,
            feature,
            ..
        } => {
            let args = RankArgs {
                index: index.clone(),
                input: input.clone(),
                top: *top,
                feature: feature.clone(),
            };
            let rows = cmd_rank(&args, &cfg)?;
            if *json {
                Ok(serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n")
            } else {
                Ok(commands::render_rank(&rows))
            }
        }
    }
}
