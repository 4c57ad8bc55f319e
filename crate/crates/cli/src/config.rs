//! Tunables shared by all commands, loaded from a `key = value` file and
//! overridden by command-line flags.

use std::path::Path;

use autostyle::transfer::ToneTarget;
use autostyle::{SelectionConfig, SimilarityParams, TransferConfig};
use serde::Serialize;

/// Every tunable, with the published defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CliConfig {
    pub transfer: TransferConfig,
    pub similarity: SimilarityParams,
    pub selection: SelectionConfig,
    /// Requested number of semantic clusters; capped at the photo count.
    pub kmeans_k: usize,
    pub seed: u64,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            transfer: TransferConfig::default(),
            similarity: SimilarityParams::default(),
            selection: SelectionConfig::default(),
            kmeans_k: 1000,
            seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "gamma",
    "invert_gamma",
    "clip",
    "lambda_r",
    "tau",
    "tone_target",
    "lambda_l",
    "lambda_c",
    "epsilon",
    "normalize_luma",
    "n_clusters",
    "threshold",
    "k_outputs",
    "l_th",
    "gamma_th",
    "alpha_r",
    "alpha_c",
    "k",
    "seed",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

impl CliConfig {
    /// Sets one key. Range checks happen later in [`CliConfig::violations`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.transfer;
        match key {
            "gamma" => t.gamma = parse(key, value)?,
            "invert_gamma" => t.invert_gamma = parse(key, value)?,
            "clip" => t.clip_fraction = parse(key, value)?,
            "lambda_r" => t.lambda_r = parse(key, value)?,
            "tau" => t.tone.tau = parse(key, value)?,
            "tone_target" => {
                t.tone.target = match value {
                    "capped" => ToneTarget::Capped,
                    "literal" => ToneTarget::Literal,
                    _ => return Err(format!("tone_target: expected capped or literal, got {value:?}")),
                }
            }
            "l_th" => t.face.l_th = parse(key, value)?,
            "gamma_th" => t.face.gamma_th = parse(key, value)?,
            "alpha_r" => t.face.alpha_r = parse(key, value)?,
            "alpha_c" => t.face.alpha_c = parse(key, value)?,
            "lambda_l" => self.similarity.lambda_l = parse(key, value)?,
            "lambda_c" => self.similarity.lambda_c = parse(key, value)?,
            "epsilon" => self.similarity.epsilon = parse(key, value)?,
            "normalize_luma" => self.similarity.normalize_luma = parse(key, value)?,
            "n_clusters" => self.selection.n_clusters = parse(key, value)?,
            "threshold" => self.selection.diversity_threshold = parse(key, value)?,
            "k_outputs" => self.selection.k_outputs = parse(key, value)?,
            "k" => self.kmeans_k = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// All out-of-range values at once.
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.transfer.violations();
        v.extend(self.similarity.violations());
        v.extend(self.selection.violations());
        if self.kmeans_k == 0 {
            v.push("k must be >= 1".into());
        }
        v
    }

    /// Defaults, then the config file, then `overrides` (`key=value`) in order.
    /// Parse errors and range violations are collected and returned together.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self, Vec<String>> {
        let mut cfg = Self::default();
        let mut problems = Vec::new();
        if let Some(text) = file {
            for (no, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                match line.split_once('=') {
                    Some((k, val)) => {
                        if let Err(e) = cfg.set(k.trim(), val.trim()) {
                            problems.push(format!("config line {}: {e}", no + 1));
                        }
                    }
                    None => problems.push(format!("config line {}: expected key = value", no + 1)),
                }
            }
        }
        for o in overrides {
            match o.split_once('=') {
                Some((k, val)) => {
                    if let Err(e) = cfg.set(k.trim(), val.trim()) {
                        problems.push(e);
                    }
                }
                None => problems.push(format!("override {o:?}: expected key=value")),
            }
        }
        problems.extend(cfg.violations());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(problems)
        }
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Vec<String>> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| vec![format!("{}: {e}", p.display())])?),
            None => None,
        };
        Self::resolve(text.as_deref(), overrides)
    }
}
