//! Pipeline configuration file. Every field is optional; command-line flags
//! take precedence over it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relevance::{MAX_ADJUSTMENT_DEPTH, MAX_ADJUSTMENT_TREES};
use crate::thresholds::check_p;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelinePaths {
    pub embeddings: Option<PathBuf>,
    pub campaigns: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub base_dataset: Option<PathBuf>,
    pub new_dataset: Option<PathBuf>,
    pub holdout_dataset: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineParams {
    pub dim: Option<usize>,
    #[serde(rename = "M")]
    pub clusters: Option<usize>,
    pub seed: Option<u64>,
    /// Fraction in (0, 1], or a percentage such as 99.9999.
    pub p: Option<f64>,
    pub min_cluster_size: Option<usize>,
    pub k_neighbors: Option<usize>,
    #[serde(rename = "T")]
    pub trees: Option<usize>,
    pub learning_rate: Option<f64>,
    pub t_r: Option<usize>,
    pub adjustment_depth: Option<usize>,
    pub allow_unbounded_adjustment: Option<bool>,
    pub precision_target: Option<f64>,
    pub markets: Option<Vec<String>>,
    pub port: Option<u16>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub paths: PipelinePaths,
    #[serde(default)]
    pub params: PipelineParams,
}

/// Accepts a fraction (`0.999999`), a percentage with a `%` suffix
/// (`99.9999%`) or a bare percentage of at least 50 (`99.9999`).
pub fn parse_p(s: &str) -> Result<f64> {
    let t = s.trim();
    let (num, percent) = match t.strip_suffix('%') {
        Some(n) => (n.trim(), true),
        None => (t, false),
    };
    let v: f64 = num
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("not a number: {s:?}")))?;
    let p = if percent || (50.0..=100.0).contains(&v) { v / 100.0 } else { v };
    check_p(p)?;
    Ok(p)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Enforces parameter bounds and normalizes `p` to a fraction.
    pub fn validate(&mut self) -> Result<()> {
        let p = &mut self.params;
        if p.dim.is_some_and(|d| d < 16) {
            return Err(bad("dim must be at least 16"));
        }
        if p.clusters == Some(0) {
            return Err(bad("M must be at least 1"));
        }
        if let Some(v) = p.p {
            p.p = Some(parse_p(&v.to_string())?);
        }
        if p.k_neighbors == Some(0) {
            return Err(bad("k_neighbors must be at least 1"));
        }
        if p.trees == Some(0) {
            return Err(bad("T must be at least 1"));
        }
        if p.learning_rate.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(bad("learning_rate must be positive"));
        }
        if p.t_r == Some(0) {
            return Err(bad("t_r must be at least 1"));
        }
        if !p.allow_unbounded_adjustment.unwrap_or(false) {
            if p.t_r.is_some_and(|t| t > MAX_ADJUSTMENT_TREES) {
                return Err(Error::ConstraintViolation(format!("t_r must be at most {MAX_ADJUSTMENT_TREES}")));
            }
            if p.adjustment_depth.is_some_and(|d| d > MAX_ADJUSTMENT_DEPTH) {
                return Err(Error::ConstraintViolation(format!(
                    "adjustment_depth must be at most {MAX_ADJUSTMENT_DEPTH}"
                )));
            }
        }
        if p.precision_target.is_some_and(|t| !(t > 0.0 && t <= 1.0)) {
            return Err(bad("precision_target must lie in (0, 1]"));
        }
        if p.markets.as_ref().is_some_and(|m| m.iter().any(|s| s.is_empty())) {
            return Err(bad("market names must be non-empty"));
        }
        Ok(())
    }
}
