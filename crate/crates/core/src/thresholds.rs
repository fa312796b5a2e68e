//! Cluster-adaptive distance thresholds: tau_m is the p-th quantile of the
//! member-to-centroid cosine distances of cluster m.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::embedding::EmbeddingSet;
use crate::error::{Error, Result};

pub const DEFAULT_P: f64 = 0.999999;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 10;
/// Sweep grid used by the TPR report, as fractions.
pub const DEFAULT_P_GRID: [f64; 7] = [0.95, 0.99, 0.9999, 0.99999, 0.999999, 0.9999996, 0.9999999];

pub fn check_p(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidQuantile(p))
    }
}

/// Linear interpolation between order statistics at position `p * (n - 1)`.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    check_p(p)?;
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if p >= 1.0 {
        return sorted[n - 1];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// D_m for every cluster, each list in ascending keyword-id order.
pub fn intra_cluster_distances(clustering: &Clustering, set: &EmbeddingSet) -> Result<Vec<Vec<f64>>> {
    let dirs = clustering.centroid_directions()?;
    if dirs.dim() != set.dim() {
        return Err(Error::dims(dirs.dim(), set.dim()));
    }
    let mut out = vec![Vec::new(); clustering.m];
    for (k, v) in set.iter() {
        let c = clustering
            .cluster_of(k.id)
            .ok_or(Error::UnassignedKeyword(k.id))?;
        out[c].push(dirs.distance(c, v.as_slice()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub market: String,
    pub cluster_id: usize,
    pub size: usize,
    pub tau_distance: f64,
    pub tau_similarity: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdHeader {
    pub market: String,
    pub p: f64,
    pub min_cluster_size: usize,
    pub fallback_tau: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub market: String,
    pub p: f64,
    pub min_cluster_size: usize,
    pub fallback_tau: f64,
    pub rows: Vec<ThresholdRow>,
}

impl ThresholdTable {
    pub fn tau(&self, cluster: usize) -> Option<f64> {
        self.rows.get(cluster).map(|r| r.tau_distance)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let header = ThresholdHeader {
            market: self.market.clone(),
            p: self.p,
            min_cluster_size: self.min_cluster_size,
            fallback_tau: self.fallback_tau,
        };
        let mut out = serde_json::to_string(&header)?;
        out.push('\n');
        for row in &self.rows {
            out.push_str(&serde_json::to_string(row)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(Error::EmptyInput)?;
        let header: ThresholdHeader = serde_json::from_str(first)?;
        let rows: Vec<ThresholdRow> = lines
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        if rows.iter().enumerate().any(|(i, r)| r.cluster_id != i) {
            return Err(Error::InvalidArgument(
                "threshold rows must be ordered by cluster_id from 0".into(),
            ));
        }
        Ok(Self {
            market: header.market,
            p: header.p,
            min_cluster_size: header.min_cluster_size,
            fallback_tau: header.fallback_tau,
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Per-cluster quantile thresholds. Clusters smaller than
/// `min_cluster_size` take the quantile of the pooled distances instead.
pub fn build_threshold_table(
    clustering: &Clustering,
    set: &EmbeddingSet,
    p: f64,
    min_cluster_size: usize,
) -> Result<ThresholdTable> {
    check_p(p)?;
    let dists = intra_cluster_distances(clustering, set)?;
    let pooled: Vec<f64> = dists.iter().flatten().copied().collect();
    let fallback_tau = quantile(&pooled, p)?;
    let rows = dists
        .iter()
        .enumerate()
        .map(|(m, d)| {
            let fallback = d.is_empty() || d.len() < min_cluster_size;
            let tau = if fallback { fallback_tau } else { quantile(d, p)? };
            let tau = tau.clamp(0.0, 2.0);
            Ok(ThresholdRow {
                market: clustering.market.clone(),
                cluster_id: m,
                size: d.len(),
                tau_distance: tau,
                tau_similarity: 1.0 - tau,
                fallback,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdTable {
        market: clustering.market.clone(),
        p,
        min_cluster_size,
        fallback_tau,
        rows,
    })
}

/// Pearson correlation between cluster size and distance threshold.
pub fn threshold_size_correlation(table: &ThresholdTable) -> Result<f64> {
    let xs: Vec<f64> = table.rows.iter().map(|r| r.size as f64).collect();
    let ys: Vec<f64> = table.rows.iter().map(|r| r.tau_distance).collect();
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::dims(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateInput("need at least two rows".into()));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(xs) || constant(ys) {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Loads every threshold table in `paths`, keyed by market.
pub fn load_tables(paths: &[impl AsRef<Path>]) -> Result<BTreeMap<String, ThresholdTable>> {
    let mut out = BTreeMap::new();
    for p in paths {
        let t = ThresholdTable::load(p)?;
        out.insert(t.market.clone(), t);
    }
    Ok(out)
}
