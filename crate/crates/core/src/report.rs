//! Plot-ready reports: TPR against the threshold quantile, distribution of
//! cluster thresholds, and per-grade relevance RMSE against a baseline.
//!
//! TPR here is measured over the labeled pairs an expansion accepts:
//! `tpr = |accepted ∩ label 1| / |accepted ∩ labeled|`, reported with the
//! consistency filters off (raw) and on (filtered). A p whose expansions
//! accept no labeled pair reports 0.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::Clustering;
use crate::embedding::{fallback_embed, EmbeddingSet, EmbeddingVector, KeywordRef};
use crate::error::{Error, Result};
use crate::expansion::{expand_with, FilterConfig};
use crate::index::FlatIndex;
use crate::relevance::{stable_mean, Dataset, GbdtModel, Predict, StackedModel};
use crate::thresholds::{build_threshold_table, check_p, threshold_size_correlation, ThresholdTable};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub origin: String,
    pub variant: String,
    pub label: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpansionLabelSet {
    pub rows: Vec<LabeledPair>,
}

impl ExpansionLabelSet {
    /// `origin<TAB>variant<TAB>0|1`; blank lines and `#` comments skipped.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let parse_err = |message: String| Error::Parse { line: lineno, message };
            if f.len() != 3 {
                return Err(parse_err("expected origin<TAB>variant<TAB>label".into()));
            }
            let label = match f[2].trim() {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(format!("label must be 0 or 1, got {other:?}"))),
            };
            if !seen.insert((f[0].to_string(), f[1].to_string())) {
                return Err(parse_err(format!("duplicate pair {:?} -> {:?}", f[0], f[1])));
            }
            rows.push(LabeledPair {
                origin: f[0].to_string(),
                variant: f[1].to_string(),
                label,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_tsv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn positives(&self) -> usize {
        self.rows.iter().filter(|r| r.label == 1).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprRow {
    pub p: f64,
    pub tpr_raw: f64,
    pub tpr_filtered: f64,
    pub tpr_normalized: f64,
}

#[derive(Debug, Clone)]
pub struct TprParams {
    pub k_neighbors: usize,
    pub min_cluster_size: usize,
    pub filters: FilterConfig,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One row per p, in input order. The largest p is the normalization
/// reference and carries exactly 100.
pub fn tpr_sweep(
    set: &EmbeddingSet,
    clustering: &Clustering,
    labels: &ExpansionLabelSet,
    p_list: &[f64],
    params: &TprParams,
) -> Result<Vec<TprRow>> {
    if p_list.is_empty() {
        return Err(Error::EmptyInput);
    }
    for &p in p_list {
        check_p(p)?;
    }
    if labels.positives() == 0 {
        return Err(Error::NoPositivePairs(format!("{} labeled pairs, none positive", labels.rows.len())));
    }
    let label_of: HashMap<(&str, &str), u8> = labels
        .rows
        .iter()
        .map(|r| ((r.origin.as_str(), r.variant.as_str()), r.label))
        .collect();
    let mut origins: Vec<&str> = labels.rows.iter().map(|r| r.origin.as_str()).collect();
    origins.sort_unstable();
    origins.dedup();
    let resolved: Vec<(KeywordRef, EmbeddingVector)> = origins
        .iter()
        .map(|o| match set.lookup(o) {
            Some((k, v)) => Ok((k.clone(), v.clone())),
            None => Ok((
                KeywordRef {
                    market: set.market().to_string(),
                    text: o.to_string(),
                    id: set.len() as u64,
                },
                fallback_embed(o, set.dim())?,
            )),
        })
        .collect::<Result<_>>()?;
    let index = FlatIndex::build(set)?;
    let centroids = clustering.centroid_directions()?;

    let counts: Vec<(usize, usize, usize, usize)> = p_list
        .par_iter()
        .map(|&p| {
            let table = build_threshold_table(clustering, set, p, params.min_cluster_size)?;
            let (mut raw_pos, mut raw_lab, mut f_pos, mut f_lab) = (0, 0, 0, 0);
            for (k, v) in &resolved {
                let rec = expand_with(k, v, &index, &centroids, &table, params.k_neighbors, &params.filters)?;
                for var in &rec.variants {
                    let Some(&label) = label_of.get(&(k.text.as_str(), var.keyword.text.as_str())) else {
                        continue;
                    };
                    raw_lab += 1;
                    raw_pos += label as usize;
                    if var.accepted() {
                        f_lab += 1;
                        f_pos += label as usize;
                    }
                }
            }
            Ok((raw_pos, raw_lab, f_pos, f_lab))
        })
        .collect::<Result<_>>()?;

    let reference = p_list
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("p_list is non-empty");
    let ref_filtered = ratio(counts[reference].2, counts[reference].3);
    Ok(p_list
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(i, (&p, &(rp, rl, fp, fl)))| {
            let tpr_filtered = ratio(fp, fl);
            let tpr_normalized = if i == reference || p == p_list[reference] {
                100.0
            } else if ref_filtered > 0.0 {
                100.0 * tpr_filtered / ref_filtered
            } else {
                0.0
            };
            TprRow {
                p,
                tpr_raw: ratio(rp, rl),
                tpr_filtered,
                tpr_normalized,
            }
        })
        .collect())
}

pub fn tpr_csv(rows: &[TprRow]) -> String {
    let mut out = String::from(
        "# tpr = accepted label-1 pairs / accepted labeled pairs; raw = filters off, filtered = filters on\n\
         # tpr_normalized = 100 * tpr_filtered / tpr_filtered at the largest p\n\
         p,tpr_raw,tpr_filtered,tpr_normalized\n",
    );
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.p, r.tpr_raw, r.tpr_filtered, r.tpr_normalized);
    }
    out
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Correlation {
    Value(f64),
    /// Always the string `"degenerate"`.
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub market: String,
    pub clusters: usize,
    pub mean_tau_similarity: f64,
    /// Population variance.
    pub variance_tau_similarity: f64,
    pub size_threshold_r: Correlation,
    pub bins: Vec<HistogramBin>,
}

/// Histogram over `tau_similarity` spanning the observed range in
/// equal-width bins; the maximum falls in the last bin.
pub fn threshold_report(table: &ThresholdTable) -> Result<ThresholdReport> {
    if table.rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let sims: Vec<f64> = table.rows.iter().map(|r| r.tau_similarity).collect();
    let mean = stable_mean(sims.iter().copied());
    let variance = sims.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / sims.len() as f64;
    let lo = sims.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo: lo + width * i as f64,
            hi: if i + 1 == HISTOGRAM_BINS { hi } else { lo + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for s in &sims {
        // Bins are half-open; values a rounding error below an edge (e.g.
        // 0.95 - 0.9 < 0.05) belong to the upper bin.
        let b = if width > 0.0 {
            let x = (s - lo) / (hi - lo) * HISTOGRAM_BINS as f64;
            ((x + 1e-9).floor() as usize).min(HISTOGRAM_BINS - 1)
        } else {
            0
        };
        bins[b].count += 1;
    }
    let size_threshold_r = match threshold_size_correlation(table) {
        Ok(r) => Correlation::Value(r),
        Err(Error::DegenerateInput(_)) => Correlation::Degenerate("degenerate".into()),
        Err(e) => return Err(e),
    };
    Ok(ThresholdReport {
        market: table.market.clone(),
        clusters: table.rows.len(),
        mean_tau_similarity: mean,
        variance_tau_similarity: variance,
        size_threshold_r,
        bins,
    })
}

impl ThresholdReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,lo,hi,count\n");
        for (i, b) in self.bins.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{}", b.lo, b.hi, b.count);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsePair {
    pub count: usize,
    pub base: f64,
    pub stacked: f64,
}

impl RmsePair {
    /// Relative change of the stacked model against the base; `None` when
    /// the base is exact and the stacked model is not.
    pub fn delta(&self) -> Option<f64> {
        if self.base > 0.0 {
            Some((self.stacked - self.base) / self.base)
        } else if self.stacked == 0.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceReport {
    pub per_grade_rmse: BTreeMap<i64, RmsePair>,
    pub overall_rmse: RmsePair,
    /// Keyed by grade, plus `"overall"`.
    pub deltas_vs_baseline: BTreeMap<String, Option<f64>>,
}

pub fn relevance_report(base: &GbdtModel, stacked: &StackedModel, holdout: &Dataset) -> Result<RelevanceReport> {
    let b = crate::relevance::rmse_by_label(base, holdout)?;
    let s = crate::relevance::rmse_by_label(stacked as &dyn Predict, holdout)?;
    let per_grade_rmse: BTreeMap<i64, RmsePair> = b
        .per_grade
        .iter()
        .map(|(g, r)| {
            (
                *g,
                RmsePair {
                    count: r.count,
                    base: r.rmse,
                    stacked: s.per_grade[g].rmse,
                },
            )
        })
        .collect();
    let overall_rmse = RmsePair {
        count: b.overall.count,
        base: b.overall.rmse,
        stacked: s.overall.rmse,
    };
    let mut deltas_vs_baseline: BTreeMap<String, Option<f64>> =
        per_grade_rmse.iter().map(|(g, p)| (g.to_string(), p.delta())).collect();
    deltas_vs_baseline.insert("overall".into(), overall_rmse.delta());
    Ok(RelevanceReport {
        per_grade_rmse,
        overall_rmse,
        deltas_vs_baseline,
    })
}

impl RelevanceReport {
    /// One row per grade present in the holdout.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("grade,count,base_rmse,stacked_rmse,delta\n");
        for (g, p) in &self.per_grade_rmse {
            let d = p.delta().map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{g},{},{},{},{d}", p.count, p.base, p.stacked);
        }
        out
    }
}
