//! Threshold-gated semantic variants for advertiser keywords.
//!
//! A keyword is assigned to its nearest cluster, its `k` nearest corpus
//! neighbors are fetched, and neighbors within that cluster's distance
//! threshold become variants. Variants failing the gender or numeric checks
//! stay in the record with a reason but are not accepted.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{assign_cluster, Centroids, Clustering};
use crate::embedding::{EmbeddingSet, EmbeddingVector, KeywordRef};
use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::text::{numeric_consistent, GenderLexicon};
use crate::thresholds::ThresholdTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FilterReason {
    Gender,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub keyword: KeywordRef,
    pub distance: f64,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filtered_reason: Option<FilterReason>,
}

impl Variant {
    pub fn accepted(&self) -> bool {
        self.filtered_reason.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub origin: KeywordRef,
    pub cluster: usize,
    pub tau_used: f64,
    pub variants: Vec<Variant>,
}

impl ExpansionRecord {
    pub fn accepted(&self) -> impl Iterator<Item = &Variant> {
        self.variants.iter().filter(|v| v.accepted())
    }

    pub fn accepted_texts(&self) -> Vec<&str> {
        self.accepted().map(|v| v.keyword.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub enabled: bool,
    #[serde(default)]
    pub lexicon: GenderLexicon,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lexicon: GenderLexicon::default(),
        }
    }
}

impl FilterConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    fn check(&self, origin: &str, candidate: &str) -> Option<FilterReason> {
        if !self.enabled {
            None
        } else if !self.lexicon.consistent(origin, candidate) {
            Some(FilterReason::Gender)
        } else if !numeric_consistent(origin, candidate) {
            Some(FilterReason::Numeric)
        } else {
            None
        }
    }
}

/// Everything needed to expand keywords of one market.
#[derive(Debug, Clone)]
pub struct Expander {
    pub set: EmbeddingSet,
    pub index: FlatIndex,
    pub centroids: Centroids,
    pub clustering: Clustering,
    pub table: ThresholdTable,
    pub k_neighbors: usize,
    pub filters: FilterConfig,
}

impl Expander {
    pub fn new(
        set: EmbeddingSet,
        clustering: Clustering,
        table: ThresholdTable,
        k_neighbors: usize,
        filters: FilterConfig,
    ) -> Result<Self> {
        if set.market() != clustering.market || set.market() != table.market {
            return Err(Error::InvalidArgument(format!(
                "market mismatch: embeddings {}, clustering {}, thresholds {}",
                set.market(),
                clustering.market,
                table.market
            )));
        }
        if table.rows.len() != clustering.m {
            return Err(Error::InvalidArgument(format!(
                "threshold table has {} rows for {} clusters",
                table.rows.len(),
                clustering.m
            )));
        }
        if k_neighbors == 0 {
            return Err(Error::InvalidArgument("k_neighbors must be at least 1".into()));
        }
        let centroids = clustering.centroid_directions()?;
        if centroids.dim() != set.dim() {
            return Err(Error::dims(set.dim(), centroids.dim()));
        }
        let index = FlatIndex::build(&set)?;
        Ok(Self {
            set,
            index,
            centroids,
            clustering,
            table,
            k_neighbors,
            filters,
        })
    }

    pub fn market(&self) -> &str {
        self.set.market()
    }

    /// Resolves a keyword to its ingested vector, or embeds it with the
    /// fallback encoder when it is not part of the corpus.
    pub fn resolve(&self, text: &str) -> Result<(KeywordRef, EmbeddingVector)> {
        if let Some((k, v)) = self.set.lookup(text) {
            return Ok((k.clone(), v.clone()));
        }
        let v = crate::embedding::fallback_embed(text, self.set.dim())?;
        let key = KeywordRef {
            market: self.market().to_string(),
            text: text.to_string(),
            id: self.set.len() as u64,
        };
        Ok((key, v))
    }

    pub fn expand(&self, origin: &KeywordRef, e_k: &EmbeddingVector) -> Result<ExpansionRecord> {
        expand_with(
            origin,
            e_k,
            &self.index,
            &self.centroids,
            &self.table,
            self.k_neighbors,
            &self.filters,
        )
    }

    pub fn expand_text(&self, text: &str) -> Result<ExpansionRecord> {
        let (k, v) = self.resolve(text)?;
        self.expand(&k, &v)
    }

    /// Expands many keywords in parallel; output follows input order.
    pub fn expand_many(&self, texts: &[String]) -> Result<Vec<ExpansionRecord>> {
        texts.par_iter().map(|t| self.expand_text(t)).collect()
    }
}

pub fn expand_with(
    origin: &KeywordRef,
    e_k: &EmbeddingVector,
    index: &FlatIndex,
    centroids: &Centroids,
    table: &ThresholdTable,
    k_neighbors: usize,
    filters: &FilterConfig,
) -> Result<ExpansionRecord> {
    let (cluster, _) = assign_cluster(centroids, e_k)?;
    let tau = table.tau(cluster).ok_or_else(|| {
        Error::InvalidArgument(format!("no threshold row for cluster {cluster}"))
    })?;
    let self_id = index
        .key(origin.id)
        .filter(|k| k.text == origin.text)
        .map(|k| k.id);
    let neighbors = index.search(e_k, k_neighbors, self_id)?;
    let mut variants = Vec::new();
    for n in neighbors.entries.iter().take_while(|n| n.distance <= tau) {
        let Some(key) = index.key(n.id) else {
            return Err(Error::Internal(format!("index returned unknown id {}", n.id)));
        };
        if key.text == origin.text {
            continue;
        }
        variants.push(Variant {
            keyword: key.clone(),
            distance: n.distance,
            similarity: 1.0 - n.distance,
            filtered_reason: filters.check(&origin.text, &key.text),
        });
    }
    Ok(ExpansionRecord {
        origin: origin.clone(),
        cluster,
        tau_used: tau,
        variants,
    })
}

/// Single-keyword expansion against a clustering and its threshold table.
#[allow(clippy::too_many_arguments)]
pub fn expand_keyword(
    origin: &KeywordRef,
    e_k: &EmbeddingVector,
    index: &FlatIndex,
    clustering: &Clustering,
    table: &ThresholdTable,
    k_neighbors: usize,
    filters_enabled: bool,
) -> Result<ExpansionRecord> {
    let filters = if filters_enabled {
        FilterConfig::default()
    } else {
        FilterConfig::disabled()
    };
    expand_with(
        origin,
        e_k,
        index,
        &clustering.centroid_directions()?,
        table,
        k_neighbors,
        &filters,
    )
}

pub fn to_jsonl(records: &[ExpansionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<ExpansionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_jsonl(records: &[ExpansionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<ExpansionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text)
}

/// Two-column plain-text table: original keyword and its accepted variants.
pub fn render_table(records: &[ExpansionRecord]) -> String {
    let width = records
        .iter()
        .map(|r| r.origin.text.chars().count())
        .max()
        .unwrap_or(0)
        .max("Original Keyword".len());
    let mut out = format!("{:<width$} | Semantic Expansions\n", "Original Keyword");
    out.push_str(&format!("{}-+-{}\n", "-".repeat(width), "-".repeat(19)));
    for r in records {
        out.push_str(&format!(
            "{:<width$} | {}\n",
            r.origin.text,
            r.accepted_texts().join(", ")
        ));
    }
    out
}
