//! Default query–item feature extractor used when scoring matches.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{fallback_embed, similarity_unchecked, EmbeddingVector};
use crate::error::{Error, Result};
use crate::text::tokenize;

pub const FEATURE_NAMES: [&str; 6] = [
    "query_title_overlap",
    "query_title_similarity",
    "keyword_variant_similarity",
    "log_price",
    "title_tokens",
    "keyword_title_coverage",
];

pub const DEFAULT_FEATURE_DIM: usize = 256;

pub fn feature_schema() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Tokens and fallback embedding of one side of a query–item pair.
#[derive(Debug, Clone)]
pub struct TextSide {
    pub tokens: BTreeSet<String>,
    pub n_tokens: usize,
    pub embedding: Option<EmbeddingVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub dim: usize,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            dim: DEFAULT_FEATURE_DIM,
        }
    }
}

fn overlap(of: &BTreeSet<String>, within: &BTreeSet<String>) -> f64 {
    if of.is_empty() {
        return 0.0;
    }
    of.intersection(within).count() as f64 / of.len() as f64
}

impl FeatureExtractor {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 16 {
            return Err(Error::InvalidArgument(format!("feature dim must be >= 16, got {dim}")));
        }
        Ok(Self { dim })
    }

    pub fn prepare(&self, text: &str) -> TextSide {
        let toks = tokenize(text);
        TextSide {
            n_tokens: toks.len(),
            tokens: toks.into_iter().collect(),
            // Text with nothing to embed simply scores zero similarity.
            embedding: fallback_embed(text, self.dim).ok(),
        }
    }

    /// `keyword_similarity` is the origin-to-variant similarity of the
    /// keyword that matched (1.0 when the origin itself matched).
    pub fn features(
        &self,
        query: &TextSide,
        title: &TextSide,
        price: f64,
        keyword_tokens: &BTreeSet<String>,
        keyword_similarity: f64,
    ) -> Vec<f64> {
        let qt_sim = match (&query.embedding, &title.embedding) {
            (Some(a), Some(b)) => similarity_unchecked(a.as_slice(), b.as_slice()),
            _ => 0.0,
        };
        vec![
            overlap(&query.tokens, &title.tokens),
            qt_sim,
            keyword_similarity,
            price.max(0.0).ln_1p(),
            title.n_tokens as f64,
            overlap(keyword_tokens, &title.tokens),
        ]
    }

    pub fn extract(&self, query: &str, title: &str, price: f64, keyword: &str, keyword_similarity: f64) -> Vec<f64> {
        let kw: BTreeSet<String> = tokenize(keyword).into_iter().collect();
        self.features(&self.prepare(query), &self.prepare(title), price, &kw, keyword_similarity)
    }
}
