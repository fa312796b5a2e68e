//! Keyword vectors: normalization, cosine arithmetic, the hashed n-gram
//! fallback embedder and the TSV interchange format.
//!
//! The canonical distance is `1 - cosine_similarity`; every threshold in the
//! engine is expressed in that unit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORM_EPS: f64 = 1e-12;

/// A keyword within one market. `id` is a surrogate assigned at ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeywordRef {
    pub market: String,
    pub text: String,
    pub id: u64,
}

/// A unit-norm embedding. Only constructible through [`normalize`] or
/// [`EmbeddingVector::from_unit`], so the norm invariant always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    /// Wraps values that are already unit-norm (within 1e-5), normalizing
    /// otherwise.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let n = l2_norm(&values);
        if (n - 1.0).abs() <= 1e-5 && values.iter().all(|x| x.is_finite()) {
            Ok(Self(values))
        } else {
            normalize(&values)
        }
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn normalize(v: &[f32]) -> Result<EmbeddingVector> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let norm = l2_norm(v);
    if v.is_empty() || norm <= NORM_EPS {
        return Err(Error::ZeroVector);
    }
    Ok(EmbeddingVector(
        v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
    ))
}

/// Plain sequential f32 dot product. Index scans and similarity share this
/// kernel so that distances are bit-identical everywhere.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::dims(u.dim(), v.dim()));
    }
    Ok(similarity_unchecked(u.as_slice(), v.as_slice()))
}

pub fn cosine_distance(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    cosine_similarity(u, v).map(|s| 1.0 - s)
}

#[inline]
pub(crate) fn similarity_unchecked(a: &[f32], b: &[f32]) -> f64 {
    (dot(a, b) as f64).clamp(-1.0, 1.0)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Deterministic stand-in encoder: signed hashed character 3/4/5-grams of
/// the lowercased, `#`-padded text.
pub fn fallback_embed(text: &str, dim: usize) -> Result<EmbeddingVector> {
    if dim < 16 {
        return Err(Error::InvalidArgument(format!(
            "fallback embedding dimension must be >= 16, got {dim}"
        )));
    }
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err(Error::ZeroVector);
    }
    let padded: Vec<char> = std::iter::once('#')
        .chain(trimmed.to_lowercase().chars())
        .chain(std::iter::once('#'))
        .collect();

    let mut acc = vec![0f32; dim];
    let mut buf = String::new();
    for n in 3..=5 {
        if padded.len() < n {
            continue;
        }
        for window in padded.windows(n) {
            buf.clear();
            buf.extend(window);
            let h = fnv1a64(buf.as_bytes());
            let bucket = (h % dim as u64) as usize;
            acc[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }
    // "#a#" is the shortest possible input and still yields one trigram, so
    // an all-zero accumulator only arises from bucket cancellation.
    normalize(&acc)
}

/// All vectors of one market, ordered by ascending id.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    market: String,
    dim: usize,
    keys: Vec<KeywordRef>,
    vectors: Vec<EmbeddingVector>,
    by_text: HashMap<String, usize>,
}

impl EmbeddingSet {
    /// Builds a set from `(text, vector)` rows; ids follow row order.
    pub fn from_rows(
        market: impl Into<String>,
        rows: impl IntoIterator<Item = (String, EmbeddingVector)>,
    ) -> Result<Self> {
        let market = market.into();
        let mut set = EmbeddingSet {
            market,
            dim: 0,
            keys: Vec::new(),
            vectors: Vec::new(),
            by_text: HashMap::new(),
        };
        for (text, v) in rows {
            let id = set.keys.len() as u64;
            set.push(KeywordRef { market: set.market.clone(), text, id }, v)?;
        }
        if set.keys.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(set)
    }

    fn push(&mut self, key: KeywordRef, v: EmbeddingVector) -> Result<()> {
        if key.text.trim().is_empty() {
            return Err(Error::InvalidArgument("keyword text is empty".into()));
        }
        if self.keys.is_empty() {
            self.dim = v.dim();
        } else if v.dim() != self.dim {
            return Err(Error::dims(self.dim, v.dim()));
        }
        if self.by_text.contains_key(&key.text) {
            return Err(Error::DuplicateKeyword {
                market: self.market.clone(),
                text: key.text,
            });
        }
        if let Some(last) = self.keys.last() {
            if key.id <= last.id {
                return Err(Error::Internal("keyword ids must ascend".into()));
            }
        }
        self.by_text.insert(key.text.clone(), self.keys.len());
        self.keys.push(key);
        self.vectors.push(v);
        Ok(())
    }

    pub fn market(&self) -> &str {
        &self.market
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[KeywordRef] {
        &self.keys
    }

    pub fn vectors(&self) -> &[EmbeddingVector] {
        &self.vectors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&KeywordRef, &EmbeddingVector)> {
        self.keys.iter().zip(&self.vectors)
    }

    pub fn lookup(&self, text: &str) -> Option<(&KeywordRef, &EmbeddingVector)> {
        self.by_text.get(text).map(|&i| (&self.keys[i], &self.vectors[i]))
    }

    /// Position of `id` in the ordered entry list.
    pub fn position(&self, id: u64) -> Option<usize> {
        self.keys.binary_search_by_key(&id, |k| k.id).ok()
    }

    pub fn vector(&self, id: u64) -> Option<&EmbeddingVector> {
        self.position(id).map(|i| &self.vectors[i])
    }

    /// The entries whose ids are listed, keeping their original ids.
    pub fn subset(&self, ids: &[u64]) -> Result<Self> {
        let mut picked: Vec<usize> = ids
            .iter()
            .map(|&id| self.position(id).ok_or(Error::UnassignedKeyword(id)))
            .collect::<Result<_>>()?;
        picked.sort_unstable();
        picked.dedup();
        if picked.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut out = EmbeddingSet {
            market: self.market.clone(),
            dim: self.dim,
            keys: Vec::with_capacity(picked.len()),
            vectors: Vec::with_capacity(picked.len()),
            by_text: HashMap::new(),
        };
        for i in picked {
            out.push(self.keys[i].clone(), self.vectors[i].clone())?;
        }
        Ok(out)
    }
}

/// Loads the rows of `market` from an embedding TSV. The dimension is taken
/// from the first record of the file regardless of its market.
pub fn load_embeddings(path: impl AsRef<Path>, market: &str) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, market)
}

pub fn parse_embeddings(text: &str, market: &str) -> Result<EmbeddingSet> {
    let mut dim: Option<usize> = None;
    let mut set = EmbeddingSet {
        market: market.to_string(),
        dim: 0,
        keys: Vec::new(),
        vectors: Vec::new(),
        by_text: HashMap::new(),
    };
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.splitn(3, '\t');
        let (Some(row_market), Some(keyword), Some(values)) =
            (fields.next(), fields.next(), fields.next())
        else {
            return Err(Error::Parse {
                line: lineno,
                message: "expected market<TAB>keyword<TAB>values".into(),
            });
        };
        let values: Vec<f32> = values
            .split_ascii_whitespace()
            .map(|s| {
                s.parse::<f32>().map_err(|e| Error::Parse {
                    line: lineno,
                    message: format!("bad float {s:?}: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: values.len(),
                line: Some(lineno),
                index: None,
            });
        }
        if row_market != market {
            continue;
        }
        let v = normalize(&values).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let key = KeywordRef {
            market: market.to_string(),
            text: keyword.to_string(),
            id: set.keys.len() as u64,
        };
        set.push(key, v).map_err(|e| match e {
            Error::DuplicateKeyword { .. } | Error::InvalidArgument(_) => Error::Parse {
                line: lineno,
                message: e.to_string(),
            },
            other => other,
        })?;
    }
    if set.keys.is_empty() {
        return Err(Error::EmptySet);
    }
    Ok(set)
}

/// Markets present in an embedding TSV, in order of first appearance.
pub fn markets_in(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(m) = line.split('\t').next() {
            if !out.iter().any(|x| x == m) {
                out.push(m.to_string());
            }
        }
    }
    Ok(out)
}

/// Formats one TSV record. Floats use 9 significant digits.
pub fn format_row(market: &str, text: &str, values: &[f32]) -> String {
    let mut line = String::with_capacity(values.len() * 16 + text.len() + 8);
    line.push_str(market);
    line.push('\t');
    line.push_str(text);
    line.push('\t');
    for (i, x) in values.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{}", sig9(*x as f64));
    }
    line
}

/// Round to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (k, v) in set.iter() {
        out.push_str(&format_row(&set.market, &k.text, v.as_slice()));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f32]) -> EmbeddingVector {
        normalize(v).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let v = normalize(&[3.0, 4.0]).unwrap();
        assert!((v.as_slice()[0] - 0.6).abs() < 1e-7);
        assert!((v.as_slice()[1] - 0.8).abs() < 1e-7);
        assert_eq!(normalize(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&[0.0, 0.0]), Err(Error::ZeroVector)));
        assert!(matches!(normalize(&[f32::NAN, 1.0]), Err(Error::NonFinite)));
        assert!(matches!(normalize(&[]), Err(Error::ZeroVector)));
    }

    #[test]
    fn cosine_examples() {
        let x = unit(&[1.0, 0.0]);
        let y = unit(&[0.0, 1.0]);
        let d = unit(&[std::f32::consts::FRAC_1_SQRT_2, std::f32::consts::FRAC_1_SQRT_2]);
        assert_eq!(cosine_similarity(&x, &x).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&x, &y).unwrap(), 0.0);
        assert!((cosine_similarity(&x, &d).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine_distance(&x, &x).unwrap(), 0.0);
        assert_eq!(cosine_distance(&x, &y).unwrap(), 1.0);
        assert_eq!(cosine_distance(&x, &unit(&[-1.0, 0.0])).unwrap(), 2.0);
        let z = unit(&[1.0, 0.0, 0.0]);
        assert!(matches!(cosine_similarity(&x, &z), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64-bit test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn fallback_is_deterministic_and_unit() {
        let a = fallback_embed("iphone case", 256).unwrap();
        let b = fallback_embed("iphone case", 256).unwrap();
        assert_eq!(a, b);
        assert!((l2_norm(a.as_slice()) - 1.0).abs() < 1e-5);
        let tiny = fallback_embed("a", 256).unwrap();
        assert!((l2_norm(tiny.as_slice()) - 1.0).abs() < 1e-5);
        assert!(matches!(fallback_embed("   ", 256), Err(Error::ZeroVector)));
        assert!(fallback_embed("x", 8).is_err());
    }

    #[test]
    fn fallback_case_insensitive() {
        assert_eq!(
            fallback_embed("LED Garden", 64).unwrap(),
            fallback_embed("led garden", 64).unwrap()
        );
    }

    #[test]
    fn tsv_three_rows() {
        let text = "# comment\nUS\ta\t1 0 0 0\nUS\tb\t0 1 0 0\nUS\tc\t0 0 1 0\n";
        let set = parse_embeddings(text, "US").unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.dim(), 4);
        assert_eq!(set.lookup("b").unwrap().0.id, 1);
    }

    #[test]
    fn tsv_dimension_mismatch_reports_line() {
        let text = "US\ta\t1 0 0 0\nUS\tb\t0 1 0\n";
        match parse_embeddings(text, "US") {
            Err(Error::DimensionMismatch { expected: 4, found: 3, line: Some(2), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_duplicate_and_bad_float() {
        let dup = "US\ta\t1 0\nUS\ta\t0 1\n";
        assert!(matches!(parse_embeddings(dup, "US"), Err(Error::Parse { line: 2, .. })));
        let bad = "US\ta\t1 zz\n";
        assert!(matches!(parse_embeddings(bad, "US"), Err(Error::Parse { line: 1, .. })));
        let other_market = "UK\ta\t1 0\n";
        assert!(matches!(parse_embeddings(other_market, "US"), Err(Error::EmptySet)));
    }

    #[test]
    fn subset_keeps_ids() {
        let text = "US\ta\t1 0\nUS\tb\t0 1\nUS\tc\t1 1\n";
        let set = parse_embeddings(text, "US").unwrap();
        let sub = set.subset(&[2, 0]).unwrap();
        assert_eq!(sub.keys().iter().map(|k| k.id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(sub.lookup("c").unwrap().0.id, 2);
    }
}
