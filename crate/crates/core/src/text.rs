//! Tokenization and the gender / numeric consistency rules applied to
//! candidate expansions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

const APOSTROPHES: [char; 3] = ['\'', '\u{2019}', '`'];

pub const MASCULINE: [&str; 8] = ["men", "mens", "man", "male", "boys", "boy", "gentleman", "gents"];
pub const FEMININE: [&str; 8] = ["women", "womens", "woman", "female", "ladies", "lady", "girls", "girl"];

/// Lowercase, drop apostrophes, split on anything that is not a letter or
/// digit.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !APOSTROPHES.contains(c))
        .collect();
    cleaned
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GenderClass {
    Masculine,
    Feminine,
    Neutral,
}

/// Gender vocabularies. The defaults can be extended from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderLexicon {
    pub masculine: BTreeSet<String>,
    pub feminine: BTreeSet<String>,
}

impl Default for GenderLexicon {
    fn default() -> Self {
        Self {
            masculine: MASCULINE.iter().map(|s| s.to_string()).collect(),
            feminine: FEMININE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GenderLexicon {
    pub fn classify(&self, text: &str) -> GenderClass {
        let tokens = tokenize(text);
        let m = tokens.iter().any(|t| self.masculine.contains(t));
        let f = tokens.iter().any(|t| self.feminine.contains(t));
        match (m, f) {
            (true, false) => GenderClass::Masculine,
            (false, true) => GenderClass::Feminine,
            _ => GenderClass::Neutral,
        }
    }

    pub fn consistent(&self, a: &str, b: &str) -> bool {
        let (ca, cb) = (self.classify(a), self.classify(b));
        ca == cb || ca == GenderClass::Neutral || cb == GenderClass::Neutral
    }
}

pub fn gender_class(text: &str) -> GenderClass {
    GenderLexicon::default().classify(text)
}

pub fn gender_consistent(a: &str, b: &str) -> bool {
    GenderLexicon::default().consistent(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericToken {
    pub value: f64,
    pub unit: String,
}

// digits [ '.' digits ] [ letters ]
fn parse_numeric(piece: &str) -> Option<NumericToken> {
    let bytes = piece.as_bytes();
    let mut i = 0;
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    if i == 0 {
        return None;
    }
    if i < bytes.len() && bytes[i] == b'.' {
        let start = i + 1;
        let mut j = start;
        while j < bytes.len() && bytes[j].is_ascii_digit() {
            j += 1;
        }
        if j == start {
            return None;
        }
        i = j;
    }
    let number = &piece[..i];
    let unit = &piece[i..];
    if !unit.chars().all(char::is_alphabetic) {
        return None;
    }
    Some(NumericToken {
        value: number.parse().ok()?,
        unit: unit.to_string(),
    })
}

/// Number/unit pairs such as `13`, `65w` or `4.4mm`, sorted and deduplicated.
pub fn numeric_tokens(text: &str) -> Vec<NumericToken> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !APOSTROPHES.contains(c))
        .collect();
    let mut out: Vec<NumericToken> = cleaned
        .split(|c: char| !(c.is_alphanumeric() || c == '.'))
        .map(|p| p.trim_matches('.'))
        .filter(|p| !p.is_empty())
        .filter_map(parse_numeric)
        .collect();
    out.sort_by(|a, b| a.unit.cmp(&b.unit).then(a.value.total_cmp(&b.value)));
    out.dedup();
    out
}

/// For every unit present on both sides the value sets must be equal.
pub fn numeric_consistent(original: &str, candidate: &str) -> bool {
    let a = numeric_tokens(original);
    let b = numeric_tokens(candidate);
    let units_a: BTreeSet<&str> = a.iter().map(|t| t.unit.as_str()).collect();
    let units_b: BTreeSet<&str> = b.iter().map(|t| t.unit.as_str()).collect();
    units_a.intersection(&units_b).all(|u| {
        let va: Vec<f64> = a.iter().filter(|t| t.unit == *u).map(|t| t.value).collect();
        let vb: Vec<f64> = b.iter().filter(|t| t.unit == *u).map(|t| t.value).collect();
        va == vb
    })
}
