//! Seeded synthetic data for tests, fixtures and benchmarks.

use crate::embedding::{normalize, EmbeddingSet};
use crate::error::Result;
use crate::features::feature_schema;
use crate::relevance::Dataset;
use crate::rng::SplitMix64;

/// `n` random unit vectors (isotropic Gaussian directions) named `k0..`.
pub fn random_unit_set(seed: u64, n: usize, dim: usize, market: &str) -> Result<EmbeddingSet> {
    let mut rng = SplitMix64::new(seed);
    let rows = (0..n)
        .map(|i| {
            let v: Vec<f32> = (0..dim).map(|_| rng.next_gaussian() as f32).collect();
            Ok((format!("k{i}"), normalize(&v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    EmbeddingSet::from_rows(market, rows)
}

/// Points `center + sigma * N(0, I)` for each center, `per_group` each,
/// interleaved so ids alternate between groups. Vectors are stored
/// normalized, as every embedding is.
pub fn gaussian_groups(seed: u64, centers: &[Vec<f32>], per_group: usize, sigma: f64, market: &str) -> Result<EmbeddingSet> {
    let mut rng = SplitMix64::new(seed);
    let mut rows = Vec::with_capacity(centers.len() * per_group);
    for i in 0..per_group {
        for (g, c) in centers.iter().enumerate() {
            let v: Vec<f32> = c.iter().map(|&x| x + (sigma * rng.next_gaussian()) as f32).collect();
            rows.push((format!("g{g}_{i}"), normalize(&v)?));
        }
    }
    EmbeddingSet::from_rows(market, rows)
}

/// Population a relevance example is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inventory {
    /// Items reached through their advertiser keyword (similarity 1).
    Existing,
    /// Items reached through an expanded keyword.
    New,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelevanceMix {
    /// Fraction of rows drawn from new inventory.
    pub new_fraction: f64,
    /// Label shift applied to new-inventory rows graded 2 or lower.
    pub low_grade_shift: f64,
}

impl RelevanceMix {
    pub const EXISTING: Self = Self {
        new_fraction: 0.0,
        low_grade_shift: 0.0,
    };
}

fn relevance_row(rng: &mut SplitMix64, inv: Inventory, shift: f64) -> (Vec<f64>, f64) {
    let overlap = rng.next_f64();
    let qt_sim = (0.25 + 0.6 * overlap + 0.1 * rng.next_gaussian()).clamp(0.0, 1.0);
    let kw_sim = match inv {
        Inventory::Existing => 1.0,
        Inventory::New => 0.85 + 0.14 * rng.next_f64(),
    };
    let log_price = (3.0 + rng.next_gaussian()).exp().ln_1p();
    let title_tokens = (3 + rng.below(12)) as f64;
    let coverage = 0.3 + 0.7 * rng.next_f64();
    let latent = 0.6 + 2.4 * overlap + 1.2 * qt_sim + 1.0 * coverage - 0.05 * (title_tokens - 8.0)
        + 0.35 * rng.next_gaussian();
    let grade = latent.round().clamp(1.0, 5.0);
    let label = if inv == Inventory::New && grade <= 2.0 { grade + shift } else { grade };
    (vec![overlap, qt_sim, kw_sim, log_price, title_tokens, coverage], label)
}

/// `n` examples over the default six-feature schema with integer grades
/// derived from a noisy latent score, shifted as configured.
pub fn relevance_dataset(seed: u64, n: usize, mix: RelevanceMix) -> Dataset {
    let mut rng = SplitMix64::new(seed);
    let mut d = Dataset::new(feature_schema());
    for _ in 0..n {
        let inv = if rng.next_f64() < mix.new_fraction {
            Inventory::New
        } else {
            Inventory::Existing
        };
        let (x, y) = relevance_row(&mut rng, inv, mix.low_grade_shift);
        d.push(x, y).expect("rows match the schema");
    }
    d
}
