//! Exact brute-force nearest-neighbor search over one market's vectors.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingSet, EmbeddingVector, KeywordRef};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

/// Neighbors ordered by ascending distance, ties by ascending id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|n| n.id).collect()
    }
}

/// Row-major copy of an [`EmbeddingSet`].
#[derive(Debug, Clone)]
pub struct FlatIndex {
    market: String,
    dim: usize,
    keys: Vec<KeywordRef>,
    matrix: Vec<f32>,
}

// Heap entry ordered so that the max element is the current worst neighbor.
#[derive(PartialEq)]
struct Candidate {
    distance: f64,
    id: u64,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FlatIndex {
    pub fn build(set: &EmbeddingSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut matrix = Vec::with_capacity(set.len() * set.dim());
        for v in set.vectors() {
            matrix.extend_from_slice(v.as_slice());
        }
        Ok(Self {
            market: set.market().to_string(),
            dim: set.dim(),
            keys: set.keys().to_vec(),
            matrix,
        })
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

    pub fn key(&self, id: u64) -> Option<&KeywordRef> {
        self.keys
            .binary_search_by_key(&id, |k| k.id)
            .ok()
            .map(|i| &self.keys[i])
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn search(
        &self,
        query: &EmbeddingVector,
        k: usize,
        exclude_id: Option<u64>,
    ) -> Result<NeighborList> {
        if query.dim() != self.dim {
            return Err(Error::dims(self.dim, query.dim()));
        }
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let q = query.as_slice();
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        for (i, key) in self.keys.iter().enumerate() {
            if Some(key.id) == exclude_id {
                continue;
            }
            let sim = (dot(q, self.row(i)) as f64).clamp(-1.0, 1.0);
            let cand = Candidate {
                distance: 1.0 - sim,
                id: key.id,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand < *worst {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let entries = heap
            .into_sorted_vec()
            .into_iter()
            .map(|c| Neighbor {
                id: c.id,
                distance: c.distance,
            })
            .collect();
        Ok(NeighborList { entries })
    }

    /// Parallel over queries; output order follows input order.
    pub fn batch_search(&self, queries: &[EmbeddingVector], k: usize) -> Result<Vec<NeighborList>> {
        if let Some((i, q)) = queries.iter().enumerate().find(|(_, q)| q.dim() != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: q.dim(),
                line: None,
                index: Some(i),
            });
        }
        queries
            .par_iter()
            .map(|q| self.search(q, k, None))
            .collect()
    }
}

pub fn build_index(set: &EmbeddingSet) -> Result<FlatIndex> {
    FlatIndex::build(set)
}

pub fn knn_search(
    index: &FlatIndex,
    query: &EmbeddingVector,
    k: usize,
    exclude_id: Option<u64>,
) -> Result<NeighborList> {
    index.search(query, k, exclude_id)
}

pub fn batch_search(
    index: &FlatIndex,
    queries: &[EmbeddingVector],
    k: usize,
) -> Result<Vec<NeighborList>> {
    index.batch_search(queries, k)
}
