//! Per-market k-means over keyword embeddings.
//!
//! Training is Lloyd's algorithm on squared Euclidean distance (so the WCSS
//! objective never increases), seeded with k-means++ driven by
//! [`SplitMix64`]. Centroids are plain arithmetic means; lookups of new
//! vectors ([`assign_cluster`]) use the cosine distance to the normalized
//! centroid direction, matching how thresholds are measured.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, sig9, EmbeddingSet, EmbeddingVector};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct KMeansParams {
    pub clusters: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(clusters: usize, seed: u64) -> Self {
        Self {
            clusters,
            seed,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub market: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: BTreeMap<u64, usize>,
    /// WCSS after each Lloyd iteration. Not persisted.
    #[serde(skip)]
    pub wcss_history: Vec<f64>,
}

/// Unit-length centroid directions used for cosine assignment. A centroid
/// with zero norm keeps a zero direction (distance 1 to everything).
#[derive(Debug, Clone)]
pub struct Centroids {
    dim: usize,
    directions: Vec<Vec<f32>>,
}

impl Centroids {
    pub fn from_means(means: &[Vec<f64>]) -> Result<Self> {
        let dim = means.first().map(Vec::len).ok_or(Error::EmptyInput)?;
        let directions = means
            .iter()
            .map(|c| {
                if c.len() != dim {
                    return Err(Error::dims(dim, c.len()));
                }
                let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                Ok(if norm > 1e-12 {
                    c.iter().map(|x| (x / norm) as f32).collect()
                } else {
                    vec![0.0; dim]
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { dim, directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn direction(&self, j: usize) -> &[f32] {
        &self.directions[j]
    }

    pub fn distance(&self, j: usize, v: &[f32]) -> f64 {
        1.0 - (dot(v, &self.directions[j]) as f64).clamp(-1.0, 1.0)
    }
}

impl Clustering {
    pub fn centroid_directions(&self) -> Result<Centroids> {
        Centroids::from_means(&self.centroids)
    }

    pub fn cluster_of(&self, id: u64) -> Option<usize> {
        self.assignments.get(&id).copied()
    }

    /// Member ids of every cluster, ascending.
    pub fn members(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.m];
        for (&id, &c) in &self.assignments {
            if c < self.m {
                out[c].push(id);
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Clustering = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centroids.len() != self.m || self.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "clustering declares M={} but has {} centroids",
                self.m,
                self.centroids.len()
            )));
        }
        if let Some(c) = self.centroids.iter().find(|c| c.len() != self.dim) {
            return Err(Error::dims(self.dim, c.len()));
        }
        if let Some((id, c)) = self.assignments.iter().find(|(_, &c)| c >= self.m) {
            return Err(Error::InvalidArgument(format!(
                "keyword {id} assigned to cluster {c} >= M"
            )));
        }
        Ok(())
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let d = a as f64 - b;
            d * d
        })
        .sum()
}

fn nearest(x: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_plus_plus(points: &[&[f32]], m: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    let n = points.len();
    let to_f64 = |p: &[f32]| p.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let mut chosen = vec![false; n];
    let first = rng.below(n);
    chosen[first] = true;
    let mut centers = vec![to_f64(points[first])];
    let mut min_d2: Vec<f64> = points.par_iter().map(|p| sq_dist(p, &centers[0])).collect();

    while centers.len() < m {
        let total: f64 = min_d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in min_d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > r {
                    break;
                }
            }
            pick.unwrap_or_else(|| chosen.iter().position(|c| !c).unwrap_or(0))
        } else {
            // All remaining mass is zero: duplicates only.
            chosen.iter().position(|c| !c).unwrap_or(0)
        };
        chosen[pick] = true;
        let c = to_f64(points[pick]);
        min_d2
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(sq_dist(p, &c)));
        centers.push(c);
    }
    centers
}

fn means(points: &[&[f32]], labels: &[usize], m: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); m];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    // Each cluster sums its members in ascending order, so the result does
    // not depend on the thread count.
    members
        .par_iter()
        .map(|idx| {
            let mut sum = vec![0f64; dim];
            for &i in idx {
                for (s, &x) in sum.iter_mut().zip(points[i]) {
                    *s += x as f64;
                }
            }
            let n = idx.len().max(1) as f64;
            sum.iter_mut().for_each(|s| *s /= n);
            sum
        })
        .collect()
}

fn objective(points: &[&[f32]], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    let per_point: Vec<f64> = points
        .par_iter()
        .zip(labels.par_iter())
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .collect();
    per_point.iter().sum()
}

pub fn kmeans(set: &EmbeddingSet, params: KMeansParams) -> Result<Clustering> {
    let KMeansParams {
        clusters: m,
        seed,
        max_iter,
        tol,
    } = params;
    let n = set.len();
    if m == 0 {
        return Err(Error::InvalidArgument("cluster count must be at least 1".into()));
    }
    if m > n {
        return Err(Error::TooManyClusters { clusters: m, points: n });
    }
    if max_iter == 0 || tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidArgument("max_iter must be >= 1 and tol >= 0".into()));
    }
    let dim = set.dim();
    let points: Vec<&[f32]> = set.vectors().iter().map(EmbeddingVector::as_slice).collect();
    let mut rng = SplitMix64::new(seed);
    let mut centroids = seed_plus_plus(&points, m, &mut rng);
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut history: Vec<f64> = Vec::new();

    for _ in 0..max_iter {
        let assigned: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut d2: Vec<f64> = assigned.iter().map(|a| a.1).collect();

        let mut counts = vec![0usize; m];
        for &l in &new_labels {
            counts[l] += 1;
        }
        for j in 0..m {
            if counts[j] > 0 {
                continue;
            }
            // Reseed the empty cluster with the point farthest from its own
            // centroid, taken from a cluster that can spare it.
            let mut far: Option<usize> = None;
            for i in 0..n {
                if counts[new_labels[i]] < 2 {
                    continue;
                }
                if far.is_none_or(|f| d2[i] > d2[f]) {
                    far = Some(i);
                }
            }
            let Some(i) = far else {
                return Err(Error::Internal("empty-cluster repair found no donor".into()));
            };
            counts[new_labels[i]] -= 1;
            counts[j] = 1;
            new_labels[i] = j;
            d2[i] = 0.0;
            centroids[j] = points[i].iter().map(|&x| x as f64).collect();
        }

        let unchanged = new_labels == labels;
        labels = new_labels;
        centroids = means(&points, &labels, m, dim);
        let w = objective(&points, &labels, &centroids);
        let prev = history.last().copied();
        history.push(w);
        if unchanged {
            break;
        }
        if let Some(prev) = prev {
            if prev <= 0.0 || (prev - w) < tol * prev {
                break;
            }
        }
    }

    for c in &mut centroids {
        c.iter_mut().for_each(|x| *x = sig9(*x));
    }
    let assignments = set
        .keys()
        .iter()
        .zip(&labels)
        .map(|(k, &l)| (k.id, l))
        .collect();
    Ok(Clustering {
        market: set.market().to_string(),
        m,
        dim,
        centroids,
        assignments,
        wcss_history: history,
    })
}

/// Nearest centroid by cosine distance; ties go to the lowest index.
pub fn assign_cluster(centroids: &Centroids, v: &EmbeddingVector) -> Result<(usize, f64)> {
    if centroids.is_empty() {
        return Err(Error::EmptyInput);
    }
    if v.dim() != centroids.dim() {
        return Err(Error::dims(centroids.dim(), v.dim()));
    }
    let mut best = (0, f64::INFINITY);
    for j in 0..centroids.len() {
        let d = centroids.distance(j, v.as_slice());
        if d < best.1 {
            best = (j, d);
        }
    }
    Ok(best)
}

/// Sum of squared Euclidean distances from each point to its centroid.
pub fn wcss(clustering: &Clustering, set: &EmbeddingSet) -> Result<f64> {
    if clustering.dim != set.dim() {
        return Err(Error::dims(clustering.dim, set.dim()));
    }
    let mut total = 0.0;
    for (k, v) in set.iter() {
        let c = clustering
            .cluster_of(k.id)
            .ok_or(Error::UnassignedKeyword(k.id))?;
        total += sq_dist(v.as_slice(), &clustering.centroids[c]);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub mean_wcss: f64,
}

/// Splits ids into `folds` groups after a seeded shuffle.
fn fold_partition(set: &EmbeddingSet, folds: usize, seed: u64) -> Vec<Vec<u64>> {
    let mut ids: Vec<u64> = set.keys().iter().map(|k| k.id).collect();
    SplitMix64::new(seed ^ 0x5DEE_CE66_D1CE_F01D).shuffle(&mut ids);
    let mut parts = vec![Vec::new(); folds];
    for (i, id) in ids.into_iter().enumerate() {
        parts[i % folds].push(id);
    }
    parts.iter_mut().for_each(|p| p.sort_unstable());
    parts
}

fn held_in(parts: &[Vec<u64>], fold: usize) -> Vec<u64> {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let mut ids: Vec<u64> = parts
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, p)| p.iter().copied())
        .collect();
    ids.sort_unstable();
    ids
}

/// Mean held-in WCSS per cluster count. With `folds == 1` the whole set is
/// the held-in portion.
pub fn elbow_sweep(
    set: &EmbeddingSet,
    k_list: &[usize],
    seed: u64,
    folds: usize,
) -> Result<Vec<ElbowRow>> {
    if k_list.is_empty() {
        return Err(Error::EmptyInput);
    }
    if k_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("k_list must be strictly ascending".into()));
    }
    if folds == 0 || folds > set.len() {
        return Err(Error::InvalidArgument(format!(
            "folds must be in 1..={}",
            set.len()
        )));
    }
    let parts = fold_partition(set, folds, seed);
    let subsets: Vec<EmbeddingSet> = (0..folds)
        .map(|f| set.subset(&held_in(&parts, f)))
        .collect::<Result<_>>()?;
    k_list
        .iter()
        .map(|&m| {
            let mut total = 0.0;
            for sub in &subsets {
                let c = kmeans(sub, KMeansParams::new(m, seed))?;
                total += wcss(&c, sub)?;
            }
            Ok(ElbowRow {
                m,
                mean_wcss: total / folds as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub folds: usize,
    /// Fraction of held-out point pairs whose co-assignment under the fold
    /// model agrees with the full-data model.
    pub assignment_consistency: f64,
    /// Mean cosine distance of held-in members to their centroid, per fold.
    pub mean_compactness: Vec<f64>,
}

pub fn kfold_stability(
    set: &EmbeddingSet,
    clusters: usize,
    folds: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if folds < 2 {
        return Err(Error::InvalidArgument("stability needs at least 2 folds".into()));
    }
    if folds > set.len() {
        return Err(Error::InvalidArgument(format!("folds must be <= {}", set.len())));
    }
    let reference = kmeans(set, KMeansParams::new(clusters, seed))?;
    let ref_dirs = reference.centroid_directions()?;
    let ref_label: BTreeMap<u64, usize> = set
        .iter()
        .map(|(k, v)| Ok((k.id, assign_cluster(&ref_dirs, v)?.0)))
        .collect::<Result<_>>()?;

    let parts = fold_partition(set, folds, seed);
    let mut agree = 0u64;
    let mut pairs = 0u64;
    let mut compactness = Vec::with_capacity(folds);
    for (f, held_out) in parts.iter().enumerate() {
        let train = set.subset(&held_in(&parts, f))?;
        let model = kmeans(&train, KMeansParams::new(clusters, seed))?;
        let dirs = model.centroid_directions()?;

        let mut dist_sum = 0.0;
        for (k, v) in train.iter() {
            let c = model.cluster_of(k.id).ok_or(Error::UnassignedKeyword(k.id))?;
            dist_sum += dirs.distance(c, v.as_slice());
        }
        compactness.push(dist_sum / train.len() as f64);

        let labels: Vec<(usize, usize)> = held_out
            .iter()
            .map(|&id| {
                let v = set.vector(id).ok_or(Error::UnassignedKeyword(id))?;
                Ok((assign_cluster(&dirs, v)?.0, ref_label[&id]))
            })
            .collect::<Result<_>>()?;
        for i in 0..labels.len() {
            for j in i + 1..labels.len() {
                pairs += 1;
                if (labels[i].0 == labels[j].0) == (labels[i].1 == labels[j].1) {
                    agree += 1;
                }
            }
        }
    }
    Ok(StabilityReport {
        folds,
        assignment_consistency: if pairs == 0 { 1.0 } else { agree as f64 / pairs as f64 },
        mean_compactness: compactness,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;

    fn set_of(rows: Vec<Vec<f32>>) -> EmbeddingSet {
        EmbeddingSet::from_rows(
            "US",
            rows.into_iter()
                .enumerate()
                .map(|(i, v)| (format!("k{i}"), normalize(&v).unwrap())),
        )
        .unwrap()
    }

    #[test]
    fn one_cluster_is_global_mean() {
        let s = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        let c = kmeans(&s, KMeansParams::new(1, 3)).unwrap();
        for d in 0..2 {
            let mean: f64 = s.vectors().iter().map(|v| v.as_slice()[d] as f64).sum::<f64>() / 3.0;
            assert!((c.centroids[0][d] - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn every_point_its_own_cluster() {
        let s = set_of(vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let c = kmeans(&s, KMeansParams::new(4, 11)).unwrap();
        assert!(wcss(&c, &s).unwrap() < 1e-12);
        let mut used: Vec<usize> = c.assignments.values().copied().collect();
        used.sort_unstable();
        assert_eq!(used, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicates_still_fill_every_cluster() {
        let s = set_of(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let c = kmeans(&s, KMeansParams::new(3, 1)).unwrap();
        assert_eq!(c.members().iter().filter(|m| m.is_empty()).count(), 0);
    }

    #[test]
    fn too_many_clusters() {
        let s = set_of(vec![vec![1.0, 0.0]]);
        assert!(matches!(
            kmeans(&s, KMeansParams::new(2, 0)),
            Err(Error::TooManyClusters { clusters: 2, points: 1 })
        ));
    }

    #[test]
    fn wcss_analytic_midpoint() {
        // Two unit vectors at Euclidean distance 2 with the centroid at the midpoint.
        let s = set_of(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let c = Clustering {
            market: "US".into(),
            m: 1,
            dim: 2,
            centroids: vec![vec![0.0, 0.0]],
            assignments: [(0, 0), (1, 0)].into_iter().collect(),
            wcss_history: vec![],
        };
        assert_eq!(wcss(&c, &s).unwrap(), 2.0);
        let mut partial = c.clone();
        partial.assignments.remove(&1);
        assert!(matches!(wcss(&partial, &s), Err(Error::UnassignedKeyword(1))));
    }

    #[test]
    fn assign_ties_go_low() {
        // Clusters 2 and 5 share a direction, so any vector is equidistant to both.
        let means = vec![
            vec![0.0, 1.0],
            vec![0.0, -1.0],
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, -1.0],
            vec![3.0, 0.0],
        ];
        let cents = Centroids::from_means(&means).unwrap();
        let v = normalize(&[1.0, 0.1]).unwrap();
        assert_eq!(assign_cluster(&cents, &v).unwrap().0, 2);
        let on = normalize(&[0.0, 1.0]).unwrap();
        let (c, d) = assign_cluster(&cents, &on).unwrap();
        assert_eq!(c, 0);
        assert!(d.abs() < 1e-7);
    }

    #[test]
    fn stability_rejects_one_fold() {
        let s = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(kfold_stability(&s, 1, 1, 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = set_of(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 1.0]]);
        let c = kmeans(&s, KMeansParams::new(2, 5)).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"M\":2"));
        let back: Clustering = serde_json::from_str(&text).unwrap();
        assert_eq!(back.centroids, c.centroids);
        assert_eq!(back.assignments, c.assignments);
    }
}
