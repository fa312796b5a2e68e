//! CART regression tree: greedy variance-reduction splits over exact sorted
//! feature values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub max_depth: usize,
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64, max_depth: usize) -> Self {
        Self {
            max_depth,
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].leaf_value()
    }

    /// Index of the leaf node `x` falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { .. } => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }
}

impl Node {
    fn leaf_value(&self) -> f64 {
        match self {
            Node::Leaf { value } => *value,
            Node::Split { .. } => f64::NAN,
        }
    }
}

/// Mean computed as an offset from the first value, which is exact for
/// constant inputs.
pub(crate) fn stable_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let Some(first) = it.next() else {
        return 0.0;
    };
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + (v - first), n + 1));
    first + sum / n as f64
}

struct Builder<'a> {
    rows: &'a [Vec<f64>],
    targets: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let mean = stable_mean(idx.iter().map(|&i| self.targets[i]));
        let sse: f64 = idx.iter().map(|&i| (self.targets[i] - mean).powi(2)).sum();
        let node_id = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean });

        if depth >= self.max_depth || idx.len() < 2 * self.min_leaf || sse <= 0.0 {
            return node_id;
        }
        let Some(best) = self.best_split(idx, mean) else {
            return node_id;
        };
        if best.gain <= 1e-12 * sse {
            return node_id;
        }
        // Partition in place, keeping relative order within each side.
        let (mut left, mut right): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i][best.feature] <= best.threshold);
        let l = self.grow(&mut left, depth + 1);
        let r = self.grow(&mut right, depth + 1);
        self.nodes[node_id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        node_id
    }

    fn best_split(&self, idx: &[usize], mean: f64) -> Option<BestSplit> {
        let n = idx.len();
        let n_features = self.rows[idx[0]].len();
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = idx.to_vec();
        for f in 0..n_features {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]).then(a.cmp(&b)));
            let total: f64 = order.iter().map(|&i| self.targets[i] - mean).sum();
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.targets[order[pos]] - mean;
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf {
                    continue;
                }
                if n_right < self.min_leaf {
                    break;
                }
                let x_here = self.rows[order[pos]][f];
                let x_next = self.rows[order[pos + 1]][f];
                if x_here >= x_next {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64
                    - total * total / n as f64;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = x_here + (x_next - x_here) / 2.0;
                    let threshold = if mid < x_next { mid } else { x_here };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

/// Fits one regression tree to `targets`. Leaves predict the mean target of
/// their rows; growth stops at `max_depth`, when a child would fall below
/// `min_leaf` rows, or when no split reduces the squared error.
pub fn fit_tree(
    rows: &[Vec<f64>],
    targets: &[f64],
    max_depth: usize,
    min_leaf: usize,
) -> Result<RegressionTree> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() != targets.len() {
        return Err(Error::dims(rows.len(), targets.len()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite);
    }
    let width = rows[0].len();
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::SchemaMismatch {
            expected: width,
            found: r.len(),
        });
    }
    let mut b = Builder {
        rows,
        targets,
        max_depth,
        min_leaf: min_leaf.max(1),
        nodes: Vec::new(),
    };
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    b.grow(&mut idx, 0);
    Ok(RegressionTree {
        max_depth,
        nodes: b.nodes,
    })
}
