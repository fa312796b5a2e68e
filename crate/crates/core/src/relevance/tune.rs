use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Items graded Good or better count as relevant.
pub const RELEVANT_GRADE: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedThreshold {
    pub market: String,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub passed: usize,
    /// False when no candidate reaches the target; the threshold then
    /// passes nothing.
    pub attainable: bool,
}

/// Smallest threshold `t` among the observed scores such that the items
/// with `score >= t` reach `precision_target`.
pub fn tune_market_threshold(
    predictions: &[f64],
    labels: &[f64],
    market: &str,
    precision_target: f64,
) -> Result<TunedThreshold> {
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if predictions.len() != labels.len() {
        return Err(Error::dims(predictions.len(), labels.len()));
    }
    if !(precision_target > 0.0 && precision_target <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "precision target {precision_target} outside (0, 1]"
        )));
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite);
    }
    let total_relevant = labels.iter().filter(|&&y| y >= RELEVANT_GRADE).count();
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].total_cmp(&predictions[a]));

    let mut best: Option<(f64, usize, usize)> = None;
    let (mut tp, mut n) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let v = predictions[order[i]];
        while i < order.len() && predictions[order[i]] == v {
            n += 1;
            if labels[order[i]] >= RELEVANT_GRADE {
                tp += 1;
            }
            i += 1;
        }
        if tp as f64 / n as f64 >= precision_target {
            best = Some((v, tp, n));
        }
    }
    let recall = |tp: usize| if total_relevant == 0 { 0.0 } else { tp as f64 / total_relevant as f64 };
    Ok(match best {
        Some((threshold, tp, n)) => TunedThreshold {
            market: market.to_string(),
            threshold,
            precision: tp as f64 / n as f64,
            recall: recall(tp),
            passed: n,
            attainable: true,
        },
        None => {
            let max = predictions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            TunedThreshold {
                market: market.to_string(),
                threshold: max.next_up(),
                precision: 0.0,
                recall: 0.0,
                passed: 0,
                attainable: false,
            }
        }
    })
}
