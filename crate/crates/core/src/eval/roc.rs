use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::Direction;
use crate::error::{Error, Result};
use crate::nn::ClassProbabilities;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    pub threshold: f64,
}

impl RocPoint {
    /// Squared distance to the ideal corner (0, 1).
    pub fn corner_distance_sq(&self) -> f64 {
        self.false_positive_rate.powi(2) + (1.0 - self.true_positive_rate).powi(2)
    }
}

/// STAY vs NON-STAY curve; NON-STAY is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Sorted by ascending threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Every distinct observed `p_stay` plus 0 and 1, ascending.
pub fn threshold_grid(probabilities: &[ClassProbabilities]) -> Vec<f64> {
    let mut grid: Vec<f64> = probabilities.iter().map(|p| p.p_stay).chain([0.0, 1.0]).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Sweeps `grid`. At threshold t an occasion is predicted NON-STAY unless
/// `p_stay > t`.
pub fn roc(probabilities: &[ClassProbabilities], references: &[Direction], grid: &[f64]) -> Result<RocCurve> {
    if probabilities.len() != references.len() {
        return Err(Error::Evaluation(format!(
            "{} probability vectors for {} references",
            probabilities.len(),
            references.len()
        )));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) || !grid.contains(&0.0) || !grid.contains(&1.0) {
        return Err(Error::Evaluation("threshold grid must lie in [0, 1] and include both endpoints".into()));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (p, r) in probabilities.iter().zip(references) {
        if r.is_stay() {
            negatives.push(p.p_stay);
        } else {
            positives.push(p.p_stay);
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Evaluation(format!(
            "ROC needs both classes ({} NON-STAY, {} STAY references)",
            positives.len(),
            negatives.len()
        )));
    }
    positives.sort_by(f64::total_cmp);
    negatives.sort_by(f64::total_cmp);
    let at_or_below = |sorted: &[f64], t: f64| sorted.partition_point(|&s| s <= t) as f64;

    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let points: Vec<RocPoint> = grid
        .iter()
        .map(|&t| RocPoint {
            false_positive_rate: at_or_below(&negatives, t) / negatives.len() as f64,
            true_positive_rate: at_or_below(&positives, t) / positives.len() as f64,
            threshold: t,
        })
        .collect();
    let auc = trapezoid_auc(&points);
    Ok(RocCurve { points, auc })
}

/// [`roc`] over [`threshold_grid`].
pub fn roc_auto(probabilities: &[ClassProbabilities], references: &[Direction]) -> Result<RocCurve> {
    roc(probabilities, references, &threshold_grid(probabilities))
}

/// Area under the FPR-sorted curve, anchored at (0, 0) and (1, 1).
fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.false_positive_rate, p.true_positive_rate)).collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    xy.windows(2).map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0).sum()
}

/// Grid threshold whose point lies nearest (0, 1). Ties go to the higher TPR,
/// then the lower threshold.
pub fn select_threshold(curve: &RocCurve) -> f64 {
    curve
        .points
        .iter()
        .min_by(|a, b| {
            a.corner_distance_sq()
                .total_cmp(&b.corner_distance_sq())
                .then(b.true_positive_rate.total_cmp(&a.true_positive_rate))
                .then(a.threshold.total_cmp(&b.threshold))
        })
        .map(|p| p.threshold)
        .expect("a curve has at least the two endpoint thresholds")
}

pub fn write_roc_csv<W: Write>(curve: &RocCurve, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["threshold", "false_positive_rate", "true_positive_rate"])?;
    for p in &curve.points {
        w.serialize((p.threshold, p.false_positive_rate, p.true_positive_rate))?;
    }
    w.flush()?;
    Ok(())
}
