//! Metrics, user-independent cross-validation and the segment-count sweep.

mod cv;
mod sweep;

pub use cv::{cross_validate, write_cv, CvReport, CvRun, FoldReport};
pub use sweep::{sweep_segments, SweepPoint, SweepResult};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, CLASS_NAMES, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::model::{predict, Ensemble};
use crate::pipeline::{FeatureConfig, FeatureExtractor};
use crate::sampler::SamplingMode;
use crate::tensor::PROB_FLOOR;

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_pairs(truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::shape(
                "confusion",
                format!("{} labels against {} predictions", truth.len(), predicted.len()),
            ));
        }
        let mut cm = ConfusionMatrix::default();
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::invalid(format!("class index out of range: ({t}, {p})")));
            }
            cm.counts[t][p] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    /// `trace / total`, or 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> [u64; NUM_CLASSES] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("true\\pred,{}\n", CLASS_NAMES.join(","));
        for (name, row) in CLASS_NAMES.iter().zip(&self.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            out.push_str(&format!("{name},{}\n", cells.join(",")));
        }
        out
    }
}

/// Fraction of positions where `predicted` matches `truth`.
pub fn accuracy_by_counting(truth: &[usize], predicted: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let hits = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// Mean cross-entropy of the aggregated distribution.
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Scores the clips `ids` with deterministic (centred) segment sampling.
pub fn evaluate(ens: &Ensemble, ds: &Dataset, ids: &[usize], features: &FeatureConfig, batch_size: usize) -> Result<EvalReport> {
    if ids.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    if features.sampler.segments != ens.segments {
        return Err(Error::invalid(format!(
            "model has {} segments but the sampler draws {}",
            ens.segments, features.sampler.segments
        )));
    }
    let fx = FeatureExtractor::new(*features)?;
    let mut predictions = Vec::with_capacity(ids.len());
    let mut loss = 0.0;
    for chunk in ids.chunks(batch_size.max(1)) {
        let batches = fx.batch(ds, chunk, SamplingMode::Deterministic, 0, 0)?;
        for (scores, &id) in ens.scores(&batches)?.iter().zip(chunk) {
            let label = ds.clips[id].label;
            let p = scores[label] as f64 / ens.segments as f64;
            loss -= p.max(PROB_FLOOR).ln();
            predictions.push(predict(scores));
        }
    }
    let truth: Vec<usize> = ids.iter().map(|&i| ds.clips[i].label).collect();
    let confusion = ConfusionMatrix::from_pairs(&truth, &predictions)?;
    Ok(EvalReport {
        accuracy: confusion.accuracy(),
        loss: loss / ids.len() as f64,
        confusion,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced(per_class: usize) -> Vec<usize> {
        (0..NUM_CLASSES * per_class).map(|i| i % NUM_CLASSES).collect()
    }

    #[test]
    fn perfect_classifier() {
        let truth = balanced(10);
        let cm = ConfusionMatrix::from_pairs(&truth, &truth).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        assert!((0..NUM_CLASSES).all(|i| cm.counts[i][i] == 10));
        assert_eq!(cm.total(), 60);
    }

    #[test]
    fn constant_predictor() {
        let truth = balanced(10);
        let cm = ConfusionMatrix::from_pairs(&truth, &vec![0; 60]).unwrap();
        assert_eq!(cm.accuracy(), 1.0 / 6.0);
        assert!((0..NUM_CLASSES).all(|i| cm.counts[i][0] == 10));
        assert_eq!(cm.row_sums(), [10; 6]);
    }

    #[test]
    fn counting_agrees_with_trace() {
        let truth = balanced(7);
        let pred: Vec<usize> = truth.iter().map(|&t| (t * 5 + t / 3) % 6).collect();
        let cm = ConfusionMatrix::from_pairs(&truth, &pred).unwrap();
        assert_eq!(cm.accuracy(), accuracy_by_counting(&truth, &pred));
    }

    #[test]
    fn merge_is_cellwise() {
        let a = ConfusionMatrix::from_pairs(&[0, 1, 2], &[0, 2, 2]).unwrap();
        let b = ConfusionMatrix::from_pairs(&[1, 1], &[2, 1]).unwrap();
        let mut m = a;
        m.merge(&b);
        assert_eq!(m.counts[1][2], 2);
        assert_eq!(m.total(), 5);
    }

    #[test]
    fn csv_layout() {
        let cm = ConfusionMatrix::from_pairs(&[5], &[4]).unwrap();
        let csv = cm.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "true\\pred,neutral,happy,anger,disgust,fear,sad");
        assert_eq!(lines[6], "sad,0,0,0,0,1,0");
    }
}
