//! Score-function gradient estimates from sampled prompts and their losses.
//!
//! [`vr_pge`] subtracts the mean loss of the `I` samples before weighting
//! each score, scaled by `1 / (I - 1)`. [`plain_pge`] weights each score by
//! its raw loss and is kept as the high-variance reference.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::prompt::{PromptSample, ScoreMatrix};

/// `I` samples drawn from one distribution snapshot, with the mean batch
/// loss and score matrix of each.
#[derive(Clone, Debug)]
pub struct SampleBatchRecord {
    samples: Vec<PromptSample>,
    losses: Vec<f64>,
    scores: Vec<ScoreMatrix>,
}

/// One gradient row per prompt position.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub rows: Vec<Vec<f64>>,
}

impl SampleBatchRecord {
    pub fn new(samples: Vec<PromptSample>, losses: Vec<f64>, scores: Vec<ScoreMatrix>) -> Result<Self> {
        if samples.len() != losses.len() || losses.len() != scores.len() {
            return Err(Error::invalid("samples, losses and scores differ in count"));
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("non-finite loss"));
        }
        if let Some(first) = scores.first() {
            let width = first.rows.first().map_or(0, Vec::len);
            let consistent = scores.iter().all(|s| {
                s.rows.len() == first.rows.len() && s.rows.iter().all(|r| r.len() == width)
            });
            if !consistent {
                return Err(Error::invalid("score matrices differ in shape"));
            }
        }
        Ok(SampleBatchRecord { samples, losses, scores })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn samples(&self) -> &[PromptSample] {
        &self.samples
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn scores(&self) -> &[ScoreMatrix] {
        &self.scores
    }

    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }

    fn weighted_sum(&self, weights: impl Iterator<Item = f64>) -> GradientEstimate {
        let first = &self.scores[0];
        let mut rows: Vec<Vec<f64>> = first.rows.iter().map(|r| alloc::vec![0.0; r.len()]).collect();
        for (w, score) in weights.zip(&self.scores) {
            for (acc, s) in rows.iter_mut().zip(&score.rows) {
                for (a, x) in acc.iter_mut().zip(s) {
                    *a += w * x;
                }
            }
        }
        GradientEstimate { rows }
    }
}

/// `g_i = 1/(I-1) Σ_k (L_k - L_avg) · score_k[i]`.
pub fn vr_pge(record: &SampleBatchRecord) -> Result<GradientEstimate> {
    let count = record.len();
    if count < 2 {
        return Err(Error::invalid("variance-reduced estimator needs at least 2 samples"));
    }
    let avg = record.mean_loss();
    let scale = 1.0 / (count - 1) as f64;
    Ok(record.weighted_sum(record.losses.iter().map(|l| (l - avg) * scale)))
}

/// `g_i = 1/I Σ_k L_k · score_k[i]`.
pub fn plain_pge(record: &SampleBatchRecord) -> Result<GradientEstimate> {
    let count = record.len();
    if count < 1 {
        return Err(Error::invalid("estimator needs at least 1 sample"));
    }
    let scale = 1.0 / count as f64;
    Ok(record.weighted_sum(record.losses.iter().map(|l| l * scale)))
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        math::sqrt(self.rows.iter().flatten().map(|x| x * x).sum())
    }

    /// Rescales so the global L2 norm is at most `max_norm`.
    pub fn clip_to_norm(&mut self, max_norm: f64) {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            self.rows.iter_mut().flatten().for_each(|x| *x *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rows.iter().flatten().all(|x| x.is_finite())
    }
}
