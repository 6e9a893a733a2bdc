//! The learnable prompt state: one categorical distribution per prompt
//! position, sampling, and the score function of a sampled prompt.

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::simplex::ProbVector;

/// Lower clamp on `p[i][j_i]` before taking `1 / p` in [`PromptDistribution::score`].
pub const PROB_FLOOR: f64 = 1e-6;

/// `n` independent categorical distributions over the same `N` candidates.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptDistribution {
    rows: Vec<ProbVector>,
}

/// One draw `j_1 .. j_n` from a [`PromptDistribution`].
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSample {
    pub indices: Vec<usize>,
    pub tokens: Vec<String>,
    /// `Σ_i ln p[i][j_i]`.
    pub log_prob: f64,
}

/// Entry `(i, j)` is `∂ ln P(t_i) / ∂ p[i][j]` at a sample: `+1/p[i][j_i]`
/// at the sampled column and `-1/p[i][j_i]` everywhere else.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl PromptDistribution {
    /// Every row uniform over `vocab_size` candidates.
    pub fn uniform(prompt_length: usize, vocab_size: usize) -> Result<Self> {
        if prompt_length < 1 {
            return Err(Error::invalid("prompt length must be at least 1"));
        }
        if vocab_size < 2 {
            return Err(Error::invalid("vocabulary size must be at least 2"));
        }
        let row = ProbVector::uniform(vocab_size)?;
        Ok(PromptDistribution { rows: alloc::vec![row; prompt_length] })
    }

    pub fn from_rows(rows: Vec<ProbVector>) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::invalid("prompt length must be at least 1"));
        };
        let width = first.len();
        if width < 2 {
            return Err(Error::invalid("vocabulary size must be at least 2"));
        }
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("rows have different dimensions"));
        }
        Ok(PromptDistribution { rows })
    }

    /// Builds from raw rows, validating each against the simplex invariants.
    pub fn from_raw(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows.into_iter().map(ProbVector::new).collect::<Result<_>>()?)
    }

    pub fn prompt_length(&self) -> usize {
        self.rows.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[ProbVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &ProbVector {
        &self.rows[i]
    }

    pub fn to_raw(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.to_vec()).collect()
    }

    pub fn set_row(&mut self, i: usize, row: ProbVector) -> Result<()> {
        if i >= self.rows.len() || row.len() != self.vocab_size() {
            return Err(Error::invalid("row index or dimension mismatch"));
        }
        self.rows[i] = row;
        Ok(())
    }

    /// Draws each position independently and realizes the tokens from `vocab`.
    pub fn sample<R: Rng + ?Sized, S: AsRef<str>>(
        &self,
        vocab: &[S],
        rng: &mut R,
    ) -> Result<PromptSample> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::invalid("vocabulary size does not match distribution"));
        }
        let mut indices = Vec::with_capacity(self.rows.len());
        let mut log_prob = 0.0;
        for row in &self.rows {
            let j = sample_categorical(row, rng.random::<f64>());
            log_prob += math::ln(row[j]);
            indices.push(j);
        }
        let tokens = indices.iter().map(|&j| String::from(vocab[j].as_ref())).collect();
        Ok(PromptSample { indices, tokens, log_prob })
    }

    pub fn score(&self, sample: &PromptSample) -> Result<ScoreMatrix> {
        if sample.indices.len() != self.rows.len() {
            return Err(Error::invalid("sample length does not match prompt length"));
        }
        let width = self.vocab_size();
        let rows = self
            .rows
            .iter()
            .zip(&sample.indices)
            .map(|(row, &ji)| {
                if ji >= width {
                    return Err(Error::invalid("sampled index out of range"));
                }
                let inv = 1.0 / row[ji].max(PROB_FLOOR);
                let mut s = alloc::vec![-inv; width];
                s[ji] = inv;
                Ok(s)
            })
            .collect::<Result<_>>()?;
        Ok(ScoreMatrix { rows })
    }

    /// `argmax_j p[i][j]` per position, lowest index on ties.
    pub fn argmax_indices(&self) -> Vec<usize> {
        self.rows.iter().map(ProbVector::argmax).collect()
    }

    pub fn argmax_prompt<S: AsRef<str>>(&self, vocab: &[S]) -> Result<Vec<String>> {
        if vocab.len() != self.vocab_size() {
            return Err(Error::invalid("vocabulary size does not match distribution"));
        }
        Ok(self.argmax_indices().into_iter().map(|j| String::from(vocab[j].as_ref())).collect())
    }
}

/// Inverse-CDF draw for `u ∈ [0, 1)`. Falls back to the last positive entry
/// when rounding leaves `u` above the final cumulative sum.
fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (j, &pj) in p.iter().enumerate() {
        cum += pj;
        if u < cum {
            return j;
        }
    }
    p.iter().rposition(|&pj| pj > 0.0).unwrap_or(p.len() - 1)
}
