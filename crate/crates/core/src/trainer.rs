//! The sample, query, estimate, project loop and everything around it:
//! evaluation, best-dev retention, checkpoints and prompt transfer.

use alloc::string::String;
use alloc::vec::Vec;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Example, FewShotSplit};
use crate::error::{Error, Result};
use crate::estimator::{vr_pge, GradientEstimate, SampleBatchRecord};
use crate::math;
use crate::metrics::{ConfusionMatrix, Metric};
use crate::oracle::{
    build_query, predict, BillingUnit, BudgetLedger, LedgerState, LossKind, Oracle, Placement, Verbalizer,
};
use crate::prompt::PromptDistribution;
use crate::simplex::{project, ProbVector};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum OptimizerKind {
    /// `p_i <- proj(p_i - η g_i)`.
    #[default]
    ProjectedSgd,
    /// Bias-corrected first/second moment step, then projection.
    AdaptiveMomentProjected,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" | "projected_sgd" => Ok(OptimizerKind::ProjectedSgd),
            "adam" | "adaptive_moment_projected" => Ok(OptimizerKind::AdaptiveMomentProjected),
            other => Err(Error::invalid(alloc::format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub prompt_length: usize,
    pub vocab_size: usize,
    /// `I`, prompts sampled per step.
    pub sample_count: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub loss: LossKind,
    pub hinge_margin: f64,
    pub optimizer: OptimizerKind,
    pub placement: Placement,
    pub budget_limit: u64,
    pub billing: BillingUnit,
    pub metric: Metric,
    /// Optional global L2 clip on the gradient estimate.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            prompt_length: 50,
            vocab_size: 100,
            sample_count: 4,
            learning_rate: 1e-4,
            epochs: 30,
            batch_size: 4,
            eval_batch_size: 4,
            loss: LossKind::CrossEntropy,
            hinge_margin: 1.0,
            optimizer: OptimizerKind::ProjectedSgd,
            placement: Placement::Prefix,
            budget_limit: 8000,
            billing: BillingUnit::PerRequest,
            metric: Metric::Accuracy,
            clip_norm: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Hard requirements. A zero learning rate or budget is accepted: the
    /// first gives a frozen distribution, the second an immediate budget halt.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(String::from(m)));
        if self.prompt_length < 1 {
            return fail("prompt length must be at least 1");
        }
        if self.vocab_size < 2 {
            return fail("vocabulary size must be at least 2");
        }
        if self.sample_count < 2 {
            return fail("sample count must be at least 2");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning rate must be finite and non-negative");
        }
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size < 1 || self.eval_batch_size < 1 {
            return fail("batch sizes must be at least 1");
        }
        if self.hinge_margin.is_nan() || self.hinge_margin <= 0.0 {
            return fail("hinge margin must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return fail("clip norm must be positive");
        }
        Ok(())
    }

    /// Soft guidance from the usual tuning ranges; returned as warnings.
    pub fn advisories(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(1e-5..=1e-3).contains(&self.learning_rate) {
            out.push(alloc::format!("learning rate {} is outside [1e-5, 1e-3]", self.learning_rate));
        }
        if ![10, 12, 25, 50, 75].contains(&self.prompt_length) {
            out.push(alloc::format!("prompt length {} is not one of 10, 12, 25, 50, 75", self.prompt_length));
        }
        if !(50..=200).contains(&self.vocab_size) {
            out.push(alloc::format!("vocabulary size {} is outside [50, 200]", self.vocab_size));
        }
        out
    }
}

/// Everything needed to score examples under a fixed prompt.
pub struct EvalContext<'a, O: ?Sized> {
    pub oracle: &'a O,
    pub verbalizer: &'a Verbalizer,
    pub ledger: &'a BudgetLedger,
    pub placement: Placement,
    pub billing: BillingUnit,
    pub batch_size: usize,
}

impl<O: ?Sized> Clone for EvalContext<'_, O> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<O: ?Sized> Copy for EvalContext<'_, O> {}

impl<O: Oracle + ?Sized> EvalContext<'_, O> {
    fn queries<S: AsRef<str>>(&self, prompt: &[S], batch: &[Example]) -> Vec<crate::oracle::Query> {
        batch.iter().map(|e| build_query(prompt, &e.render(self.verbalizer), self.placement)).collect()
    }

    /// Mean loss of one batch under `prompt`, as a single billed request.
    pub fn batch_loss<S: AsRef<str>>(&self, prompt: &[S], batch: &[Example], loss: LossKind, margin: f64) -> Result<f64> {
        let scores = predict(self.oracle, &self.queries(prompt, batch), self.verbalizer, self.ledger, self.billing)?;
        let mut total = 0.0;
        for (s, e) in scores.iter().zip(batch) {
            total += loss.eval(s, e.label, margin)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Predicted class for every example, in `batch_size` chunks.
    pub fn predictions<S: AsRef<str>>(&self, prompt: &[S], examples: &[Example]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(self.batch_size.max(1)) {
            let scores = predict(self.oracle, &self.queries(prompt, chunk), self.verbalizer, self.ledger, self.billing)?;
            out.extend(scores.iter().map(|s| s.predicted()));
        }
        Ok(out)
    }
}

/// Runs the fixed prompt over `examples` and reports `metric`.
pub fn evaluate<O: Oracle + ?Sized, S: AsRef<str>>(
    prompt: &[S],
    examples: &[Example],
    ctx: &EvalContext<'_, O>,
    metric: Metric,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let preds = ctx.predictions(prompt, examples)?;
    let cm = ConfusionMatrix::from_pairs(
        ctx.verbalizer.num_classes(),
        preds.into_iter().zip(examples.iter().map(|e| e.label)),
    )?;
    Ok(cm.metric(metric))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab: Vec<String>,
    /// `n × N` probabilities of the retained (best-dev) distribution.
    pub rows: Vec<Vec<f64>>,
    pub ledger: LedgerState,
    pub rng_state: RngState,
    pub best_dev: Option<f64>,
}

impl Checkpoint {
    pub fn distribution(&self) -> Result<PromptDistribution> {
        PromptDistribution::from_raw(self.rows.clone())
    }

    /// Argmax token per row. A checkpoint without rows yields an empty prompt.
    pub fn argmax_prompt(&self) -> Result<Vec<String>> {
        self.rows
            .iter()
            .map(|row| {
                if row.len() != self.vocab.len() {
                    return Err(Error::invalid("checkpoint row width differs from its vocabulary"));
                }
                let p = ProbVector::new(row.clone())?;
                Ok(self.vocab[p.argmax()].clone())
            })
            .collect()
    }
}

/// Evaluates a checkpoint's argmax prompt on another task with no updates.
pub fn transfer<O: Oracle + ?Sized>(
    source: &Checkpoint,
    target: &[Example],
    ctx: &EvalContext<'_, O>,
    metric: Metric,
) -> Result<f64> {
    let prompt = source.argmax_prompt()?;
    evaluate(&prompt, target, ctx, metric)
}

#[derive(Clone, Debug)]
struct MomentState {
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub losses: Vec<f64>,
    pub mean_loss: f64,
    pub gradient_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub dev_metric: Option<f64>,
    pub billed: u64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub checkpoint: Checkpoint,
    /// Why training stopped early, if it did.
    pub halt: Option<Error>,
    pub epochs: Vec<EpochRecord>,
    /// Mean sampled loss of every completed step.
    pub step_losses: Vec<f64>,
}

/// Single owner of a prompt distribution during training.
pub struct Trainer<'a, O: ?Sized> {
    config: TrainConfig,
    vocab: Vec<String>,
    ctx: EvalContext<'a, O>,
    dist: PromptDistribution,
    rng: ChaCha8Rng,
    moments: Option<MomentState>,
}

impl<'a, O: Oracle + ?Sized> Trainer<'a, O> {
    /// Starts from the uniform distribution.
    pub fn new(
        config: TrainConfig,
        vocab: Vec<String>,
        oracle: &'a O,
        verbalizer: &'a Verbalizer,
        ledger: &'a BudgetLedger,
    ) -> Result<Self> {
        let dist = PromptDistribution::uniform(config.prompt_length, config.vocab_size)?;
        Self::with_distribution(config, vocab, dist, oracle, verbalizer, ledger)
    }

    pub fn with_distribution(
        config: TrainConfig,
        vocab: Vec<String>,
        dist: PromptDistribution,
        oracle: &'a O,
        verbalizer: &'a Verbalizer,
        ledger: &'a BudgetLedger,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size || dist.vocab_size() != config.vocab_size {
            return Err(Error::Config(alloc::format!(
                "vocabulary has {} entries, distribution {}, config expects {}",
                vocab.len(),
                dist.vocab_size(),
                config.vocab_size
            )));
        }
        if dist.prompt_length() != config.prompt_length {
            return Err(Error::Config("distribution length differs from prompt length".into()));
        }
        let ctx = EvalContext {
            oracle,
            verbalizer,
            ledger,
            placement: config.placement,
            billing: config.billing,
            batch_size: config.eval_batch_size,
        };
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer { config, vocab, ctx, dist, rng, moments: None })
    }

    pub fn distribution(&self) -> &PromptDistribution {
        &self.dist
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn context(&self) -> EvalContext<'a, O> {
        self.ctx
    }

    pub fn argmax_prompt(&self) -> Vec<String> {
        self.dist.argmax_prompt(&self.vocab).expect("vocabulary size checked at construction")
    }

    /// Draws `I` prompts, scores `batch` under each, forms the
    /// variance-reduced gradient and applies the configured update.
    ///
    /// Fails without billing anything if the ledger cannot cover all `I`
    /// requests; the distribution is untouched on any error.
    pub fn train_step(&mut self, batch: &[Example]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let count = self.config.sample_count;
        let needed = count as u64 * self.config.billing.units(batch.len());
        let remaining = self.ctx.ledger.remaining();
        if remaining < needed {
            return Err(Error::BudgetExceeded {
                limit: self.ctx.ledger.limit(),
                used: self.ctx.ledger.used(),
                requested: needed,
            });
        }

        let mut samples = Vec::with_capacity(count);
        let mut losses = Vec::with_capacity(count);
        let mut scores = Vec::with_capacity(count);
        for _ in 0..count {
            let sample = self.dist.sample(&self.vocab, &mut self.rng)?;
            let loss = self.ctx.batch_loss(&sample.tokens, batch, self.config.loss, self.config.hinge_margin)?;
            scores.push(self.dist.score(&sample)?);
            samples.push(sample);
            losses.push(loss);
        }
        let record = SampleBatchRecord::new(samples, losses, scores)?;
        let mut grad = vr_pge(&record)?;
        if let Some(c) = self.config.clip_norm {
            grad.clip_to_norm(c);
        }
        let gradient_norm = grad.norm();
        self.apply(&grad)?;
        Ok(StepReport { mean_loss: record.mean_loss(), losses: record.losses().to_vec(), gradient_norm })
    }

    fn apply(&mut self, grad: &GradientEstimate) -> Result<()> {
        let lr = self.config.learning_rate;
        let mut next = Vec::with_capacity(self.dist.prompt_length());
        match self.config.optimizer {
            OptimizerKind::ProjectedSgd => {
                for (row, g) in self.dist.rows().iter().zip(&grad.rows) {
                    let z: Vec<f64> = row.iter().zip(g).map(|(p, g)| p - lr * g).collect();
                    next.push(project(&z)?);
                }
            }
            OptimizerKind::AdaptiveMomentProjected => {
                let state = self.moments.get_or_insert_with(|| MomentState {
                    first: grad.rows.iter().map(|r| alloc::vec![0.0; r.len()]).collect(),
                    second: grad.rows.iter().map(|r| alloc::vec![0.0; r.len()]).collect(),
                    steps: 0,
                });
                state.steps += 1;
                let c1 = 1.0 - libm::pow(BETA1, state.steps as f64);
                let c2 = 1.0 - libm::pow(BETA2, state.steps as f64);
                for (i, row) in self.dist.rows().iter().enumerate() {
                    let z: Vec<f64> = row
                        .iter()
                        .enumerate()
                        .map(|(j, p)| {
                            let g = grad.rows[i][j];
                            let m = &mut state.first[i][j];
                            let v = &mut state.second[i][j];
                            *m = BETA1 * *m + (1.0 - BETA1) * g;
                            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                            p - lr * (*m / c1) / (math::sqrt(*v / c2) + ADAM_EPS)
                        })
                        .collect();
                    next.push(project(&z)?);
                }
            }
        }
        self.dist = PromptDistribution::from_rows(next)?;
        Ok(())
    }

    fn checkpoint(&self, dist: &PromptDistribution, best_dev: Option<f64>) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            rows: dist.to_raw(),
            ledger: self.ctx.ledger.state(),
            rng_state: RngState { seed: self.config.seed, word_pos: self.rng.get_word_pos() },
            best_dev,
        }
    }

    /// Epochs of seed-shuffled mini-batches with an argmax-prompt dev
    /// evaluation after each; keeps the best-dev distribution (later epochs
    /// win ties). Budget or oracle failures stop the run and are reported in
    /// [`TrainReport::halt`] alongside a valid checkpoint.
    pub fn train(&mut self, split: &FewShotSplit) -> TrainReport {
        self.train_with(split, |_| {})
    }

    /// [`Trainer::train`] with `on_epoch` called after every completed epoch.
    pub fn train_with<F: FnMut(&EpochRecord)>(&mut self, split: &FewShotSplit, mut on_epoch: F) -> TrainReport {
        let mut best: Option<(f64, PromptDistribution)> = None;
        let mut epochs = Vec::new();
        let mut step_losses = Vec::new();
        let mut halt = None;
        let train = &split.train;

        'epochs: for epoch in 0..self.config.epochs {
            if train.is_empty() {
                halt = Some(Error::InvalidDataset("training split is empty".into()));
                break;
            }
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut self.rng);
            let mut epoch_loss = 0.0;
            let mut steps = 0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<Example> = chunk.iter().map(|&i| train[i].clone()).collect();
                match self.train_step(&batch) {
                    Ok(report) => {
                        epoch_loss += report.mean_loss;
                        steps += 1;
                        step_losses.push(report.mean_loss);
                    }
                    Err(e) => {
                        halt = Some(e);
                        break 'epochs;
                    }
                }
            }
            let dev_metric = if split.dev.is_empty() {
                None
            } else {
                match evaluate(&self.argmax_prompt(), &split.dev, &self.ctx, self.config.metric) {
                    Ok(m) => Some(m),
                    Err(e) => {
                        halt = Some(e);
                        break 'epochs;
                    }
                }
            };
            if let Some(m) = dev_metric {
                if best.as_ref().is_none_or(|(b, _)| m >= *b) {
                    best = Some((m, self.dist.clone()));
                }
            }
            let record = EpochRecord {
                epoch,
                mean_train_loss: epoch_loss / steps.max(1) as f64,
                dev_metric,
                billed: self.ctx.ledger.used(),
            };
            on_epoch(&record);
            epochs.push(record);
        }

        let checkpoint = match &best {
            Some((m, dist)) => self.checkpoint(dist, Some(*m)),
            None => self.checkpoint(&self.dist, None),
        };
        TrainReport { checkpoint, halt, epochs, step_losses }
    }
}
