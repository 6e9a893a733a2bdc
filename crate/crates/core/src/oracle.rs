//! The black-box boundary: query construction, the [`Oracle`] trait, label
//! verbalization, losses on class probabilities and the call budget.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::math;
use crate::simplex::ProbVector;

/// Where the prompt tokens go relative to the input text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Placement {
    #[default]
    Prefix,
    Infix,
    Suffix,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prefix" => Ok(Placement::Prefix),
            "infix" => Ok(Placement::Infix),
            "suffix" => Ok(Placement::Suffix),
            other => Err(Error::invalid(alloc::format!("unknown placement {other:?}"))),
        }
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Prefix => "prefix",
            Placement::Infix => "infix",
            Placement::Suffix => "suffix",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub text: String,
    pub placement: Placement,
}

/// Joins the prompt tokens with single spaces and places them around `input`.
/// Infix placement inserts at the middle word boundary (`len / 2`).
pub fn build_query<S: AsRef<str>>(prompt_tokens: &[S], input: &str, placement: Placement) -> Query {
    let prompt: Vec<&str> = prompt_tokens.iter().map(AsRef::as_ref).collect();
    let text = if prompt.is_empty() {
        String::from(input)
    } else {
        let words: Vec<&str> = input.split_whitespace().collect();
        let mid = match placement {
            Placement::Prefix => 0,
            Placement::Infix => words.len() / 2,
            Placement::Suffix => words.len(),
        };
        let mut parts: Vec<&str> = Vec::with_capacity(words.len() + prompt.len());
        parts.extend_from_slice(&words[..mid]);
        parts.extend_from_slice(&prompt);
        parts.extend_from_slice(&words[mid..]);
        parts.join(" ")
    };
    Query { text, placement }
}

/// Maps class indices to label words and renders inputs through a template.
///
/// The template may contain `{a}` and `{b}` for the two text fields of an
/// example; other text (such as a mask marker) is passed through verbatim.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verbalizer {
    pub label_words: Vec<Vec<String>>,
    pub template: String,
}

pub const DEFAULT_TEMPLATE: &str = "{a}";

impl Verbalizer {
    pub fn new(label_words: Vec<Vec<String>>, template: impl Into<String>) -> Result<Self> {
        if label_words.len() < 2 {
            return Err(Error::invalid("verbalizer needs at least 2 classes"));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for words in &label_words {
            if words.is_empty() {
                return Err(Error::invalid("every class needs at least one label word"));
            }
            for w in words {
                if !seen.insert(w.as_str()) {
                    return Err(Error::invalid(alloc::format!("label word {w:?} used twice")));
                }
            }
        }
        Ok(Verbalizer { label_words, template: template.into() })
    }

    /// One word per class with the default template.
    pub fn simple<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        Self::new(words.iter().map(|w| alloc::vec![String::from(w.as_ref())]).collect(), DEFAULT_TEMPLATE)
    }

    /// Parses `"great|good,terrible|bad"`: classes split on `,`, words on `|`.
    pub fn parse_labels(spec: &str, template: impl Into<String>) -> Result<Self> {
        let classes = spec
            .split(',')
            .map(|c| c.split('|').map(|w| String::from(w.trim())).filter(|w| !w.is_empty()).collect())
            .collect();
        Self::new(classes, template)
    }

    pub fn num_classes(&self) -> usize {
        self.label_words.len()
    }

    /// All label words in class order, as sent to the oracle.
    pub fn candidates(&self) -> Vec<String> {
        self.label_words.iter().flatten().cloned().collect()
    }

    pub fn render(&self, text_a: &str, text_b: Option<&str>) -> String {
        let mut out = self.template.replace("{a}", text_a);
        if out.contains("{b}") {
            out = out.replace("{b}", text_b.unwrap_or(""));
        } else if let Some(b) = text_b {
            out.push(' ');
            out.push_str(b);
        }
        out.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Per-class scores for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassScores {
    /// Class log-scores: log of the summed label-word probabilities.
    pub raw: Vec<f64>,
    pub probs: ProbVector,
}

impl ClassScores {
    /// Softmax over class raw scores.
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() || raw.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::invalid("class scores must be non-empty and not NaN/+inf"));
        }
        let lse = math::log_sum_exp(&raw);
        if !lse.is_finite() {
            return Err(Error::invalid("all class scores are -inf"));
        }
        let mut probs: Vec<f64> = raw.iter().map(|r| math::exp(r - lse)).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p = (*p / sum).min(1.0));
        Ok(ClassScores { raw, probs: ProbVector::new(probs)? })
    }

    /// Groups the per-word log-probabilities of [`Verbalizer::candidates`]
    /// into classes (probabilities summed within a class) and normalizes.
    pub fn from_word_log_probs(verbalizer: &Verbalizer, word_scores: &[f64]) -> Result<Self> {
        let expected: usize = verbalizer.label_words.iter().map(Vec::len).sum();
        if word_scores.len() != expected {
            return Err(Error::OracleUnavailable(alloc::format!(
                "oracle returned {} scores for {expected} candidates",
                word_scores.len()
            )));
        }
        let mut raw = Vec::with_capacity(verbalizer.num_classes());
        let mut offset = 0;
        for words in &verbalizer.label_words {
            raw.push(math::log_sum_exp(&word_scores[offset..offset + words.len()]));
            offset += words.len();
        }
        Self::from_raw(raw)
    }

    pub fn predicted(&self) -> usize {
        self.probs.argmax()
    }
}

/// Probability floor inside [`cross_entropy`].
pub const CE_FLOOR: f64 = 1e-12;

pub fn cross_entropy(scores: &ClassScores, label: usize) -> Result<f64> {
    let p = *scores.probs.get(label).ok_or_else(|| Error::invalid("label out of range"))?;
    Ok(-math::ln(p.max(CE_FLOOR)))
}

/// Multiclass margin hinge on probabilities: `max(0, m - p_y + max_{y'≠y} p_y')`.
pub fn hinge(scores: &ClassScores, label: usize, margin: f64) -> Result<f64> {
    let probs = &scores.probs;
    let py = *probs.get(label).ok_or_else(|| Error::invalid("label out of range"))?;
    let rival = probs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let rival = if rival.is_finite() { rival } else { 0.0 };
    Ok((margin - py + rival).max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    #[default]
    CrossEntropy,
    Hinge,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "cross_entropy" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            other => Err(Error::invalid(alloc::format!("unknown loss {other:?}"))),
        }
    }
}

impl LossKind {
    pub fn eval(self, scores: &ClassScores, label: usize, margin: f64) -> Result<f64> {
        match self {
            LossKind::CrossEntropy => cross_entropy(scores, label),
            LossKind::Hinge => hinge(scores, label, margin),
        }
    }
}

/// What one ledger unit pays for.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BillingUnit {
    /// One unit per batch request.
    #[default]
    PerRequest,
    /// One unit per query in the batch.
    PerExample,
}

impl FromStr for BillingUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "request" | "per_request" => Ok(BillingUnit::PerRequest),
            "example" | "per_example" => Ok(BillingUnit::PerExample),
            other => Err(Error::invalid(alloc::format!("unknown billing unit {other:?}"))),
        }
    }
}

impl BillingUnit {
    pub fn units(self, batch_len: usize) -> u64 {
        match self {
            BillingUnit::PerRequest => 1,
            BillingUnit::PerExample => batch_len as u64,
        }
    }
}

/// Hard cap on billed oracle calls, safe to share between threads.
///
/// Calls are reserved before they are sent and committed only when the
/// oracle answers, so `used <= reserved <= limit` holds at every instant and
/// `used` never decreases.
#[derive(Debug)]
pub struct BudgetLedger {
    limit: u64,
    claimed: AtomicU64,
    used: AtomicU64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LedgerState {
    pub limit: u64,
    pub used: u64,
}

impl BudgetLedger {
    pub fn new(limit: u64) -> Self {
        BudgetLedger { limit, claimed: AtomicU64::new(0), used: AtomicU64::new(0) }
    }

    /// Restores a ledger that has already billed `state.used` calls.
    pub fn from_state(state: LedgerState) -> Result<Self> {
        if state.used > state.limit {
            return Err(Error::invalid("ledger used exceeds its limit"));
        }
        Ok(BudgetLedger {
            limit: state.limit,
            claimed: AtomicU64::new(state.used),
            used: AtomicU64::new(state.used),
        })
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::SeqCst)
    }

    /// Calls still available to new reservations.
    pub fn remaining(&self) -> u64 {
        self.limit - self.claimed.load(Ordering::SeqCst)
    }

    pub fn state(&self) -> LedgerState {
        LedgerState { limit: self.limit, used: self.used() }
    }

    pub fn reserve(&self, units: u64) -> Result<Reservation<'_>> {
        let mut current = self.claimed.load(Ordering::SeqCst);
        loop {
            let next = current.checked_add(units).filter(|&n| n <= self.limit).ok_or(
                Error::BudgetExceeded { limit: self.limit, used: self.used(), requested: units },
            )?;
            match self.claimed.compare_exchange(current, next, Ordering::SeqCst, Ordering::SeqCst) {
                Ok(_) => return Ok(Reservation { ledger: self, units, settled: false }),
                Err(actual) => current = actual,
            }
        }
    }
}

/// Reserved calls; dropped without [`Reservation::commit`] they are released.
#[must_use]
pub struct Reservation<'a> {
    ledger: &'a BudgetLedger,
    units: u64,
    settled: bool,
}

impl Reservation<'_> {
    pub fn commit(mut self) {
        self.ledger.used.fetch_add(self.units, Ordering::SeqCst);
        self.settled = true;
    }
}

impl Drop for Reservation<'_> {
    fn drop(&mut self) {
        if !self.settled {
            self.ledger.claimed.fetch_sub(self.units, Ordering::SeqCst);
        }
    }
}

/// A black-box scorer: for each query text, one log-probability per
/// candidate word, in the order sent.
pub trait Oracle {
    fn score(&self, inputs: &[String], candidates: &[Vec<String>]) -> Result<Vec<Vec<f64>>>;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn score(&self, inputs: &[String], candidates: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        (**self).score(inputs, candidates)
    }
}

/// Scores a batch of queries through `verbalizer`, billing `ledger`.
pub fn predict<O: Oracle + ?Sized>(
    oracle: &O,
    queries: &[Query],
    verbalizer: &Verbalizer,
    ledger: &BudgetLedger,
    billing: BillingUnit,
) -> Result<Vec<ClassScores>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let reservation = ledger.reserve(billing.units(queries.len()))?;
    let inputs: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let words = verbalizer.candidates();
    let candidates = alloc::vec![words; queries.len()];
    let scores = oracle.score(&inputs, &candidates).map_err(|e| match e {
        Error::OracleUnavailable(_) => e,
        other => Error::OracleUnavailable(alloc::format!("{other}")),
    })?;
    reservation.commit();
    if scores.len() != queries.len() {
        return Err(Error::OracleUnavailable(alloc::format!(
            "oracle answered {} of {} queries",
            scores.len(),
            queries.len()
        )));
    }
    scores.iter().map(|s| ClassScores::from_word_log_probs(verbalizer, s)).collect()
}
