//! A deterministic synthetic oracle with planted prompt tokens.
//!
//! Class `c` of an input scores `base(input, c) + weight · k_c`, where `k_c`
//! is the number of distinct planted tokens of class `c` that appear in the
//! prompt part of the query. The oracle only sees query text: it recovers
//! the input by matching its known inputs around the prompt (prefix, suffix
//! or any interior split), so it can stand behind an HTTP endpoint unchanged.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::Example;
use crate::error::{Error, Result};
use crate::math;
use crate::oracle::{Oracle, Verbalizer, DEFAULT_TEMPLATE};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedClass {
    pub label_words: Vec<String>,
    pub planted: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedSpec {
    pub classes: Vec<PlantedClass>,
    /// Score added per planted token present; must be positive.
    pub weight: f64,
    /// Base class scores keyed by rendered input text. Unknown inputs score 0.
    pub base_scores: BTreeMap<String, Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct PlantedOracle {
    spec: PlantedSpec,
    /// Known inputs as word lists, longest first.
    inputs: Vec<(Vec<String>, Vec<f64>)>,
    planted: Vec<Vec<Vec<String>>>,
    word_class: BTreeMap<String, usize>,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

impl PlantedOracle {
    pub fn new(spec: PlantedSpec) -> Result<Self> {
        let n_classes = spec.classes.len();
        if n_classes < 2 {
            return Err(Error::InvalidSpec("need at least 2 classes".into()));
        }
        if !(spec.weight > 0.0 && spec.weight.is_finite()) {
            return Err(Error::InvalidSpec("weight must be positive and finite".into()));
        }
        if spec.classes.iter().all(|c| c.planted.is_empty()) {
            return Err(Error::InvalidSpec("no planted tokens".into()));
        }
        let mut word_class = BTreeMap::new();
        for (c, class) in spec.classes.iter().enumerate() {
            if class.label_words.is_empty() {
                return Err(Error::InvalidSpec(alloc::format!("class {c} has no label words")));
            }
            for w in &class.label_words {
                if word_class.insert(w.clone(), c).is_some() {
                    return Err(Error::InvalidSpec(alloc::format!("label word {w:?} repeated")));
                }
            }
            if class.planted.iter().any(|t| t.split_whitespace().next().is_none()) {
                return Err(Error::InvalidSpec("blank planted token".into()));
            }
        }
        let mut inputs = Vec::with_capacity(spec.base_scores.len());
        for (text, base) in &spec.base_scores {
            if base.len() != n_classes || base.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidSpec(alloc::format!("bad base scores for {text:?}")));
            }
            inputs.push((words(text), base.clone()));
        }
        inputs.sort_by_key(|e| core::cmp::Reverse(e.0.len()));
        let planted = spec.classes.iter().map(|c| c.planted.iter().map(|t| words(t)).collect()).collect();
        Ok(PlantedOracle { spec, inputs, planted, word_class })
    }

    pub fn spec(&self) -> &PlantedSpec {
        &self.spec
    }

    pub fn verbalizer(&self) -> Verbalizer {
        Verbalizer {
            label_words: self.spec.classes.iter().map(|c| c.label_words.clone()).collect(),
            template: String::from(DEFAULT_TEMPLATE),
        }
    }

    /// Splits a query into (base scores, prompt words).
    fn locate<'a>(&'a self, query: &'a [String]) -> (Option<&'a [f64]>, &'a [String]) {
        for (input, base) in &self.inputs {
            let len = input.len();
            if query.len() < len {
                continue;
            }
            let extra = query.len() - len;
            let mut splits: Vec<usize> = alloc::vec![0, len, len / 2];
            splits.extend(1..len);
            for m in splits {
                if query[..m] == input[..m] && query[m + extra..] == input[m..] {
                    return (Some(base), &query[m..m + extra]);
                }
            }
        }
        (None, query)
    }

    /// Distinct planted tokens of each class present in `prompt`.
    pub fn planted_counts(&self, prompt: &[String]) -> Vec<usize> {
        self.planted
            .iter()
            .map(|tokens| tokens.iter().filter(|t| contains_run(prompt, t)).count())
            .collect()
    }

    /// Class scores for a raw query text.
    pub fn class_scores(&self, text: &str) -> Vec<f64> {
        let query = words(text);
        let (base, prompt) = self.locate(&query);
        let counts = self.planted_counts(prompt);
        counts
            .iter()
            .enumerate()
            .map(|(c, &k)| base.map_or(0.0, |b| b[c]) + self.spec.weight * k as f64)
            .collect()
    }
}

impl Oracle for PlantedOracle {
    fn score(&self, inputs: &[String], candidates: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        if inputs.len() != candidates.len() {
            return Err(Error::invalid("inputs and candidates differ in length"));
        }
        inputs
            .iter()
            .zip(candidates)
            .map(|(text, words)| {
                let scores = self.class_scores(text);
                let lse = math::log_sum_exp(&scores);
                words
                    .iter()
                    .map(|w| {
                        let c = *self
                            .word_class
                            .get(w)
                            .ok_or_else(|| Error::invalid(alloc::format!("unknown candidate {w:?}")))?;
                        let share = self.spec.classes[c].label_words.len() as f64;
                        Ok(scores[c] - lse - math::ln(share))
                    })
                    .collect()
            })
            .collect()
    }
}

/// Knobs for [`PlantedTask::generate`]. The task is binary.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedTaskConfig {
    pub vocab_size: usize,
    /// Planted tokens for class 0 (helpful) and class 1 (distractors).
    pub planted_per_class: [usize; 2],
    pub examples_per_class: usize,
    pub weight: f64,
    /// True-class score advantage drawn uniformly from this range.
    pub margin_range: (f64, f64),
    /// Picks which vocabulary entries are planted.
    pub token_seed: u64,
    /// Draws inputs and margins.
    pub seed: u64,
    /// Prefix of every input text, so tasks can have disjoint inputs.
    pub tag: String,
    pub label_words: [String; 2],
}

impl Default for PlantedTaskConfig {
    fn default() -> Self {
        PlantedTaskConfig {
            vocab_size: 10,
            planted_per_class: [3, 1],
            examples_per_class: 100,
            weight: 1.5,
            margin_range: (0.5, 2.0),
            token_seed: 0,
            seed: 0,
            tag: String::from("review"),
            label_words: [String::from("great"), String::from("terrible")],
        }
    }
}

/// A generated binary task with a label bias that only the class-0 planted
/// tokens can cancel.
///
/// Inputs of class `y` get `margin` on class `y`; class 1 additionally gets
/// `weight · planted_per_class[0]`. With every class-0 planted token in the
/// prompt (and no distractor) the bias vanishes exactly.
#[derive(Clone, Debug)]
pub struct PlantedTask {
    pub spec: PlantedSpec,
    pub vocab: Vec<String>,
    pub examples: Vec<Example>,
}

impl PlantedTask {
    pub fn generate(cfg: &PlantedTaskConfig) -> Result<Self> {
        let planted_total = cfg.planted_per_class[0] + cfg.planted_per_class[1];
        if cfg.vocab_size < 2 || planted_total > cfg.vocab_size || cfg.planted_per_class[0] == 0 {
            return Err(Error::InvalidSpec("vocabulary too small for the planted tokens".into()));
        }
        let (lo, hi) = cfg.margin_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidSpec("bad margin range".into()));
        }
        let vocab: Vec<String> = (0..cfg.vocab_size).map(|j| alloc::format!("tok{j:03}")).collect();
        let mut order: Vec<usize> = (0..cfg.vocab_size).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.token_seed));
        let pick = |range: core::ops::Range<usize>| -> Vec<String> {
            let mut t: Vec<String> = order[range].iter().map(|&j| vocab[j].clone()).collect();
            t.sort();
            t
        };
        let helpful = pick(0..cfg.planted_per_class[0]);
        let distract = pick(cfg.planted_per_class[0]..planted_total);

        let bias = cfg.weight * cfg.planted_per_class[0] as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut base_scores = BTreeMap::new();
        let mut examples = Vec::with_capacity(2 * cfg.examples_per_class);
        for i in 0..cfg.examples_per_class {
            for label in 0..2 {
                let text = alloc::format!("{} item {} {}", cfg.tag, 2 * i + label, if label == 0 { "p" } else { "q" });
                let margin = lo + (hi - lo) * rng.random::<f64>();
                let mut base = alloc::vec![0.0, bias];
                base[label] += margin;
                base_scores.insert(text.clone(), base);
                examples.push(Example::new(label, text));
            }
        }
        let spec = PlantedSpec {
            classes: alloc::vec![
                PlantedClass { label_words: alloc::vec![cfg.label_words[0].clone()], planted: helpful },
                PlantedClass { label_words: alloc::vec![cfg.label_words[1].clone()], planted: distract },
            ],
            weight: cfg.weight,
            base_scores,
        };
        Ok(PlantedTask { spec, vocab, examples })
    }

    pub fn oracle(&self) -> Result<PlantedOracle> {
        PlantedOracle::new(self.spec.clone())
    }
}
