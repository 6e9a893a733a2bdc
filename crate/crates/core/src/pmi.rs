//! Candidate vocabulary construction by PMI segmentation.
//!
//! Adjacent words whose pointwise mutual information falls below a
//! threshold `σ` are separated by a delimiter. Every contiguous span (up to
//! `max_ngram_len` words) inside the resulting segments is counted, and the
//! spans seen at least `min_freq` times become prompt candidates.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Splits raw text into words.
pub trait Tokenizer {
    fn tokenize(&self, text: &str) -> Vec<String>;
}

/// Whitespace split, lowercasing, ASCII punctuation removed.
#[derive(Clone, Copy, Debug, Default)]
pub struct SimpleTokenizer;

impl Tokenizer for SimpleTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .map(|w| {
                w.chars()
                    .filter(|c| !c.is_ascii_punctuation())
                    .flat_map(char::to_lowercase)
                    .collect::<String>()
            })
            .filter(|w| !w.is_empty())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PmiConfig {
    pub sigma: f64,
    pub min_freq: u64,
    pub max_vocab: usize,
    pub max_ngram_len: usize,
}

impl Default for PmiConfig {
    fn default() -> Self {
        PmiConfig { sigma: 0.0, min_freq: 2, max_vocab: 100, max_ngram_len: 3 }
    }
}

impl PmiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigma.is_nan() {
            return Err(Error::Config("sigma must not be NaN".into()));
        }
        if self.min_freq < 1 || self.max_vocab < 2 || self.max_ngram_len < 1 {
            return Err(Error::Config(
                "need min_freq >= 1, max_vocab >= 2 and max_ngram_len >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Ordered, duplicate-free list of candidate prompt tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateVocabulary {
    entries: Vec<String>,
    frequencies: Vec<u64>,
}

impl CandidateVocabulary {
    pub fn new(entries: Vec<String>, frequencies: Vec<u64>) -> Result<Self> {
        if entries.len() != frequencies.len() {
            return Err(Error::invalid("entries and frequencies differ in length"));
        }
        if entries.len() < 2 {
            return Err(Error::invalid("vocabulary needs at least 2 entries"));
        }
        let mut seen = alloc::collections::BTreeSet::new();
        for e in &entries {
            if e.trim().is_empty() {
                return Err(Error::invalid("empty vocabulary entry"));
            }
            if !seen.insert(e.as_str()) {
                return Err(Error::invalid(alloc::format!("duplicate vocabulary entry {e:?}")));
            }
        }
        Ok(CandidateVocabulary { entries, frequencies })
    }

    /// Entries without corpus statistics (frequency recorded as 0).
    pub fn from_entries(entries: Vec<String>) -> Result<Self> {
        let freq = alloc::vec![0; entries.len()];
        Self::new(entries, freq)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn frequencies(&self) -> &[u64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the first `size` entries.
    pub fn truncated(&self, size: usize) -> Result<Self> {
        let size = size.min(self.len());
        Self::new(self.entries[..size].to_vec(), self.frequencies[..size].to_vec())
    }
}

/// `ln(p_joint / (p_left · p_right))`.
pub fn pmi(p_joint: f64, p_left: f64, p_right: f64) -> Result<f64> {
    for p in [p_joint, p_left, p_right] {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::invalid(alloc::format!("probability {p} outside (0, 1]")));
        }
    }
    Ok(math::ln(p_joint) - math::ln(p_left) - math::ln(p_right))
}

/// Unigram and adjacent-pair counts of a tokenized corpus.
#[derive(Clone, Debug, Default)]
pub struct CorpusStats {
    unigrams: BTreeMap<String, u64>,
    pairs: BTreeMap<(String, String), u64>,
    total_tokens: u64,
    total_pairs: u64,
}

impl CorpusStats {
    pub fn from_corpus<S: AsRef<[String]>>(corpus: &[S]) -> Self {
        let mut stats = CorpusStats::default();
        for sentence in corpus {
            stats.add_sentence(sentence.as_ref());
        }
        stats
    }

    pub fn add_sentence(&mut self, sentence: &[String]) {
        for w in sentence {
            *self.unigrams.entry(w.clone()).or_default() += 1;
            self.total_tokens += 1;
        }
        for pair in sentence.windows(2) {
            *self.pairs.entry((pair[0].clone(), pair[1].clone())).or_default() += 1;
            self.total_pairs += 1;
        }
    }

    /// Merges counts from another shard.
    pub fn merge(&mut self, other: CorpusStats) {
        for (k, v) in other.unigrams {
            *self.unigrams.entry(k).or_default() += v;
        }
        for (k, v) in other.pairs {
            *self.pairs.entry(k).or_default() += v;
        }
        self.total_tokens += other.total_tokens;
        self.total_pairs += other.total_pairs;
    }

    pub fn unigram_count(&self, w: &str) -> u64 {
        self.unigrams.get(w).copied().unwrap_or(0)
    }

    pub fn pair_count(&self, left: &str, right: &str) -> u64 {
        // BTreeMap<(String, String)> cannot be queried with borrowed tuples.
        self.pairs.get(&(String::from(left), String::from(right))).copied().unwrap_or(0)
    }

    /// Maximum-likelihood unigram probability; unseen words count as one
    /// occurrence out of `total + 1`.
    pub fn unigram_prob(&self, w: &str) -> f64 {
        match self.unigram_count(w) {
            0 => 1.0 / (self.total_tokens + 1) as f64,
            c => c as f64 / self.total_tokens as f64,
        }
    }

    /// Maximum-likelihood adjacent-pair probability with the same add-one
    /// treatment for unseen pairs.
    pub fn pair_prob(&self, left: &str, right: &str) -> f64 {
        match self.pair_count(left, right) {
            0 => 1.0 / (self.total_pairs + 1) as f64,
            c => c as f64 / self.total_pairs as f64,
        }
    }

    pub fn pair_pmi(&self, left: &str, right: &str) -> f64 {
        math::ln(self.pair_prob(left, right))
            - math::ln(self.unigram_prob(left))
            - math::ln(self.unigram_prob(right))
    }
}

/// Splits `sentence` wherever `score(left, right) < sigma`.
pub fn segment_by<F>(sentence: &[String], sigma: f64, mut score: F) -> Vec<&[String]>
where
    F: FnMut(&str, &str) -> f64,
{
    let mut out = Vec::new();
    if sentence.is_empty() {
        return out;
    }
    let mut start = 0;
    for i in 1..sentence.len() {
        if score(&sentence[i - 1], &sentence[i]) < sigma {
            out.push(&sentence[start..i]);
            start = i;
        }
    }
    out.push(&sentence[start..]);
    out
}

pub fn segment<'a>(sentence: &'a [String], stats: &CorpusStats, sigma: f64) -> Vec<&'a [String]> {
    segment_by(sentence, sigma, |a, b| stats.pair_pmi(a, b))
}

/// Counts every contiguous span of up to `max_len` words inside each segment.
pub fn count_spans<'a, I>(segments: I, max_len: usize) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut counts = BTreeMap::new();
    for seg in segments {
        for start in 0..seg.len() {
            for end in start + 1..=(start + max_len).min(seg.len()) {
                *counts.entry(seg[start..end].join(" ")).or_default() += 1;
            }
        }
    }
    counts
}

/// Segments the corpus, keeps spans with frequency `>= min_freq`, ranks by
/// frequency (descending, then lexicographic) and truncates to `max_vocab`.
pub fn build_vocab<S: AsRef<[String]>>(corpus: &[S], config: &PmiConfig) -> Result<CandidateVocabulary> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    let stats = CorpusStats::from_corpus(corpus);
    let segments = corpus.iter().flat_map(|s| segment(s.as_ref(), &stats, config.sigma));
    let counts = count_spans(segments, config.max_ngram_len);

    let mut kept: Vec<(String, u64)> =
        counts.into_iter().filter(|(_, c)| *c >= config.min_freq).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps it for ties.
    kept.sort_by_key(|e| core::cmp::Reverse(e.1));
    kept.truncate(config.max_vocab);
    if kept.len() < 2 {
        return Err(Error::Config(alloc::format!(
            "only {} candidate(s) survive sigma = {} and min_freq = {}; lower sigma or min_freq",
            kept.len(),
            config.sigma,
            config.min_freq
        )));
    }
    let (entries, frequencies) = kept.into_iter().unzip();
    CandidateVocabulary::new(entries, frequencies)
}
