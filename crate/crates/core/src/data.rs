//! Labelled examples and the k-shot train/dev split.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::oracle::Verbalizer;

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Example {
    pub label: usize,
    pub text_a: String,
    pub text_b: Option<String>,
}

impl Example {
    pub fn new(label: usize, text_a: impl Into<String>) -> Self {
        Example { label, text_a: text_a.into(), text_b: None }
    }

    pub fn pair(label: usize, text_a: impl Into<String>, text_b: impl Into<String>) -> Self {
        Example { label, text_a: text_a.into(), text_b: Some(text_b.into()) }
    }

    pub fn render(&self, verbalizer: &Verbalizer) -> String {
        verbalizer.render(&self.text_a, self.text_b.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotSplit {
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    /// Everything not drawn into train or dev.
    pub test: Vec<Example>,
    /// Classes with fewer than `2k` examples; they contributed all they had.
    pub short_classes: Vec<usize>,
}

/// Draws `k` training and `k` different development examples per class.
///
/// Classes are `0..=max_label`; each is shuffled with a generator seeded by
/// `seed`, then the first `k` go to train and the next `k` to dev.
pub fn make_few_shot_split(examples: &[Example], k: usize, seed: u64) -> Result<FewShotSplit> {
    if k < 1 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let Some(max_label) = examples.iter().map(|e| e.label).max() else {
        return Err(Error::InvalidDataset("dataset is empty".into()));
    };
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); max_label + 1];
    for (i, e) in examples.iter().enumerate() {
        by_class[e.label].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidDataset(alloc::format!("class {empty} has no examples")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = FewShotSplit { train: Vec::new(), dev: Vec::new(), test: Vec::new(), short_classes: Vec::new() };
    let mut used = alloc::vec![false; examples.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        if members.len() < 2 * k {
            split.short_classes.push(class);
        }
        let n_train = k.min(members.len());
        let n_dev = k.min(members.len() - n_train);
        for &i in &members[..n_train] {
            split.train.push(examples[i].clone());
            used[i] = true;
        }
        for &i in &members[n_train..n_train + n_dev] {
            split.dev.push(examples[i].clone());
            used[i] = true;
        }
    }
    split.test = examples.iter().zip(&used).filter(|(_, u)| !**u).map(|(e, _)| e.clone()).collect();
    Ok(split)
}
