//! Classification metrics over (prediction, label) pairs.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Metric {
    #[default]
    Accuracy,
    MacroF1,
    /// F1 of class 1 as the positive class.
    BinaryF1,
    /// Matthews correlation (multiclass generalization for more than 2 classes).
    Matthews,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "acc" | "accuracy" => Ok(Metric::Accuracy),
            "macro-f1" | "macro_f1" => Ok(Metric::MacroF1),
            "f1" | "binary-f1" | "binary_f1" => Ok(Metric::BinaryF1),
            "mcc" | "matthews" => Ok(Metric::Matthews),
            other => Err(Error::invalid(alloc::format!("unknown metric {other:?}"))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::BinaryF1 => "binary_f1",
            Metric::Matthews => "matthews",
        })
    }
}

/// `counts[truth][predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix { counts: alloc::vec![alloc::vec![0; num_classes]; num_classes] }
    }

    pub fn from_pairs(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut m = Self::new(num_classes);
        for (pred, truth) in pairs {
            m.add(pred, truth)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, predicted: usize, truth: usize) -> Result<()> {
        let k = self.counts.len();
        if predicted >= k || truth >= k {
            return Err(Error::invalid("class index out of range"));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    fn col(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    fn row(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum::<u64>() as f64 / total as f64
    }

    /// `2TP / (2TP + FP + FN)`, 0 when the class never occurs or is predicted.
    pub fn f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class];
        let fp = self.col(class) - tp;
        let fn_ = self.row(class) - tp;
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    pub fn macro_f1(&self) -> f64 {
        let k = self.counts.len();
        (0..k).map(|c| self.f1(c)).sum::<f64>() / k as f64
    }

    /// Gorodkin's R_K; equals the binary MCC for two classes. 0 when undefined.
    pub fn matthews(&self) -> f64 {
        let k = self.counts.len();
        let s = self.total() as f64;
        let c: f64 = (0..k).map(|i| self.counts[i][i]).sum::<u64>() as f64;
        let (mut pt, mut pp, mut tt) = (0.0, 0.0, 0.0);
        for j in 0..k {
            let p = self.col(j) as f64;
            let t = self.row(j) as f64;
            pt += p * t;
            pp += p * p;
            tt += t * t;
        }
        let denom = math::sqrt((s * s - pp) * (s * s - tt));
        if denom == 0.0 {
            0.0
        } else {
            (c * s - pt) / denom
        }
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Accuracy => self.accuracy(),
            Metric::MacroF1 => self.macro_f1(),
            Metric::BinaryF1 => self.f1(1.min(self.counts.len() - 1)),
            Metric::Matthews => self.matthews(),
        }
    }
}
