//! Reference learners: a confidence-scored binary classifier contract with a
//! from-scratch random forest, a bounded RBF kernel ridge regressor, and
//! stratified cross-validation.

mod cv;
mod forest;
mod krr;

pub use cv::{cross_validate, stratified_folds};
pub use forest::{ForestConfig, RandomForest};
pub use krr::{rbf_kernel, KrrConfig, TrainedRegressor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Targets in `{0, 1}`.
    Classification,
    /// Targets in `[0, 1]`.
    Regression,
}

/// Rows of `(input, target)` sharing one input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    task: Task,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
}

impl Dataset {
    pub fn new(task: Task, inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidParameter(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let width = first.len();
            if let Some(bad) = inputs.iter().find(|x| x.len() != width) {
                return Err(Error::DimensionMismatch {
                    expected: width,
                    found: bad.len(),
                });
            }
        }
        for &t in &targets {
            let ok = match task {
                Task::Classification => t == 0.0 || t == 1.0,
                Task::Regression => (0.0..=1.0).contains(&t),
            };
            if !ok {
                return Err(Error::InvalidParameter(format!(
                    "target {t} invalid for {task:?}"
                )));
            }
        }
        Ok(Self {
            task,
            inputs,
            targets,
        })
    }

    pub fn classification(inputs: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        Self::new(
            Task::Classification,
            inputs,
            labels.into_iter().map(f64::from).collect(),
        )
    }

    pub fn regression(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::new(Task::Regression, inputs, targets)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn label(&self, i: usize) -> u8 {
        u8::from(self.targets[i] >= 0.5)
    }

    /// `(negatives, positives)` for classification data.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.targets.iter().filter(|&&t| t >= 0.5).count();
        (self.len() - pos, pos)
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            task: self.task,
            inputs: rows.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// FNV-1a over the bit patterns of every input and target.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (x, &t) in self.inputs.iter().zip(&self.targets) {
            for &v in x {
                eat(v.to_bits());
            }
            eat(t.to_bits());
        }
        h
    }
}

/// A trained binary classifier that scores its confidence.
pub trait Classifier {
    fn input_dim(&self) -> usize;

    /// Fraction of evidence for class 1, in `[0, 1]`.
    fn positive_score(&self, x: &[f64]) -> Result<f64>;

    /// `(label, confidence)` with confidence in `[0.5, 1]`.
    fn predict(&self, x: &[f64]) -> Result<(u8, f64)> {
        let s = self.positive_score(x)?;
        Ok(if s >= 0.5 { (1, s) } else { (0, 1.0 - s) })
    }
}

/// Something that turns a dataset and a seed into a classifier.
pub trait Trainer {
    type Model: Classifier;

    fn fit(&self, data: &Dataset, seed: u64) -> Result<Self::Model>;
}

/// Constant predictor of the majority training label (ties go to 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    pub label: u8,
    pub width: usize,
}

impl MajorityVote {
    pub fn fit(data: &Dataset) -> Self {
        let (neg, pos) = data.class_counts();
        Self {
            label: u8::from(pos >= neg),
            width: data.width(),
        }
    }
}

impl Classifier for MajorityVote {
    fn input_dim(&self) -> usize {
        self.width
    }

    fn positive_score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.width, x)?;
        Ok(f64::from(self.label))
    }
}

/// Trainer for [`MajorityVote`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MajorityTrainer;

impl Trainer for MajorityTrainer {
    type Model = MajorityVote;

    fn fit(&self, data: &Dataset, _seed: u64) -> Result<MajorityVote> {
        if data.is_empty() {
            return Err(Error::DegenerateData("empty dataset".into()));
        }
        Ok(MajorityVote::fit(data))
    }
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: x.len(),
        });
    }
    Ok(())
}
