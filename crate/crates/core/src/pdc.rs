//! Play-log driven categorization: reliability-threshold training subsets, a
//! cross-validation-weighted ensemble, and three-way preference decisions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::content::FeatureVector;
use crate::error::{Error, Result};
use crate::gpe::AnnotatorReliability;
use crate::icq::ErrorRates;
use crate::learners::{check_dim, cross_validate, Classifier, Dataset, RandomForest, Trainer};
use crate::rng::derive_seed;

pub const DEFAULT_THRESHOLD_GRID: [f64; 4] = [0.0, 0.3, 0.6, 0.9];
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.61;
pub const DEFAULT_REJECTION_THRESHOLD: f64 = 0.25;

/// One beta play: play-log, the played game's features, and the feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdcExample {
    pub playlog: Vec<f64>,
    pub features: FeatureVector,
    pub target: u8,
    pub player: usize,
}

/// Play-log followed by a one-hot block per feature.
pub fn encode_input(playlog: &[f64], features: &FeatureVector, category_sizes: &[usize]) -> Result<Vec<f64>> {
    if features.values().len() != category_sizes.len() {
        return Err(Error::DimensionMismatch {
            expected: category_sizes.len(),
            found: features.values().len(),
        });
    }
    let mut x = playlog.to_vec();
    for (f, &size) in category_sizes.iter().enumerate() {
        let c = features.get(f).filter(|&c| c < size).ok_or_else(|| Error::ValueOutOfRange {
            dim: format!("feature {f}"),
            value: features.values()[f] as u32,
            cardinality: size as u32,
        })?;
        x.extend((0..size).map(|k| f64::from(u8::from(k == c))));
    }
    Ok(x)
}

/// Examples whose player satisfies `alpha >= t_alpha` and `beta >= t_beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSubset {
    pub t_alpha: f64,
    pub t_beta: f64,
    pub rows: Vec<usize>,
}

impl ThresholdSubset {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter(format!("{name} threshold grid is empty")));
    }
    if grid.iter().any(|t| !(0.0..=1.0).contains(t)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidParameter(format!(
            "{name} thresholds must be ascending in [0, 1]: {grid:?}"
        )));
    }
    Ok(())
}

/// One subset per `(t_alpha, t_beta)` pair, alpha-major.
pub fn build_threshold_subsets(
    data: &[PdcExample],
    reliability: &AnnotatorReliability,
    alpha_thresholds: &[f64],
    beta_thresholds: &[f64],
) -> Result<Vec<ThresholdSubset>> {
    check_grid("alpha", alpha_thresholds)?;
    check_grid("beta", beta_thresholds)?;
    if let Some(e) = data.iter().find(|e| e.player >= reliability.len()) {
        return Err(Error::InvalidParameter(format!("no reliability for player {}", e.player)));
    }
    let mut out = Vec::with_capacity(alpha_thresholds.len() * beta_thresholds.len());
    for &ta in alpha_thresholds {
        for &tb in beta_thresholds {
            let rows = (0..data.len())
                .filter(|&i| {
                    let p = data[i].player;
                    reliability.alpha[p] >= ta && reliability.beta[p] >= tb
                })
                .collect();
            out.push(ThresholdSubset {
                t_alpha: ta,
                t_beta: tb,
                rows,
            });
        }
    }
    Ok(out)
}

/// Softmax of `u`, shifted by its maximum.
pub fn softmax(u: &[f64]) -> Vec<f64> {
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Positive,
    Negative,
    Rejected,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Positive => "positive",
            Decision::Negative => "negative",
            Decision::Rejected => "rejected",
        }
    }
}

/// Three-way decision on score `s`. Rejection is checked first: the band is
/// `|s - theta_c| < theta_r / 2`.
pub fn decide(s: f64, theta_c: f64, theta_r: f64) -> Decision {
    if (s - theta_c).abs() < 0.5 * theta_r {
        Decision::Rejected
    } else if s >= theta_c {
        Decision::Positive
    } else {
        Decision::Negative
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceEnsemble<M = RandomForest> {
    /// `None` marks a neutral member (empty or degenerate subset) that
    /// always scores 0.5.
    pub members: Vec<Option<M>>,
    pub accuracies: Vec<f64>,
    pub weights: Vec<f64>,
    pub thresholds: Vec<(f64, f64)>,
    pub theta_c: f64,
    pub theta_r: f64,
    pub playlog_width: usize,
    pub category_sizes: Vec<usize>,
}

impl Artifact for PreferenceEnsemble<RandomForest> {
    const KIND: ArtifactKind = ArtifactKind::Ensemble;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub decision: Decision,
    pub score: f64,
}

impl<M: Classifier> PreferenceEnsemble<M> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Per-member scores on an encoded input.
    pub fn member_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.playlog_width + self.category_sizes.iter().sum::<usize>(), x)?;
        self.members
            .iter()
            .map(|m| m.as_ref().map_or(Ok(0.5), |m| m.positive_score(x)))
            .collect()
    }

    pub fn score(&self, playlog: &[f64], features: &FeatureVector) -> Result<f64> {
        check_dim(self.playlog_width, playlog)?;
        let x = encode_input(playlog, features, &self.category_sizes)?;
        let s: f64 = self
            .member_scores(&x)?
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| s * w)
            .sum();
        Ok(s.clamp(0.0, 1.0))
    }

    pub fn with_thresholds(mut self, theta_c: f64, theta_r: f64) -> Self {
        self.theta_c = theta_c;
        self.theta_r = theta_r;
        self
    }
}

/// Decision and score for one play.
pub fn predict_preference<M: Classifier>(
    ensemble: &PreferenceEnsemble<M>,
    playlog: &[f64],
    features: &FeatureVector,
) -> Result<Prediction> {
    let score = ensemble.score(playlog, features)?;
    Ok(Prediction {
        decision: decide(score, ensemble.theta_c, ensemble.theta_r),
        score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub folds: usize,
    pub theta_c: f64,
    pub theta_r: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            theta_c: DEFAULT_CONFIDENCE_THRESHOLD,
            theta_r: DEFAULT_REJECTION_THRESHOLD,
        }
    }
}

/// Cross-validate and train one member per subset; weights are the softmax
/// of the cross-validation accuracies. Subsets that are empty, single-class
/// or too small to fold become neutral members with accuracy 0.
pub fn train_ensemble<T>(
    data: &[PdcExample],
    subsets: &[ThresholdSubset],
    category_sizes: &[usize],
    trainer: &T,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<PreferenceEnsemble<T::Model>>
where
    T: Trainer + Sync,
    T::Model: Send,
{
    if subsets.is_empty() {
        return Err(Error::InvalidParameter("no training subsets".into()));
    }
    let playlog_width = data.first().map_or(0, |e| e.playlog.len());
    let inputs = data
        .iter()
        .map(|e| {
            check_dim(playlog_width, &e.playlog)?;
            encode_input(&e.playlog, &e.features, category_sizes)
        })
        .collect::<Result<Vec<_>>>()?;
    let trained: Vec<(Option<T::Model>, f64)> = subsets
        .par_iter()
        .enumerate()
        .map(|(m, sub)| {
            let x = sub.rows.iter().map(|&i| inputs[i].clone()).collect();
            let y = sub.rows.iter().map(|&i| data[i].target).collect();
            let d = Dataset::classification(x, y)?;
            let (neg, pos) = d.class_counts();
            if neg == 0 || pos == 0 || d.len() < config.folds {
                return Ok((None, 0.0));
            }
            let mseed = derive_seed(seed, m as u64);
            let u = cross_validate(&d, config.folds, trainer, mseed)?;
            let model = trainer.fit(&d, derive_seed(mseed, u64::MAX))?;
            Ok((Some(model), u))
        })
        .collect::<Result<Vec<_>>>()?;
    if trained.iter().all(|(m, _)| m.is_none()) {
        return Err(Error::NoTrainableData(
            "every reliability subset is empty or single-class".into(),
        ));
    }
    let (members, accuracies): (Vec<_>, Vec<_>) = trained.into_iter().unzip();
    let weights = softmax(&accuracies);
    Ok(PreferenceEnsemble {
        members,
        accuracies,
        weights,
        thresholds: subsets.iter().map(|s| (s.t_alpha, s.t_beta)).collect(),
        theta_c: config.theta_c,
        theta_r: config.theta_r,
        playlog_width,
        category_sizes: category_sizes.to_vec(),
    })
}

/// Error rates on retained examples at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta_c: f64,
    pub theta_r: f64,
    pub pos_error: f64,
    pub neg_error: f64,
    pub hter: f64,
    pub reject_rate: f64,
}

/// Evaluate every `(theta_c, theta_r)` pair on labeled examples. Rows whose
/// retained set lacks a class are skipped.
pub fn threshold_sweep<M: Classifier>(
    ensemble: &PreferenceEnsemble<M>,
    examples: &[PdcExample],
    theta_cs: &[f64],
    theta_rs: &[f64],
) -> Result<Vec<SweepRow>> {
    let scores = examples
        .iter()
        .map(|e| ensemble.score(&e.playlog, &e.features))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &tc in theta_cs {
        for &tr in theta_rs {
            let mut pairs = Vec::new();
            let mut rejected = 0usize;
            for (e, &s) in examples.iter().zip(&scores) {
                match decide(s, tc, tr) {
                    Decision::Rejected => rejected += 1,
                    Decision::Positive => pairs.push((e.target, 1)),
                    Decision::Negative => pairs.push((e.target, 0)),
                }
            }
            if let Ok(r) = ErrorRates::from_pairs(pairs) {
                rows.push(SweepRow {
                    theta_c: tc,
                    theta_r: tr,
                    pos_error: r.pos_error,
                    neg_error: r.neg_error,
                    hter: r.hter,
                    reject_rate: rejected as f64 / examples.len().max(1) as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theta_c", "theta_r", "pos_error", "neg_error", "hter", "reject_rate"])?;
    for r in rows {
        w.write_record([
            r.theta_c.to_string(),
            r.theta_r.to_string(),
            r.pos_error.to_string(),
            r.neg_error.to_string(),
            r.hter.to_string(),
            r.reject_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ForestConfig, MajorityTrainer};
    use proptest::prelude::*;

    fn examples(n: usize) -> Vec<PdcExample> {
        (0..n)
            .map(|i| PdcExample {
                playlog: vec![i as f64 / n as f64],
                features: FeatureVector::single(i % 2),
                target: u8::from(i * 2 >= n),
                player: i % 4,
            })
            .collect()
    }

    fn rel() -> AnnotatorReliability {
        AnnotatorReliability {
            alpha: vec![0.95, 0.7, 0.4, 0.1],
            beta: vec![0.95, 0.2, 0.65, 0.9],
        }
    }

    #[test]
    fn softmax_example_and_symmetry() {
        let w = softmax(&[0.8, 0.6]);
        assert!((w[0] - 0.5498).abs() < 1e-4 && (w[1] - 0.4502).abs() < 1e-4);
        assert_eq!(softmax(&[0.3; 4]), vec![0.25; 4]);
        assert_eq!(softmax(&[0.7]), vec![1.0]);
    }

    #[test]
    fn grid_sizes() {
        let d = examples(40);
        let s = build_threshold_subsets(&d, &rel(), &DEFAULT_THRESHOLD_GRID, &DEFAULT_THRESHOLD_GRID).unwrap();
        assert_eq!(s.len(), 16);
        let one = build_threshold_subsets(&d, &rel(), &[0.0], &[0.0]).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].rows, (0..40).collect::<Vec<_>>());
        assert!(build_threshold_subsets(&d, &rel(), &[0.5, 0.2], &[0.0]).is_err());
    }

    #[test]
    fn decisions() {
        assert_eq!(decide(0.7, 0.61, 0.0), Decision::Positive);
        assert_eq!(decide(0.61, 0.61, 0.0), Decision::Positive);
        assert_eq!(decide(0.5, 0.61, 0.0), Decision::Negative);
        assert_eq!(decide(0.7, 0.61, 0.25), Decision::Rejected);
        assert_eq!(decide(0.75, 0.61, 0.25), Decision::Positive);
        assert_eq!(decide(0.2, 0.61, 1.0), Decision::Rejected);
    }

    #[test]
    fn single_member_is_its_member() {
        let d = examples(40);
        let subs = build_threshold_subsets(&d, &rel(), &[0.0], &[0.0]).unwrap();
        let cfg = ForestConfig { trees: 15, ..Default::default() };
        let e = train_ensemble(&d, &subs, &[2], &cfg, &EnsembleConfig::default(), 3).unwrap();
        assert_eq!(e.weights, vec![1.0]);
        let member = e.members[0].as_ref().unwrap();
        for ex in &d {
            let x = encode_input(&ex.playlog, &ex.features, &[2]).unwrap();
            assert_eq!(e.score(&ex.playlog, &ex.features).unwrap(), member.positive_score(&x).unwrap());
        }
    }

    #[test]
    fn empty_subsets_become_neutral_and_all_degenerate_fails() {
        let d = examples(40);
        let subs = build_threshold_subsets(&d, &rel(), &[0.0, 0.99], &[0.0]).unwrap();
        assert!(subs[1].is_empty());
        let e = train_ensemble(&d, &subs, &[2], &MajorityTrainer, &EnsembleConfig::default(), 0).unwrap();
        assert!(e.members[1].is_none());
        assert_eq!(e.accuracies[1], 0.0);
        let subs = build_threshold_subsets(&d, &rel(), &[0.99], &[0.99]).unwrap();
        assert!(matches!(
            train_ensemble(&d, &subs, &[2], &MajorityTrainer, &EnsembleConfig::default(), 0),
            Err(Error::NoTrainableData(_))
        ));
    }

    #[test]
    fn wrong_playlog_width() {
        let d = examples(40);
        let subs = build_threshold_subsets(&d, &rel(), &[0.0], &[0.0]).unwrap();
        let e = train_ensemble(&d, &subs, &[2], &MajorityTrainer, &EnsembleConfig::default(), 0).unwrap();
        assert!(predict_preference(&e, &[0.1, 0.2], &FeatureVector::single(0)).is_err());
        assert!(predict_preference(&e, &[0.1], &FeatureVector::single(7)).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(u in proptest::collection::vec(0.0f64..1.0, 1..20), c in -5.0f64..5.0) {
            let w = softmax(&u);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
            for (a, b) in w.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn subsets_nest(al in proptest::collection::vec(0.0f64..1.0, 4), be in proptest::collection::vec(0.0f64..1.0, 4)) {
            let r = AnnotatorReliability { alpha: al, beta: be };
            let d = examples(24);
            let s = build_threshold_subsets(&d, &r, &DEFAULT_THRESHOLD_GRID, &DEFAULT_THRESHOLD_GRID).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    for i2 in i..4 {
                        for j2 in j..4 {
                            let big = &s[i * 4 + j].rows;
                            prop_assert!(s[i2 * 4 + j2].rows.iter().all(|r| big.contains(r)));
                        }
                    }
                }
            }
        }
    }
}
