//! Initial content quality: uncertainty-sampling active learning of the
//! acceptability classifier, and the filter that carves out the acceptable
//! subspace.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::clustering::{representative_per_cluster, ClusterPartition};
use crate::content::{ContentSchema, ContentSubspace, ContentVector, LabeledGame, SubspaceTag};
use crate::error::{Error, Result};
use crate::learners::{Classifier, Dataset, Trainer};
use crate::rng::{derive_seed, derived_rng};

/// Developer annotations, one per game, shared by every learning phase.
///
/// A single oracle call labels both acceptability and content features, so a
/// game annotated during ICQ is never sent to the developer again.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStore {
    #[serde(with = "labels_as_list")]
    labels: BTreeMap<ContentVector, LabeledGame>,
    oracle_calls: usize,
}

impl Artifact for AnnotationStore {
    const KIND: ArtifactKind = ArtifactKind::Annotations;
}

impl AnnotationStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Look up `g`, calling `oracle` only on a miss. Returns the label and
    /// whether the oracle was called.
    pub fn annotate<F>(&mut self, g: &ContentVector, oracle: &mut F) -> (LabeledGame, bool)
    where
        F: FnMut(&ContentVector) -> LabeledGame + ?Sized,
    {
        if let Some(l) = self.labels.get(g) {
            return (l.clone(), false);
        }
        let l = oracle(g);
        self.oracle_calls += 1;
        self.labels.insert(g.clone(), l.clone());
        (l, true)
    }

    pub fn get(&self, g: &ContentVector) -> Option<&LabeledGame> {
        self.labels.get(g)
    }

    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabeledGame> {
        self.labels.values()
    }
}

/// JSON keys must be strings, so the store is written as its label list.
mod labels_as_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::content::{ContentVector, LabeledGame};

    pub fn serialize<S: Serializer>(m: &BTreeMap<ContentVector, LabeledGame>, s: S) -> Result<S::Ok, S::Error> {
        m.values().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<ContentVector, LabeledGame>, D::Error> {
        let v = Vec::<LabeledGame>::deserialize(d)?;
        Ok(v.into_iter().map(|l| (l.game.clone(), l)).collect())
    }
}

/// A type-erased developer oracle.
pub type Oracle<'a> = dyn FnMut(&ContentVector) -> LabeledGame + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ValidationRole {
    Icq,
    Cc,
}

/// Held-out developer-labeled games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSet {
    pub role: ValidationRole,
    pub schema: ContentSchema,
    games: Vec<LabeledGame>,
}

impl Artifact for ValidationSet {
    const KIND: ArtifactKind = ArtifactKind::Validation;
}

impl ValidationSet {
    pub fn new(role: ValidationRole, schema: ContentSchema, games: Vec<LabeledGame>) -> Result<Self> {
        if games.is_empty() {
            return Err(Error::DegenerateValidation("validation set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for l in &games {
            schema.validate(&l.game)?;
            if !seen.insert(&l.game) {
                return Err(Error::InvalidParameter(format!(
                    "game {} appears twice in the validation set",
                    l.game
                )));
            }
            if role == ValidationRole::Cc && l.features().is_none() {
                return Err(Error::InvalidParameter(format!(
                    "categorization validation game {} has no feature labels",
                    l.game
                )));
            }
        }
        Ok(Self { role, schema, games })
    }

    /// Annotate every cluster's medoid plus `extra` uniformly drawn pool
    /// points, giving at least one game per cluster.
    pub fn for_icq(
        partition: &ClusterPartition,
        extra: usize,
        store: &mut AnnotationStore,
        oracle: &mut Oracle<'_>,
        seed: u64,
    ) -> Result<Self> {
        let mut games: Vec<ContentVector> = representative_per_cluster(partition);
        let mut seen: BTreeSet<ContentVector> = games.iter().cloned().collect();
        let mut rng = derived_rng(seed, 0);
        let mut order: Vec<usize> = (0..partition.points().len()).collect();
        order.shuffle(&mut rng);
        for i in order {
            if seen.len() >= partition.k() + extra {
                break;
            }
            let g = &partition.points()[i];
            if seen.insert(g.clone()) {
                games.push(g.clone());
            }
        }
        let labels = games.iter().map(|g| store.annotate(g, oracle).0).collect();
        Self::new(ValidationRole::Icq, partition.schema.clone(), labels)
    }

    pub fn games(&self) -> &[LabeledGame] {
        &self.games
    }

    pub fn len(&self) -> usize {
        self.games.len()
    }

    pub fn is_empty(&self) -> bool {
        self.games.is_empty()
    }

    pub fn contains(&self, g: &ContentVector) -> bool {
        self.games.iter().any(|l| &l.game == g)
    }
}

/// Positive-class, negative-class and half-total error rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub pos_error: f64,
    pub neg_error: f64,
    pub hter: f64,
}

impl ErrorRates {
    /// From `(truth, predicted)` pairs; both classes must be present.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u8, u8)>) -> Result<Self> {
        let (mut pos, mut pos_wrong, mut neg, mut neg_wrong) = (0usize, 0usize, 0usize, 0usize);
        for (t, p) in pairs {
            if t == 1 {
                pos += 1;
                pos_wrong += usize::from(p != 1);
            } else {
                neg += 1;
                neg_wrong += usize::from(p != 0);
            }
        }
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateValidation(format!(
                "need both classes, got {pos} positive and {neg} negative"
            )));
        }
        let pos_error = pos_wrong as f64 / pos as f64;
        let neg_error = neg_wrong as f64 / neg as f64;
        Ok(Self {
            pos_error,
            neg_error,
            hter: 0.5 * (pos_error + neg_error),
        })
    }
}

/// Acceptability error rates of `classifier` on the validation games.
pub fn evaluate_errors<C: Classifier + ?Sized>(classifier: &C, validation: &ValidationSet) -> Result<ErrorRates> {
    let pairs = validation
        .games
        .iter()
        .map(|l| {
            let x = validation.schema.normalize(&l.game);
            Ok((l.acceptability.bit(), classifier.predict(&x)?.0))
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorRates::from_pairs(pairs)
}

/// One row of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iteration: usize,
    pub pos_error: f64,
    pub neg_error: f64,
    pub hter: f64,
    /// Game queried after evaluating this iteration's model.
    pub queried: Option<ContentVector>,
    /// Whether answering the query needed a fresh oracle call.
    pub was_new: bool,
    /// Training-set size of this iteration's model.
    pub annotations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub records: Vec<CurveRecord>,
}

impl LearningCurve {
    pub fn push(&mut self, record: CurveRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.iteration > last.iteration, "curve iterations must increase");
        }
        self.records.push(record);
    }

    pub fn last(&self) -> Option<&CurveRecord> {
        self.records.last()
    }

    /// Training-set size at the first iteration whose HTER is at most
    /// `target`.
    pub fn annotations_to_reach(&self, target: f64) -> Option<usize> {
        self.records.iter().find(|r| r.hter <= target).map(|r| r.annotations)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "pos_error", "neg_error", "hter", "annotations", "queried", "was_new"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.pos_error.to_string(),
                r.neg_error.to_string(),
                r.hter.to_string(),
                r.annotations.to_string(),
                r.queried.as_ref().map(ToString::to_string).unwrap_or_default(),
                u8::from(r.was_new).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryPolicy {
    /// Query the pool game whose score is nearest 0.5.
    Uncertainty,
    /// Query a uniformly random pool game (baseline).
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcqConfig {
    pub stop_hter: f64,
    /// Convergence also needs `|+Error - -Error| <= balance_band`.
    pub balance_band: f64,
    pub max_iters: usize,
    /// Random draws allowed while waiting for both classes to appear.
    pub init_seeds: usize,
    /// Allow validation games to be queried.
    pub query_validation: bool,
    pub policy: QueryPolicy,
}

impl Default for IcqConfig {
    fn default() -> Self {
        Self {
            stop_hter: 0.20,
            balance_band: 0.05,
            max_iters: 150,
            init_seeds: 20,
            query_validation: false,
            policy: QueryPolicy::Uncertainty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    MaxIters,
    PoolExhausted,
}

/// Result of an active learning run.
#[derive(Debug, Clone)]
pub struct ActiveOutcome<M> {
    pub classifier: M,
    pub curve: LearningCurve,
    pub stop: StopReason,
    /// Training games in the order they were added.
    pub training: Vec<ContentVector>,
}

/// Index of the candidate with the smallest margin `|score - 0.5|`; ties go
/// to the earliest candidate.
pub(crate) fn least_confident(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        let m = (s - 0.5).abs();
        if best.map_or(true, |(_, b)| m < b) {
            best = Some((i, m));
        }
    }
    best.map(|(i, _)| i)
}

/// Alg. "train, evaluate, query the least confident game, annotate, retrain".
///
/// Candidates are the pool games (minus validation games unless allowed),
/// ordered by lexicographic game index. Initialization draws random
/// candidates until both classes have been seen. Equally uncertain
/// candidates are broken at random from the seeded query stream.
pub fn active_learn_icq<T: Trainer>(
    pool: &ContentSubspace,
    store: &mut AnnotationStore,
    oracle: &mut Oracle<'_>,
    validation: &ValidationSet,
    config: &IcqConfig,
    trainer: &T,
    seed: u64,
) -> Result<ActiveOutcome<T::Model>>
where
    T::Model: Sync,
{
    let schema = &pool.schema;
    let mut candidates: Vec<ContentVector> = pool
        .games()
        .iter()
        .filter(|g| config.query_validation || !validation.contains(g))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    candidates.sort_by_key(|g| schema.game_id(g));

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut training = Vec::new();
    let mut init_rng = derived_rng(seed, 0);
    let mut draws = 0;
    while !(labels.contains(&0) && labels.contains(&1)) {
        if draws == config.init_seeds || candidates.is_empty() {
            return Err(Error::DegenerateData(format!(
                "initial annotations are single-class after {draws} draws"
            )));
        }
        let i = init_rng.gen_range(0..candidates.len());
        let g = candidates.remove(i);
        let (l, _) = store.annotate(&g, oracle);
        inputs.push(schema.normalize(&g));
        labels.push(l.acceptability.bit());
        training.push(g);
        draws += 1;
    }

    let mut query_rng = derived_rng(seed, 1);
    let mut curve = LearningCurve::default();
    for iteration in 0.. {
        let data = Dataset::classification(inputs.clone(), labels.clone())?;
        let model = trainer.fit(&data, derive_seed(seed, 2 + iteration as u64))?;
        let e = evaluate_errors(&model, validation)?;
        let mut record = CurveRecord {
            iteration,
            pos_error: e.pos_error,
            neg_error: e.neg_error,
            hter: e.hter,
            queried: None,
            was_new: false,
            annotations: training.len(),
        };
        let stop = if e.hter <= config.stop_hter && (e.pos_error - e.neg_error).abs() <= config.balance_band {
            Some(StopReason::Converged)
        } else if iteration >= config.max_iters {
            Some(StopReason::MaxIters)
        } else if candidates.is_empty() {
            Some(StopReason::PoolExhausted)
        } else {
            None
        };
        if let Some(stop) = stop {
            curve.push(record);
            return Ok(ActiveOutcome {
                classifier: model,
                curve,
                stop,
                training,
            });
        }
        let pick = match config.policy {
            QueryPolicy::Uncertainty => {
                let scores = candidates
                    .par_iter()
                    .map(|g| model.positive_score(&schema.normalize(g)))
                    .collect::<Result<Vec<_>>>()?;
                let best = least_confident(&scores).expect("candidates non-empty");
                let margin = (scores[best] - 0.5).abs();
                let tied: Vec<usize> = (0..scores.len()).filter(|&i| (scores[i] - 0.5).abs() == margin).collect();
                tied[query_rng.gen_range(0..tied.len())]
            }
            QueryPolicy::Random => query_rng.gen_range(0..candidates.len()),
        };
        let g = candidates.remove(pick);
        let (l, was_new) = store.annotate(&g, oracle);
        inputs.push(schema.normalize(&g));
        labels.push(l.acceptability.bit());
        record.queried = Some(g.clone());
        record.was_new = was_new;
        training.push(g);
        curve.push(record);
    }
    unreachable!()
}

/// Games of `space` the classifier labels acceptable. An empty result is
/// returned together with a warning.
pub fn filter_acceptable<C: Classifier + Sync + ?Sized>(
    space: &ContentSubspace,
    classifier: &C,
) -> Result<(ContentSubspace, Option<String>)> {
    let keep = space
        .games()
        .par_iter()
        .map(|g| Ok(classifier.predict(&space.schema.normalize(g))?.0 == 1))
        .collect::<Result<Vec<bool>>>()?;
    let games: Vec<ContentVector> = space
        .games()
        .iter()
        .zip(keep)
        .filter_map(|(g, k)| k.then(|| g.clone()))
        .collect();
    let tag = match space.tag {
        SubspaceTag::Reduced | SubspaceTag::ReducedAcceptable => SubspaceTag::ReducedAcceptable,
        _ => SubspaceTag::Acceptable,
    };
    let warning = games.is_empty().then(|| {
        let msg = format!("acceptability filter rejected all {} games", space.len());
        log::warn!("{msg}");
        msg
    });
    Ok((ContentSubspace::new(space.schema.clone(), tag, games)?, warning))
}
