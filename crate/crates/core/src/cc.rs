//! Content categorization: per-feature active learning over one-vs-rest
//! classifiers, winner-take-all decisions, and confidence-based rejection.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::content::{ContentSchema, ContentSubspace, ContentVector, FeatureSpec, LabeledGame, SubspaceTag};
use crate::error::{Error, Result};
use crate::icq::{AnnotationStore, Oracle, StopReason, ValidationRole, ValidationSet};
use crate::learners::{Classifier, Dataset, RandomForest, Trainer};
use crate::rng::{derive_seed, derived_rng};

/// One-vs-rest classifiers for the categories of one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryModel<M = RandomForest> {
    pub feature: usize,
    pub threshold: f64,
    pub classifiers: Vec<M>,
}

impl Artifact for CategoryModel<RandomForest> {
    const KIND: ArtifactKind = ArtifactKind::CategoryModels;
}

impl<M: Classifier> CategoryModel<M> {
    pub fn new(feature: usize, threshold: f64, classifiers: Vec<M>) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
        }
        if classifiers.is_empty() {
            return Err(Error::InvalidParameter("no category classifiers".into()));
        }
        Ok(Self {
            feature,
            threshold,
            classifiers,
        })
    }

    pub fn categories(&self) -> usize {
        self.classifiers.len()
    }

    /// Positive-class score of every category.
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.classifiers.iter().map(|c| c.positive_score(x)).collect()
    }

    /// Winner-take-all `(category, confidence)` on a normalized input.
    pub fn decide(&self, x: &[f64]) -> Result<(usize, f64)> {
        Ok(winner_take_all(&self.scores(x)?))
    }
}

/// Argmax with ties to the lowest index.
pub fn winner_take_all(scores: &[f64]) -> (usize, f64) {
    let mut best = (0, scores[0]);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.1 {
            best = (i, s);
        }
    }
    best
}

/// `(category, confidence)` of game `g`.
pub fn categorize<M: Classifier>(model: &CategoryModel<M>, schema: &ContentSchema, g: &ContentVector) -> Result<(usize, f64)> {
    schema.validate(g)?;
    model.decide(&schema.normalize(g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcCurveRecord {
    pub iteration: usize,
    pub overall_error: f64,
    /// Validation error per true category (`NaN` if the category is absent).
    pub category_errors: Vec<f64>,
    /// One query per category learner, in category order.
    pub queried: Vec<ContentVector>,
    /// How many of `queried` needed a fresh oracle call.
    pub new_annotations: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CcCurve {
    pub feature: usize,
    pub records: Vec<CcCurveRecord>,
}

impl CcCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let cats = self.records.first().map_or(0, |r| r.category_errors.len());
        let mut header = vec!["iteration".to_string(), "overall_error".to_string()];
        header.extend((0..cats).map(|c| format!("error_c{c}")));
        header.extend(["annotations", "queried", "new_annotations"].map(String::from));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![r.iteration.to_string(), r.overall_error.to_string()];
            row.extend(r.category_errors.iter().map(|e| e.to_string()));
            row.push(r.annotations.to_string());
            row.push(r.queried.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"));
            row.push(r.new_annotations.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcConfig {
    pub max_iters: usize,
    /// Stop once the best validation error is this many iterations old.
    pub patience: usize,
    /// Random pool draws allowed while waiting for every category.
    pub init_budget: usize,
    pub threshold: f64,
    pub min_per_category: usize,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self {
            max_iters: 150,
            patience: 30,
            init_budget: 60,
            threshold: 0.0,
            min_per_category: 20,
        }
    }
}

/// Result of categorization learning for one feature.
#[derive(Debug, Clone)]
pub struct CcOutcome<M> {
    pub model: CategoryModel<M>,
    pub curve: CcCurve,
    pub stop: StopReason,
    /// Iteration whose model was kept.
    pub best_iteration: usize,
}

/// Confusion counts `[truth][predicted]` of `model` on the validation set.
pub fn confusion<M: Classifier>(model: &CategoryModel<M>, validation: &ValidationSet) -> Result<Vec<Vec<usize>>> {
    let c = model.categories();
    let mut m = vec![vec![0usize; c]; c];
    for l in validation.games() {
        let truth = feature_of(l, model.feature)?;
        let (pred, _) = model.decide(&validation.schema.normalize(&l.game))?;
        m[truth][pred] += 1;
    }
    Ok(m)
}

fn feature_of(l: &LabeledGame, feature: usize) -> Result<usize> {
    l.features()
        .and_then(|f| f.get(feature))
        .ok_or_else(|| Error::Contract(format!("game {} lacks feature {feature}", l.game)))
}

fn error_summary(conf: &[Vec<usize>]) -> (f64, Vec<f64>) {
    let total: usize = conf.iter().flatten().sum();
    let correct: usize = (0..conf.len()).map(|i| conf[i][i]).sum();
    let per = conf
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                f64::NAN
            } else {
                1.0 - row[i] as f64 / n as f64
            }
        })
        .collect();
    (1.0 - correct as f64 / total.max(1) as f64, per)
}

fn train_one_vs_rest<T: Trainer>(
    trainer: &T,
    inputs: &[Vec<f64>],
    labels: &[usize],
    categories: usize,
    seed: u64,
) -> Result<Vec<T::Model>>
where
    T: Sync,
    T::Model: Send,
{
    (0..categories)
        .into_par_iter()
        .map(|c| {
            let y = labels.iter().map(|&l| u8::from(l == c)).collect();
            let data = Dataset::classification(inputs.to_vec(), y)?;
            trainer.fit(&data, derive_seed(seed, c as u64))
        })
        .collect()
}

fn category_names(spec: &FeatureSpec, missing: impl IntoIterator<Item = usize>) -> Vec<String> {
    missing.into_iter().map(|c| spec.category_name(c).to_string()).collect()
}

/// Active learning for each feature in `specs`.
///
/// Training starts from every feature-labeled game already in `store`
/// (annotation reuse) and draws random pool games until each category is
/// present. Each iteration retrains the one-vs-rest learners, records the
/// validation error, and lets each learner query its own least-confident
/// pool game (`|score - 0.5|` smallest, distinct games). The model with the lowest overall validation error is kept; the
/// loop stops once that minimum is `patience` iterations old.
#[allow(clippy::too_many_arguments)]
pub fn active_learn_cc<T>(
    pool: &ContentSubspace,
    store: &mut AnnotationStore,
    oracle: &mut Oracle<'_>,
    validation: &ValidationSet,
    specs: &[FeatureSpec],
    config: &CcConfig,
    trainer: &T,
    seed: u64,
) -> Result<Vec<CcOutcome<T::Model>>>
where
    T: Trainer + Sync,
    T::Model: Send + Sync + Clone,
{
    if validation.role != ValidationRole::Cc {
        return Err(Error::InvalidParameter("categorization needs a T_CC validation set".into()));
    }
    let schema = &pool.schema;
    let mut out = Vec::with_capacity(specs.len());
    for (feature, spec) in specs.iter().enumerate() {
        let fseed = derive_seed(seed, feature as u64);
        let cats = spec.category_count();

        let mut present: BTreeSet<usize> = BTreeSet::new();
        for l in validation.games() {
            present.insert(feature_of(l, feature)?);
        }
        if present.len() < cats {
            return Err(Error::MissingCategory(category_names(spec, (0..cats).filter(|c| !present.contains(c)))));
        }

        let mut candidates: Vec<ContentVector> = pool
            .games()
            .iter()
            .filter(|g| !validation.contains(g))
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        candidates.sort_by_key(|g| schema.game_id(g));

        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        let mut used = BTreeSet::new();
        for l in store.labels() {
            if let Some(c) = l.features().and_then(|f| f.get(feature)) {
                if !validation.contains(&l.game) && schema.validate(&l.game).is_ok() {
                    inputs.push(schema.normalize(&l.game));
                    labels.push(c);
                    used.insert(l.game.clone());
                }
            }
        }
        candidates.retain(|g| !used.contains(g));

        let mut rng = derived_rng(fseed, 0);
        let mut draws = 0;
        loop {
            let have: BTreeSet<usize> = labels.iter().copied().collect();
            if have.len() == cats {
                break;
            }
            if draws == config.init_budget || candidates.is_empty() {
                return Err(Error::MissingCategory(category_names(spec, (0..cats).filter(|c| !have.contains(c)))));
            }
            let g = candidates.remove(rng.gen_range(0..candidates.len()));
            let (l, _) = store.annotate(&g, oracle);
            if let Some(c) = l.features().and_then(|f| f.get(feature)) {
                inputs.push(schema.normalize(&g));
                labels.push(c);
            }
            draws += 1;
        }

        let mut curve = CcCurve {
            feature,
            records: Vec::new(),
        };
        let mut best: Option<(usize, f64, Vec<T::Model>)> = None;
        let stop;
        let mut iteration = 0;
        loop {
            let classifiers = train_one_vs_rest(trainer, &inputs, &labels, cats, derive_seed(fseed, 1 + iteration as u64))?;
            let model = CategoryModel::new(feature, config.threshold, classifiers)?;
            let (overall, per) = error_summary(&confusion(&model, validation)?);
            if best.as_ref().map_or(true, |(_, e, _)| overall < *e) {
                best = Some((iteration, overall, model.classifiers.clone()));
            }
            let mut record = CcCurveRecord {
                iteration,
                overall_error: overall,
                category_errors: per,
                queried: Vec::new(),
                new_annotations: 0,
                annotations: inputs.len(),
            };
            let best_it = best.as_ref().map_or(0, |b| b.0);
            let halt = if iteration - best_it >= config.patience {
                Some(StopReason::Converged)
            } else if iteration >= config.max_iters {
                Some(StopReason::MaxIters)
            } else if candidates.is_empty() {
                Some(StopReason::PoolExhausted)
            } else {
                None
            };
            if let Some(h) = halt {
                curve.records.push(record);
                stop = h;
                break;
            }
            // Each binary learner asks about the game it is least sure of.
            let scores = candidates
                .par_iter()
                .map(|g| model.scores(&schema.normalize(g)))
                .collect::<Result<Vec<Vec<f64>>>>()?;
            let mut picks: Vec<usize> = Vec::with_capacity(cats);
            for c in 0..cats {
                let pick = (0..candidates.len())
                    .filter(|i| !picks.contains(i))
                    .min_by(|&a, &b| {
                        let da = (scores[a][c] - 0.5).abs();
                        let db = (scores[b][c] - 0.5).abs();
                        da.total_cmp(&db).then(a.cmp(&b))
                    });
                if let Some(i) = pick {
                    picks.push(i);
                }
            }
            let queried: Vec<ContentVector> = picks.iter().map(|&i| candidates[i].clone()).collect();
            picks.sort_unstable_by(|a, b| b.cmp(a));
            for i in picks {
                candidates.remove(i);
            }
            for g in &queried {
                let (l, was_new) = store.annotate(g, oracle);
                // Unacceptable games carry no category and are simply consumed.
                if let Some(c) = l.features().and_then(|f| f.get(feature)) {
                    inputs.push(schema.normalize(g));
                    labels.push(c);
                }
                record.new_annotations += usize::from(was_new);
            }
            record.queried = queried;
            curve.records.push(record);
            iteration += 1;
        }
        let (best_iteration, _, classifiers) = best.expect("at least one iteration");
        out.push(CcOutcome {
            model: CategoryModel::new(feature, config.threshold, classifiers)?,
            curve,
            stop,
            best_iteration,
        });
    }
    Ok(out)
}

/// Build T_CC: every feature-labeled game of `seeds`, then random games of
/// `pool` until each category of feature 0 has `min_per_category` members or
/// `max_draws` pool games have been tried.
pub fn build_cc_validation(
    seeds: &[LabeledGame],
    pool: &ContentSubspace,
    store: &mut AnnotationStore,
    oracle: &mut Oracle<'_>,
    spec: &FeatureSpec,
    min_per_category: usize,
    max_draws: usize,
    seed: u64,
) -> Result<ValidationSet> {
    let mut counts = vec![0usize; spec.category_count()];
    let mut games = Vec::new();
    let mut seen = BTreeSet::new();
    let mut add = |l: LabeledGame, counts: &mut Vec<usize>, games: &mut Vec<LabeledGame>, always: bool| {
        if let Some(c) = l.features().and_then(|f| f.get(0)) {
            if c < counts.len() && (always || counts[c] < min_per_category) && seen.insert(l.game.clone()) {
                counts[c] += 1;
                games.push(l);
            }
        }
    };
    for l in seeds {
        add(l.clone(), &mut counts, &mut games, true);
    }
    let mut order: Vec<&ContentVector> = pool.games().iter().collect();
    order.shuffle(&mut derived_rng(seed, 0));
    for g in order.into_iter().take(max_draws) {
        if counts.iter().all(|&n| n >= min_per_category) {
            break;
        }
        let (l, _) = store.annotate(g, oracle);
        add(l, &mut counts, &mut games, false);
    }
    if let Some(c) = (0..counts.len()).find(|&c| counts[c] == 0) {
        let missing: Vec<usize> = (c..counts.len()).filter(|&c| counts[c] == 0).collect();
        return Err(Error::MissingCategory(category_names(spec, missing)));
    }
    ValidationSet::new(ValidationRole::Cc, pool.schema.clone(), games)
}

/// 𝒢_ac: games of `space` whose winning confidence reaches the threshold,
/// with their categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedSubspace {
    pub subspace: ContentSubspace,
    pub categories: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl Artifact for CategorizedSubspace {
    const KIND: ArtifactKind = ArtifactKind::ConfidentSubspace;
}

impl CategorizedSubspace {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    /// Indices of members in category `c`.
    pub fn in_category(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.categories[i] == c).collect()
    }

    pub fn category_of(&self, g: &ContentVector) -> Option<usize> {
        self.subspace.games().iter().position(|x| x == g).map(|i| self.categories[i])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["game_id", "game", "category", "confidence"])?;
        for (i, g) in self.subspace.games().iter().enumerate() {
            w.write_record([
                self.subspace.schema.game_id(g).to_string(),
                g.to_string(),
                self.categories[i].to_string(),
                self.confidences[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn filter_confident<M: Classifier + Sync>(
    space: &ContentSubspace,
    model: &CategoryModel<M>,
    threshold: f64,
) -> Result<CategorizedSubspace> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!("threshold {threshold} outside [0, 1]")));
    }
    let decided = space
        .games()
        .par_iter()
        .map(|g| model.decide(&space.schema.normalize(g)))
        .collect::<Result<Vec<_>>>()?;
    let mut games = Vec::new();
    let mut categories = Vec::new();
    let mut confidences = Vec::new();
    for (g, (c, s)) in space.games().iter().zip(decided) {
        if s >= threshold {
            games.push(g.clone());
            categories.push(c);
            confidences.push(s);
        }
    }
    Ok(CategorizedSubspace {
        subspace: ContentSubspace::new(space.schema.clone(), SubspaceTag::ConfidentAcceptable, games)?,
        categories,
        confidences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::content::FeatureVector;
    use crate::learners::ForestConfig;

    struct Fixed(f64);

    impl Classifier for Fixed {
        fn input_dim(&self) -> usize {
            1
        }
        fn positive_score(&self, _: &[f64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn fixed_model(scores: &[f64]) -> CategoryModel<Fixed> {
        CategoryModel::new(0, 0.0, scores.iter().map(|&s| Fixed(s)).collect()).unwrap()
    }

    #[test]
    fn winner_take_all_and_ties() {
        let m = fixed_model(&[0.9, 0.2, 0.1, 0.1, 0.1]);
        assert_eq!(m.decide(&[0.0]).unwrap(), (0, 0.9));
        let m = fixed_model(&[0.3; 5]);
        assert_eq!(m.decide(&[0.0]).unwrap(), (0, 0.3));
        assert_eq!(winner_take_all(&[0.1, 0.5, 0.5]), (1, 0.5));
    }

    #[test]
    fn threshold_bounds() {
        let schema = ContentSchema::from_cardinalities(&[4]).unwrap();
        let space = ContentSubspace::new(schema.clone(), SubspaceTag::Acceptable, crate::content::enumerate_space(&schema).unwrap().collect()).unwrap();
        let m = fixed_model(&[0.7, 0.2]);
        let all = filter_confident(&space, &m, 0.0).unwrap();
        assert_eq!(all.subspace.games(), space.games());
        assert_eq!(all.categories, vec![0; 4]);
        assert!(filter_confident(&space, &m, 1.0).unwrap().is_empty());
        assert!(filter_confident(&space, &m, 1.5).is_err());
    }

    #[test]
    fn single_category_oracle_names_the_missing_ones() {
        let schema = ContentSchema::from_cardinalities(&[6, 6]).unwrap();
        let pool = ContentSubspace::full(schema.clone()).unwrap();
        let mut oracle = |g: &ContentVector| LabeledGame::acceptable(g.clone(), Some(FeatureVector::single(2)));
        let mut store = AnnotationStore::new();
        let spec = FeatureSpec::difficulty();
        match build_cc_validation(&[], &pool, &mut store, &mut oracle, &spec, 20, 100, 0) {
            Err(Error::MissingCategory(names)) => {
                assert_eq!(names, vec!["VeryEasy", "Easy", "Hard", "VeryHard"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn learns_bands_on_a_grid() {
        // Category = floor of the first coordinate's band.
        let schema = ContentSchema::from_cardinalities(&[10, 4]).unwrap();
        let pool = ContentSubspace::full(schema.clone()).unwrap();
        let mut oracle = |g: &ContentVector| {
            LabeledGame::acceptable(g.clone(), Some(FeatureVector::single(g.values()[0] as usize / 2)))
        };
        let mut store = AnnotationStore::new();
        let spec = FeatureSpec::difficulty();
        let val = build_cc_validation(&[], &pool, &mut store, &mut oracle, &spec, 2, 40, 1).unwrap();
        let cfg = CcConfig {
            max_iters: 40,
            ..Default::default()
        };
        let trainer = ForestConfig {
            trees: 20,
            ..Default::default()
        };
        let calls_before = store.oracle_calls();
        let out = active_learn_cc(&pool, &mut store, &mut oracle, &val, &[spec], &cfg, &trainer, 2).unwrap();
        let o = &out[0];
        let best = &o.curve.records[o.best_iteration];
        assert!(best.overall_error <= 0.2, "{}", best.overall_error);
        // Annotation reuse: every oracle call is for a distinct game.
        assert_eq!(store.oracle_calls(), store.len());
        assert!(store.oracle_calls() >= calls_before);
        let (c, conf) = categorize(&o.model, &schema, &ContentVector::new(vec![9, 0])).unwrap();
        assert!(c <= 4 && conf > 0.0);
    }
}
