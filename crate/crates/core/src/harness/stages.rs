//! Stage runners. Every stage reads its inputs from the output directory,
//! writes versioned artifacts, CSV data and a `reports/<stage>.txt` summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{PipelineConfig, Stage};
use super::metrics::{baseline_balanced, baseline_random, category_counts, score, PreferenceRates, ServedGame};
use crate::artifact::{load_artifact, save_artifact, Artifact, ArtifactKind};
use crate::cc::{
    active_learn_cc, build_cc_validation, confusion, filter_confident, CategorizedSubspace, CategoryModel,
};
use crate::clustering::{k_medoids, sample_per_cluster, ClusterPartition, KMedoidsConfig};
use crate::content::{enumerate_space, ContentSubspace, ContentVector, FeatureSpec, FeatureVector};
use crate::error::{Error, Result};
use crate::gpe::{crowd_em, GpeModel, SurveyMatrix};
use crate::icq::{active_learn_icq, evaluate_errors, filter_acceptable, AnnotationStore, ValidationSet};
use crate::ip::{run_session, IpAssets, Transcript};
use crate::learners::RandomForest;
use crate::pdc::{build_threshold_subsets, threshold_sweep, train_ensemble, write_sweep_csv, PdcExample, PreferenceEnsemble};
use crate::rng::{derive_seed, derived_rng};
use crate::simworld::{
    band_of_skill, bands_around, generate_beta_cohort, oracle_label, play_at, BetaCohort, Drift, EnjoymentModel, SimulatedPlayer,
    WorldModel,
};

pub const WORLD: &str = "world.art";
pub const PARTITION: &str = "partition.art";
pub const REDUCED: &str = "reduced.art";
pub const ICQ_ANNOTATIONS: &str = "icq_annotations.art";
pub const ICQ_VALIDATION: &str = "icq_validation.art";
pub const ICQ_MODEL: &str = "icq_model.art";
pub const ACCEPTABLE: &str = "acceptable.art";
pub const CC_ANNOTATIONS: &str = "cc_annotations.art";
pub const CC_VALIDATION: &str = "cc_validation.art";
pub const CC_MODEL: &str = "cc_model.art";
pub const CONFIDENT: &str = "confident.art";
pub const COHORT: &str = "cohort.art";
pub const GPE: &str = "gpe.art";
pub const ENSEMBLE: &str = "ensemble.art";
pub const IP_RUN: &str = "ip_sessions.art";
pub const REPORT: &str = "report.art";

/// Human-readable `key: value` summary of one stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageReport {
    pub entries: Vec<(String, String)>,
}

impl StageReport {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}: {v}\n")).collect()
    }

    fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(": "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Self { entries }
    }
}

/// Kind of simulated target player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlayerKind {
    Honest,
    Noisy,
    /// Play-logs are dominated by noise.
    Opaque,
    Drift,
}

impl PlayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PlayerKind::Honest => "honest",
            PlayerKind::Noisy => "noisy",
            PlayerKind::Opaque => "opaque",
            PlayerKind::Drift => "drift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPlayer {
    pub kind: PlayerKind,
    pub player: SimulatedPlayer,
}

/// IP sessions of every target player and drift player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpRun {
    pub players: Vec<TargetPlayer>,
    pub transcripts: Vec<Transcript>,
}

impl Artifact for IpRun {
    const KIND: ArtifactKind = ArtifactKind::Transcripts;
}

/// One `(model, player)` row of the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScore {
    pub model: String,
    pub player: usize,
    pub served: Vec<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRates {
    pub player: usize,
    pub kind: PlayerKind,
    pub band: usize,
    pub rates: PreferenceRates,
    pub unseen: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub models: Vec<String>,
    pub players: Vec<PlayerRates>,
    pub scores: Vec<ModelScore>,
    pub mean_scores: BTreeMap<String, f64>,
    /// Honest players whose true band reached Produce within 3·|C| games.
    pub categorized_honest: usize,
    pub honest_players: usize,
    /// Drift runs re-categorized within `d + 3·|C|` games of the switch.
    pub recategorized_drift: usize,
    pub drift_runs: usize,
    pub final_states: Vec<String>,
    pub stage_metrics: BTreeMap<String, String>,
}

impl Artifact for EvaluationReport {
    const KIND: ArtifactKind = ArtifactKind::Report;
}

impl EvaluationReport {
    pub fn mean_score(&self, model: &str) -> f64 {
        self.mean_scores.get(model).copied().unwrap_or(f64::NAN)
    }

    pub fn categorize_rate(&self) -> f64 {
        self.categorized_honest as f64 / self.honest_players.max(1) as f64
    }

    pub fn drift_rate(&self) -> f64 {
        self.recategorized_drift as f64 / self.drift_runs.max(1) as f64
    }
}

pub const MODELS: [&str; 3] = ["ip", "balanced", "random"];

/// A pipeline rooted at one output directory.
pub struct Pipeline<'a> {
    pub config: &'a PipelineConfig,
    pub out: PathBuf,
}

fn producer(file: &str) -> Stage {
    match file {
        WORLD | PARTITION | REDUCED => Stage::Cluster,
        ICQ_ANNOTATIONS | ICQ_VALIDATION | ICQ_MODEL | ACCEPTABLE => Stage::Icq,
        CC_ANNOTATIONS | CC_VALIDATION | CC_MODEL | CONFIDENT => Stage::Cc,
        COHORT => Stage::Beta,
        GPE => Stage::Gpe,
        ENSEMBLE => Stage::Pdc,
        IP_RUN => Stage::Ip,
        _ => Stage::Evaluate,
    }
}

impl<'a> Pipeline<'a> {
    pub fn new(config: &'a PipelineConfig, out: impl Into<PathBuf>) -> Self {
        Self {
            config,
            out: out.into(),
        }
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn need<A: Artifact>(&self, stage: Stage, file: &str) -> Result<A> {
        let p = self.path(file);
        if !p.exists() {
            return Err(Error::Dependency {
                stage: stage.name().into(),
                missing: producer(file).name().into(),
                path: p.display().to_string(),
            });
        }
        load_artifact(&p)
    }

    fn save<A: Artifact>(&self, a: &A, file: &str) -> Result<()> {
        save_artifact(a, self.path(file))
    }

    fn csv_file(&self, file: &str) -> Result<fs::File> {
        let p = self.path(file);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(fs::File::create(p)?)
    }

    fn write_report(&self, stage: Stage, report: &StageReport) -> Result<()> {
        let p = self.path(&format!("reports/{}.txt", stage.name()));
        fs::create_dir_all(p.parent().expect("has parent"))?;
        fs::write(p, report.render())?;
        Ok(())
    }

    fn read_report(&self, stage: Stage) -> StageReport {
        fs::read_to_string(self.path(&format!("reports/{}.txt", stage.name())))
            .map(|t| StageReport::parse(&t))
            .unwrap_or_default()
    }

    /// Run one stage. Returns its report.
    pub fn run_stage(&self, stage: Stage) -> Result<StageReport> {
        fs::create_dir_all(&self.out)?;
        let report = match stage {
            Stage::Cluster => self.cluster()?,
            Stage::Icq => self.icq()?,
            Stage::Cc => self.cc()?,
            Stage::Beta => self.beta()?,
            Stage::Gpe => self.gpe()?,
            Stage::Pdc => self.pdc()?,
            Stage::Ip => self.ip()?,
            Stage::Evaluate => self.evaluate()?.1,
        };
        self.write_report(stage, &report)?;
        Ok(report)
    }

    /// Every stage in order, then the evaluation report.
    pub fn run_all(&self) -> Result<EvaluationReport> {
        fs::create_dir_all(&self.out)?;
        fs::write(self.path("config.toml"), self.config.to_toml_string())?;
        for stage in Stage::ALL {
            log::info!("stage {}", stage.name());
            if stage == Stage::Evaluate {
                let (report, summary) = self.evaluate()?;
                self.write_report(stage, &summary)?;
                return Ok(report);
            }
            self.run_stage(stage)?;
        }
        unreachable!("evaluate is the last stage")
    }

    fn cluster(&self) -> Result<StageReport> {
        let cfg = self.config;
        let schema = cfg.schema.build()?;
        let mut world = WorldModel::generate(&schema, cfg.world_seed())?;
        if !cfg.world.forbidden {
            world = world.without_forbidden();
        }
        let seed = cfg.stage_seed(Stage::Cluster);
        let c = &cfg.clustering;
        let points = if c.full_space {
            enumerate_space(&schema)?.collect()
        } else {
            schema.sample_distinct(c.subsample, &mut derived_rng(seed, 0))?
        };
        let npoints = points.len();
        let kc = KMedoidsConfig {
            k: c.k,
            max_iters: c.max_iters,
            swap: c.swap,
        };
        let partition = k_medoids(&schema, points, kc, derive_seed(seed, 1))?;
        let reduced = sample_per_cluster(&partition, c.m, derive_seed(seed, 2))?;

        self.save(&world, WORLD)?;
        self.save(&partition, PARTITION)?;
        self.save(&reduced, REDUCED)?;
        let mut w = csv::Writer::from_writer(self.csv_file("cluster_costs.csv")?);
        w.write_record(["step", "cost"])?;
        for (i, v) in partition.cost_history.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
        w.flush()?;

        let mut r = StageReport::default();
        r.put("space_size", schema.space_size()?);
        r.put("clustered_points", npoints);
        r.put("K", partition.k());
        r.put("cost", partition.cost);
        r.put("reduced_size", reduced.len());
        Ok(r)
    }

    fn icq(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Icq, WORLD)?;
        let partition: ClusterPartition = self.need(Stage::Icq, PARTITION)?;
        let reduced: ContentSubspace = self.need(Stage::Icq, REDUCED)?;
        let seed = cfg.stage_seed(Stage::Icq);
        let mut oracle = |g: &ContentVector| oracle_label(&world, g);
        let mut store = AnnotationStore::new();
        let validation = ValidationSet::for_icq(&partition, cfg.icq.validation_extra, &mut store, &mut oracle, derive_seed(seed, 0))?;
        let outcome = active_learn_icq(
            &reduced,
            &mut store,
            &mut oracle,
            &validation,
            &cfg.icq.icq_config(),
            &cfg.learners,
            derive_seed(seed, 1),
        )?;
        let (acceptable, warning) = filter_acceptable(&reduced, &outcome.classifier)?;
        if acceptable.is_empty() {
            return Err(Error::DegenerateData(
                warning.unwrap_or_else(|| "acceptability filter kept no games".into()),
            ));
        }
        let final_errors = evaluate_errors(&outcome.classifier, &validation)?;

        self.save(&store, ICQ_ANNOTATIONS)?;
        self.save(&validation, ICQ_VALIDATION)?;
        self.save(&outcome.classifier, ICQ_MODEL)?;
        self.save(&acceptable, ACCEPTABLE)?;
        outcome.curve.write_csv(self.csv_file("icq_curve.csv")?)?;

        let truly = acceptable
            .games()
            .iter()
            .filter(|g| world.acceptability(g).is_acceptable())
            .count();
        let mut r = StageReport::default();
        r.put("validation_size", validation.len());
        r.put("iterations", outcome.curve.records.len());
        r.put("stop", format!("{:?}", outcome.stop));
        r.put("annotations", store.oracle_calls());
        r.put("pos_error", final_errors.pos_error);
        r.put("neg_error", final_errors.neg_error);
        r.put("hter", final_errors.hter);
        r.put("acceptable_size", acceptable.len());
        r.put("acceptable_precision", truly as f64 / acceptable.len() as f64);
        Ok(r)
    }

    fn cc(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Cc, WORLD)?;
        let mut store: AnnotationStore = self.need(Stage::Cc, ICQ_ANNOTATIONS)?;
        let icq_val: ValidationSet = self.need(Stage::Cc, ICQ_VALIDATION)?;
        let acceptable: ContentSubspace = self.need(Stage::Cc, ACCEPTABLE)?;
        let seed = cfg.stage_seed(Stage::Cc);
        let calls_before = store.oracle_calls();
        let mut oracle = |g: &ContentVector| oracle_label(&world, g);
        let spec = FeatureSpec::difficulty();
        let validation = build_cc_validation(
            icq_val.games(),
            &acceptable,
            &mut store,
            &mut oracle,
            &spec,
            cfg.cc.min_per_category,
            cfg.cc.validation_draws,
            derive_seed(seed, 0),
        )?;
        let outcome = active_learn_cc(
            &acceptable,
            &mut store,
            &mut oracle,
            &validation,
            std::slice::from_ref(&spec),
            &cfg.cc.cc_config(),
            &cfg.learners,
            derive_seed(seed, 1),
        )?
        .remove(0);
        let model: CategoryModel<RandomForest> = outcome.model;
        let confident = filter_confident(&acceptable, &model, cfg.cc.threshold)?;
        let conf = confusion(&model, &validation)?;

        self.save(&store, CC_ANNOTATIONS)?;
        self.save(&validation, CC_VALIDATION)?;
        self.save(&model, CC_MODEL)?;
        self.save(&confident, CONFIDENT)?;
        outcome.curve.write_csv(self.csv_file("cc_curve.csv")?)?;
        confident.write_csv(self.csv_file("confident.csv")?)?;
        let mut w = csv::Writer::from_writer(self.csv_file("cc_confusion.csv")?);
        let mut header = vec!["truth".to_string()];
        header.extend((0..conf.len()).map(|c| format!("pred_{c}")));
        w.write_record(&header)?;
        for (t, row) in conf.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|n| n.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;

        let (errors, adjacent) = adjacency(&conf);
        let mut r = StageReport::default();
        r.put("validation_size", validation.len());
        r.put("iterations", outcome.curve.records.len());
        r.put("best_iteration", outcome.best_iteration);
        r.put("stop", format!("{:?}", outcome.stop));
        r.put("new_annotations", store.oracle_calls() - calls_before);
        r.put(
            "validation_error",
            outcome.curve.records[outcome.best_iteration].overall_error,
        );
        r.put("misclassified", errors);
        r.put("adjacent_fraction", if errors == 0 { 1.0 } else { adjacent as f64 / errors as f64 });
        r.put("confident_size", confident.len());
        for c in 0..spec.category_count() {
            r.put(&format!("confident_{}", spec.category_name(c)), confident.in_category(c).len());
        }
        Ok(r)
    }

    fn beta(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Beta, WORLD)?;
        let confident: CategorizedSubspace = self.need(Stage::Beta, CONFIDENT)?;
        let seed = cfg.stage_seed(Stage::Beta);
        let spec = FeatureSpec::difficulty();
        let cats = spec.category_count();
        // Developer-annotated games carry their true category; reuse them
        // first and top up from the most confident model categorizations.
        let mut annotated: Vec<Vec<ContentVector>> = vec![Vec::new(); cats];
        if cfg.beta.from_annotations {
            let store: AnnotationStore = self.need(Stage::Beta, CC_ANNOTATIONS)?;
            for l in store.labels() {
                if let Some(c) = l.features().and_then(|f| f.get(0)).filter(|&c| c < cats) {
                    annotated[c].push(l.game.clone());
                }
            }
        }
        let mut games = Vec::new();
        let mut categories = Vec::new();
        let mut missing = Vec::new();
        let mut reused = 0;
        for (c, mut pick) in annotated.into_iter().enumerate() {
            pick.shuffle(&mut derived_rng(seed, c as u64));
            pick.truncate(cfg.beta.per_category);
            reused += pick.len();
            let mut members = confident.in_category(c);
            members.sort_by(|&a, &b| confident.confidences[b].total_cmp(&confident.confidences[a]).then(a.cmp(&b)));
            for i in members {
                if pick.len() == cfg.beta.per_category {
                    break;
                }
                let g = &confident.subspace.games()[i];
                if !pick.contains(g) {
                    pick.push(g.clone());
                }
            }
            if pick.is_empty() {
                missing.push(spec.category_name(c).to_string());
                continue;
            }
            if pick.len() < cfg.beta.per_category {
                log::warn!("category {} has only {} candidate beta games", spec.category_name(c), pick.len());
            }
            pick.sort_unstable();
            categories.extend(std::iter::repeat(c).take(pick.len()));
            games.extend(pick);
        }
        if !missing.is_empty() {
            return Err(Error::MissingCategory(missing));
        }
        let cohort = generate_beta_cohort(
            &world,
            &games,
            &categories,
            &cfg.beta.cohort_config(),
            derive_seed(seed, 100),
        )?;
        self.save(&cohort, COHORT)?;
        write_cohort_csvs(self, &cohort)?;

        let truth_agree = cohort
            .games
            .iter()
            .zip(&cohort.categories)
            .filter(|(g, &c)| world.difficulty(g) == c)
            .count();
        let mut r = StageReport::default();
        r.put("beta_games", cohort.games.len());
        r.put("reused_annotations", reused);
        r.put("players", cohort.player_count());
        r.put("surveys", cohort.records.len());
        r.put("category_accuracy", truth_agree as f64 / cohort.games.len() as f64);
        Ok(r)
    }

    fn excluded_players(&self, cohort: &BetaCohort) -> Vec<bool> {
        cohort
            .self_disagreement()
            .into_iter()
            .map(|d| d.is_some_and(|d| d > self.config.beta.disagreement_bound))
            .collect()
    }

    fn gpe(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Gpe, WORLD)?;
        let cohort: BetaCohort = self.need(Stage::Gpe, COHORT)?;
        let excluded = self.excluded_players(&cohort);
        let surveys = SurveyMatrix::from_records(cohort.games.clone(), cohort.player_count(), &cohort.records, |p| {
            !excluded[p]
        })?;
        let model = crowd_em(&surveys, &world.schema, cfg.gpe.krr_config(), &cfg.gpe.em_config())?;
        self.save(&model, GPE)?;
        model
            .consensus
            .write_csv(&world.schema, &model.games, self.csv_file("gpe_consensus.csv")?)?;
        model.reliability.write_csv(self.csv_file("gpe_reliability.csv")?)?;
        model.write_epochs_csv(self.csv_file("gpe_epochs.csv")?)?;

        let (mut da, mut db, mut n) = (0.0, 0.0, 0usize);
        for (p, plant) in cohort.plants.iter().enumerate() {
            if excluded[p] || surveys.player_entries(p).is_empty() {
                continue;
            }
            da += (model.reliability.alpha[p] - plant.alpha).abs();
            db += (model.reliability.beta[p] - plant.beta).abs();
            n += 1;
        }
        let mut r = StageReport::default();
        r.put("players_used", n);
        r.put("players_excluded", excluded.iter().filter(|&&e| e).count());
        r.put("epochs", model.epochs.len());
        r.put("converged", model.converged);
        r.put("warnings", model.warnings.len());
        r.put("mean_alpha_error", da / n.max(1) as f64);
        r.put("mean_beta_error", db / n.max(1) as f64);
        if let Some(e) = model.epochs.last() {
            r.put("log_likelihood", e.log_likelihood);
        }
        Ok(r)
    }

    fn pdc_examples(cohort: &BetaCohort, keep: &[bool], truth: bool) -> Vec<PdcExample> {
        cohort
            .records
            .iter()
            .zip(&cohort.playlogs)
            .filter(|(rec, _)| keep[rec.player])
            .map(|(rec, log)| PdcExample {
                playlog: log.clone(),
                features: FeatureVector::single(cohort.categories[rec.game]),
                target: if truth { rec.true_enjoyment } else { rec.y },
                player: rec.player,
            })
            .collect()
    }

    fn pdc(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Pdc, WORLD)?;
        let cohort: BetaCohort = self.need(Stage::Pdc, COHORT)?;
        let gpe: GpeModel = self.need(Stage::Pdc, GPE)?;
        let seed = cfg.stage_seed(Stage::Pdc);
        let keep: Vec<bool> = self.excluded_players(&cohort).into_iter().map(|e| !e).collect();
        let data = Self::pdc_examples(&cohort, &keep, false);
        let subsets = build_threshold_subsets(
            &data,
            &gpe.reliability,
            &cfg.pdc.alpha_thresholds,
            &cfg.pdc.beta_thresholds,
        )?;
        let sizes = vec![FeatureSpec::difficulty().category_count()];
        let ensemble = train_ensemble(&data, &subsets, &sizes, &cfg.pdc.forest, &cfg.pdc.ensemble_config(), derive_seed(seed, 0))?;
        self.save(&ensemble, ENSEMBLE)?;

        // Held-out plays of the same beta games by fresh players, scored
        // against their true enjoyment.
        let mut held_cfg = cfg.beta.cohort_config();
        held_cfg.inconsistent_player_plays = 0;
        let held = generate_beta_cohort(&world, &cohort.games, &cohort.categories, &held_cfg, derive_seed(seed, 1))?;
        let held_examples = Self::pdc_examples(&held, &vec![true; held.player_count()], true);
        let sweep = threshold_sweep(&ensemble, &held_examples, &[cfg.pdc.theta_c], &cfg.pdc.sweep_theta_r)?;
        write_sweep_csv(&sweep, self.csv_file("pdc_sweep.csv")?)?;
        let mut w = csv::Writer::from_writer(self.csv_file("pdc_members.csv")?);
        w.write_record(["t_alpha", "t_beta", "rows", "trained", "cv_accuracy", "weight"])?;
        for (m, s) in subsets.iter().enumerate() {
            w.write_record([
                s.t_alpha.to_string(),
                s.t_beta.to_string(),
                s.rows.len().to_string(),
                u8::from(ensemble.members[m].is_some()).to_string(),
                ensemble.accuracies[m].to_string(),
                ensemble.weights[m].to_string(),
            ])?;
        }
        w.flush()?;

        let mut r = StageReport::default();
        r.put("examples", data.len());
        r.put("subsets", subsets.len());
        r.put("trained_members", ensemble.members.iter().filter(|m| m.is_some()).count());
        r.put("weight_sum", ensemble.weights.iter().sum::<f64>());
        r.put("held_out_examples", held_examples.len());
        if let Some(base) = sweep.iter().find(|s| s.theta_r == 0.0) {
            r.put("hter_no_rejection", base.hter);
        }
        if let Some(at) = sweep.iter().find(|s| s.theta_r == cfg.pdc.theta_r) {
            r.put("hter_at_theta_r", at.hter);
            r.put("reject_rate_at_theta_r", at.reject_rate);
        }
        Ok(r)
    }

    /// Target players (honest, noisy, one opaque) followed by drift players.
    pub fn target_players(&self) -> Result<Vec<TargetPlayer>> {
        let e = &self.config.evaluate;
        let noise = self.config.beta.playlog_noise;
        let radius = self.config.beta.preferred_radius;
        let bands = FeatureSpec::difficulty().category_count();
        let mut rng = derived_rng(self.config.stage_seed(Stage::Ip), 0);
        let skill_in = |band: usize, rng: &mut crate::rng::Rng| {
            (band as f64 + rng.gen_range(0.1..0.9)) / bands as f64
        };
        let n = e.players;
        let noisy = ((n.saturating_sub(1)) as f64 * e.noisy_fraction).round() as usize;
        let mut out = Vec::with_capacity(n + e.drift_players);
        for i in 0..n {
            let band = i % bands;
            let skill = skill_in(band, &mut rng);
            let pref = bands_around(band, radius);
            let (kind, player) = if i + 1 == n {
                (PlayerKind::Opaque, SimulatedPlayer::new(skill, pref, 1.0, 1.0, e.opaque_playlog_noise)?)
            } else if i + 1 + noisy >= n {
                let r = e.noisy_reliability;
                (PlayerKind::Noisy, SimulatedPlayer::new(skill, pref, r, r, e.noisy_playlog_noise)?)
            } else {
                (PlayerKind::Honest, SimulatedPlayer::new(skill, pref, 1.0, 1.0, noise)?)
            };
            out.push(TargetPlayer { kind, player });
        }
        // Drift pairs whose preferred sets do not overlap, so the switch is
        // a real change of taste rather than a shift within a shared band.
        let pairs: Vec<(usize, usize)> = (0..bands)
            .flat_map(|a| (0..bands).map(move |b| (a, b)))
            .filter(|&(a, b)| a.abs_diff(b) > 2 * radius)
            .collect();
        if e.drift_players > 0 && pairs.is_empty() {
            return Err(Error::Config(format!("no disjoint drift pair with beta.preferred_radius = {radius}")));
        }
        for i in 0..e.drift_players {
            let (from, to) = pairs[i % pairs.len()];
            let skill = skill_in(from, &mut rng);
            let after = skill_in(to, &mut rng);
            let player = SimulatedPlayer::new(skill, bands_around(from, radius), 1.0, 1.0, noise)?.with_drift(Drift {
                at_game: e.drift_at,
                preferred: bands_around(to, radius),
                skill: after,
            });
            out.push(TargetPlayer {
                kind: PlayerKind::Drift,
                player,
            });
        }
        Ok(out)
    }

    fn drift_session_games(&self) -> usize {
        let ip = &self.config.ip;
        let bands = FeatureSpec::difficulty().category_count();
        ip.session_games.max(self.config.evaluate.drift_at + ip.d + 3 * bands + 2)
    }

    fn ip(&self) -> Result<StageReport> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Ip, WORLD)?;
        let confident: CategorizedSubspace = self.need(Stage::Ip, CONFIDENT)?;
        let cohort: BetaCohort = self.need(Stage::Ip, COHORT)?;
        let gpe: GpeModel = self.need(Stage::Ip, GPE)?;
        let ensemble: PreferenceEnsemble<RandomForest> = self.need(Stage::Ip, ENSEMBLE)?;
        let seed = cfg.stage_seed(Stage::Ip);
        let bands = FeatureSpec::difficulty().category_count();
        let predicted = confident
            .subspace
            .games()
            .par_iter()
            .map(|g| gpe.predict_popularity(g))
            .collect::<Result<Vec<_>>>()?;
        let assets = IpAssets::new(bands, &cohort.games, &cohort.categories, &gpe.consensus.gamma, confident, predicted)?;
        let players = self.target_players()?;
        let ipc = cfg.ip.ip_config();
        let transcripts = players
            .par_iter()
            .enumerate()
            .map(|(i, t)| {
                let n = if t.kind == PlayerKind::Drift {
                    self.drift_session_games()
                } else {
                    cfg.ip.session_games
                };
                run_session(&world, &t.player, &assets, &ensemble, &ipc, n, derive_seed(seed, 1 + i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        fs::create_dir_all(self.path("transcripts"))?;
        for (i, t) in transcripts.iter().enumerate() {
            t.write_csv(self.csv_file(&format!("transcripts/player_{i:02}_{}.csv", players[i].kind.as_str()))?)?;
        }
        let run = IpRun { players, transcripts };
        self.save(&run, IP_RUN)?;

        let mut r = StageReport::default();
        r.put("sessions", run.transcripts.len());
        for state in ["categorize", "produce", "generalize"] {
            let n = run
                .transcripts
                .iter()
                .filter(|t| t.final_state().label().starts_with(state))
                .count();
            r.put(&format!("final_{state}"), n);
        }
        let rejected: usize = run
            .transcripts
            .iter()
            .map(|t| t.rows.iter().filter(|row| row.decision == crate::pdc::Decision::Rejected).count())
            .sum();
        let total: usize = run.transcripts.iter().map(|t| t.rows.len()).sum();
        r.put("reject_rate", rejected as f64 / total.max(1) as f64);
        Ok(r)
    }

    fn play_list(
        world: &WorldModel,
        player: &SimulatedPlayer,
        games: &[ContentVector],
        first_index: usize,
        seed: u64,
    ) -> Vec<ServedGame> {
        games
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let o = play_at(world, player, g, first_index + k, EnjoymentModel::Preference, derive_seed(seed, k as u64));
                ServedGame {
                    game: g.clone(),
                    category: world.difficulty(g),
                    feedback: o.reported,
                }
            })
            .collect()
    }

    fn evaluate(&self) -> Result<(EvaluationReport, StageReport)> {
        let cfg = self.config;
        let world: WorldModel = self.need(Stage::Evaluate, WORLD)?;
        let cohort: BetaCohort = self.need(Stage::Evaluate, COHORT)?;
        let run: IpRun = self.need(Stage::Evaluate, IP_RUN)?;
        let seed = cfg.stage_seed(Stage::Evaluate);
        let bands = FeatureSpec::difficulty().category_count();
        let n_model = cfg.evaluate.games_per_model;
        let from = cfg.ip.scored_offset;

        let mut players = Vec::new();
        let mut scores = Vec::new();
        let mut categorized = 0;
        let mut honest = 0;
        let mut recategorized = 0;
        let mut drift_runs = 0;
        for (p, (t, tr)) in run.players.iter().zip(&run.transcripts).enumerate() {
            let band = band_of_skill(t.player.skill);
            if t.kind == PlayerKind::Drift {
                drift_runs += 1;
                let d = t.player.drift.as_ref().expect("drift player");
                let limit = cfg.ip.d + 3 * bands;
                // Only categories the player did not already enjoy show a switch.
                let fresh: Vec<usize> =
                    d.preferred.iter().copied().filter(|c| !t.player.preferred.contains(c)).collect();
                if let Some(i) = first_produce_in(tr, &fresh, d.at_game) {
                    recategorized += usize::from(i + 1 - d.at_game <= limit);
                }
                continue;
            }
            if t.kind == PlayerKind::Honest {
                honest += 1;
                categorized +=
                    usize::from(first_produce_in(tr, &t.player.preferred, 0).is_some_and(|i| i < 3 * bands));
            }
            let pseed = derive_seed(seed, p as u64);
            let ip_games: Vec<ServedGame> = tr
                .rows
                .iter()
                .skip(from)
                .take(n_model)
                .map(|r| ServedGame {
                    game: r.game.clone(),
                    category: world.difficulty(&r.game),
                    feedback: r.feedback,
                })
                .collect();
            let balanced: Vec<ContentVector> =
                baseline_balanced(&cohort.games, &cohort.categories, bands, n_model, derive_seed(pseed, 0))?
                    .into_iter()
                    .map(|(g, _)| g)
                    .collect();
            let random = baseline_random(&world.schema, n_model, derive_seed(pseed, 1));
            let bal_games = Self::play_list(&world, &t.player, &balanced, 0, derive_seed(pseed, 2));
            let rnd_games = Self::play_list(&world, &t.player, &random, 0, derive_seed(pseed, 3));
            let served = [ip_games, bal_games, rnd_games];
            let rates = PreferenceRates::from_feedback(served.iter().flatten(), bands)?;
            for (m, games) in MODELS.iter().zip(&served) {
                let n = category_counts(games, bands);
                scores.push(ModelScore {
                    model: m.to_string(),
                    player: p,
                    score: score(&rates, &n),
                    served: n,
                });
            }
            players.push(PlayerRates {
                player: p,
                kind: t.kind,
                band,
                unseen: rates.unseen(),
                rates,
            });
        }
        let mut mean_scores = BTreeMap::new();
        for m in MODELS {
            let v: Vec<f64> = scores.iter().filter(|s| s.model == m).map(|s| s.score).collect();
            mean_scores.insert(m.to_string(), v.iter().sum::<f64>() / v.len().max(1) as f64);
        }
        let mut stage_metrics = BTreeMap::new();
        for stage in &Stage::ALL[..Stage::ALL.len() - 1] {
            for (k, v) in self.read_report(*stage).entries {
                stage_metrics.insert(format!("{}.{k}", stage.name()), v);
            }
        }
        let report = EvaluationReport {
            models: MODELS.iter().map(|s| s.to_string()).collect(),
            players,
            scores,
            mean_scores,
            categorized_honest: categorized,
            honest_players: honest,
            recategorized_drift: recategorized,
            drift_runs,
            final_states: run.transcripts.iter().map(|t| t.final_state().label()).collect(),
            stage_metrics,
        };
        self.save(&report, REPORT)?;
        write_evaluation_csvs(self, &report, bands)?;
        fs::write(self.path("summary.txt"), render_summary(&report))?;

        let mut r = StageReport::default();
        for m in MODELS {
            r.put(&format!("mean_score_{m}"), report.mean_score(m));
        }
        r.put("categorize_rate", report.categorize_rate());
        r.put("drift_rate", report.drift_rate());
        Ok((report, r))
    }
}

/// Earliest transcript index at or after `from` entering Produce for any of `cats`.
fn first_produce_in(tr: &Transcript, cats: &[usize], from: usize) -> Option<usize> {
    cats.iter().filter_map(|&c| tr.first_produce(c, from)).min()
}

/// `(misclassified, misclassified into an adjacent category)`.
pub fn adjacency(conf: &[Vec<usize>]) -> (usize, usize) {
    let mut errors = 0;
    let mut adjacent = 0;
    for (t, row) in conf.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            if t != p {
                errors += n;
                if t.abs_diff(p) == 1 {
                    adjacent += n;
                }
            }
        }
    }
    (errors, adjacent)
}

fn write_cohort_csvs(pipe: &Pipeline<'_>, cohort: &BetaCohort) -> Result<()> {
    let mut w = csv::Writer::from_writer(pipe.csv_file("beta_surveys.csv")?);
    w.write_record(["player", "game", "y", "rating"])?;
    for r in &cohort.records {
        w.write_record([r.player.to_string(), r.game.to_string(), r.y.to_string(), r.rating.to_string()])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(pipe.csv_file("beta_playlogs.csv")?);
    let width = cohort.playlogs.first().map_or(0, Vec::len);
    let mut header = vec!["player".to_string(), "game".to_string()];
    header.extend((0..width).map(|j| format!("l{j}")));
    w.write_record(&header)?;
    for (r, log) in cohort.records.iter().zip(&cohort.playlogs) {
        let mut row = vec![r.player.to_string(), r.game.to_string()];
        row.extend(log.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(pipe.csv_file("beta_plants.csv")?);
    w.write_record(["player", "alpha", "beta", "skill", "preferred", "inconsistent"])?;
    for (p, pl) in cohort.plants.iter().enumerate() {
        let pref: Vec<String> = pl.preferred.iter().map(|c| c.to_string()).collect();
        w.write_record([
            p.to_string(),
            pl.alpha.to_string(),
            pl.beta.to_string(),
            pl.skill.to_string(),
            pref.join(";"),
            u8::from(pl.inconsistent).to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(pipe.csv_file("beta_games.csv")?);
    w.write_record(["index", "game_id", "game", "category"])?;
    for (i, (g, c)) in cohort.games.iter().zip(&cohort.categories).enumerate() {
        w.write_record([i.to_string(), pipe_game_id(pipe, g), g.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn pipe_game_id(pipe: &Pipeline<'_>, g: &ContentVector) -> String {
    pipe.config
        .schema
        .build()
        .map(|s| s.game_id(g).to_string())
        .unwrap_or_default()
}

fn write_evaluation_csvs(pipe: &Pipeline<'_>, report: &EvaluationReport, bands: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(pipe.csv_file("evaluation_scores.csv")?);
    let mut header = vec!["model".to_string(), "player".to_string()];
    header.extend((0..bands).map(|c| format!("n_c{c}")));
    header.push("score".into());
    w.write_record(&header)?;
    for s in &report.scores {
        let mut row = vec![s.model.clone(), s.player.to_string()];
        row.extend(s.served.iter().map(|n| n.to_string()));
        row.push(s.score.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(pipe.csv_file("evaluation_rates.csv")?);
    w.write_record(["player", "kind", "band", "category", "played", "enjoyed", "rate", "flag"])?;
    for p in &report.players {
        for c in 0..bands {
            w.write_record([
                p.player.to_string(),
                p.kind.as_str().to_string(),
                p.band.to_string(),
                c.to_string(),
                p.rates.played[c].to_string(),
                p.rates.enjoyed[c].to_string(),
                p.rates.rate[c].map(|r| r.to_string()).unwrap_or_default(),
                if p.rates.rate[c].is_none() { "unseen".into() } else { String::new() },
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn render_summary(report: &EvaluationReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "players scored: {}", report.players.len());
    for m in &report.models {
        let _ = writeln!(s, "mean S[{m}]: {:.4}", report.mean_score(m));
    }
    let _ = writeln!(
        s,
        "honest players categorized within 3|C| games: {}/{}",
        report.categorized_honest, report.honest_players
    );
    let _ = writeln!(
        s,
        "drift runs re-categorized within d + 3|C| games: {}/{}",
        report.recategorized_drift, report.drift_runs
    );
    let _ = writeln!(s, "\nper player (kind, band, S_ip, S_balanced, S_random):");
    for p in &report.players {
        let get = |m: &str| {
            report
                .scores
                .iter()
                .find(|x| x.player == p.player && x.model == m)
                .map_or(f64::NAN, |x| x.score)
        };
        let _ = writeln!(
            s,
            "  {:>2} {:<7} {} {:>6.2} {:>6.2} {:>6.2}",
            p.player,
            p.kind.as_str(),
            p.band,
            get("ip"),
            get("balanced"),
            get("random")
        );
    }
    let _ = writeln!(s, "\nstage metrics:");
    for (k, v) in &report.stage_metrics {
        let _ = writeln!(s, "  {k}: {v}");
    }
    s
}

/// Result of one seed in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub seed: u64,
    pub out: PathBuf,
    pub report: EvaluationReport,
}

/// Run the whole pipeline for `seeds` consecutive top-level seeds, each in
/// `out/seed-<s>`, and write `out/sweep.csv`.
pub fn sweep(config: &PipelineConfig, out: &Path, seeds: u64) -> Result<Vec<SweepResult>> {
    let mut results = Vec::new();
    for k in 0..seeds {
        let mut cfg = config.clone();
        cfg.seed = config.seed.wrapping_add(k);
        let dir = out.join(format!("seed-{}", cfg.seed));
        let report = Pipeline::new(&cfg, &dir).run_all()?;
        results.push(SweepResult {
            seed: cfg.seed,
            out: dir,
            report,
        });
    }
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record(["seed", "mean_s_ip", "mean_s_balanced", "mean_s_random", "categorize_rate", "drift_rate"])?;
    for r in &results {
        w.write_record([
            r.seed.to_string(),
            r.report.mean_score("ip").to_string(),
            r.report.mean_score("balanced").to_string(),
            r.report.mean_score("random").to_string(),
            r.report.categorize_rate().to_string(),
            r.report.drift_rate().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(results)
}
