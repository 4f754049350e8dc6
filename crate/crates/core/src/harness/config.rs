//! Pipeline configuration: a TOML file with one table per stage. Every key
//! has a default, so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cc::CcConfig;
use crate::content::{ContentSchema, Dimension, DEFAULT_CARDINALITIES, DEFAULT_DIMENSION_NAMES};
use crate::error::{Error, Result};
use crate::gpe::EmConfig;
use crate::icq::{IcqConfig, QueryPolicy};
use crate::ip::IpConfig;
use crate::learners::{ForestConfig, KrrConfig};
use crate::pdc::{EnsembleConfig, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_REJECTION_THRESHOLD, DEFAULT_THRESHOLD_GRID};
use crate::rng::derive_seed;
use crate::simworld::{CohortConfig, EnjoymentModel, FlipMode, ReliabilityDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    pub names: Vec<String>,
    pub cardinalities: Vec<u32>,
}

impl Default for SchemaSection {
    fn default() -> Self {
        Self {
            names: DEFAULT_DIMENSION_NAMES.iter().map(|s| s.to_string()).collect(),
            cardinalities: DEFAULT_CARDINALITIES.to_vec(),
        }
    }
}

impl SchemaSection {
    pub fn build(&self) -> Result<ContentSchema> {
        if self.names.len() != self.cardinalities.len() {
            return Err(Error::Config(format!(
                "schema has {} names but {} cardinalities",
                self.names.len(),
                self.cardinalities.len()
            )));
        }
        ContentSchema::new(
            self.names
                .iter()
                .zip(&self.cardinalities)
                .map(|(n, &c)| Dimension::new(n.clone(), c))
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    /// Keep the forbidden-combination rules.
    pub forbidden: bool,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { forbidden: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    #[serde(rename = "K")]
    pub k: usize,
    /// Games sampled per cluster for the reduced space.
    pub m: usize,
    /// Points clustered when `full_space` is false.
    pub subsample: usize,
    pub full_space: bool,
    pub max_iters: usize,
    pub swap: bool,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        Self {
            k: 200,
            m: 100,
            subsample: 20_000,
            full_space: false,
            max_iters: 30,
            swap: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcqSection {
    pub stop_hter: f64,
    pub balance_band: f64,
    pub max_iters: usize,
    pub init_seeds: usize,
    pub query_validation: bool,
    /// Random pool games added to the per-cluster validation medoids.
    pub validation_extra: usize,
}

impl Default for IcqSection {
    fn default() -> Self {
        let d = IcqConfig::default();
        Self {
            stop_hter: d.stop_hter,
            balance_band: d.balance_band,
            max_iters: d.max_iters,
            init_seeds: d.init_seeds,
            query_validation: d.query_validation,
            validation_extra: 0,
        }
    }
}

impl IcqSection {
    pub fn icq_config(&self) -> IcqConfig {
        IcqConfig {
            stop_hter: self.stop_hter,
            balance_band: self.balance_band,
            max_iters: self.max_iters,
            init_seeds: self.init_seeds,
            query_validation: self.query_validation,
            policy: QueryPolicy::Uncertainty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcSection {
    pub max_iters: usize,
    pub patience: usize,
    pub init_budget: usize,
    pub threshold: f64,
    pub min_per_category: usize,
    /// Pool games tried while topping up T_CC.
    pub validation_draws: usize,
}

impl Default for CcSection {
    fn default() -> Self {
        let d = CcConfig::default();
        Self {
            max_iters: d.max_iters,
            patience: d.patience,
            init_budget: d.init_budget,
            threshold: d.threshold,
            min_per_category: d.min_per_category,
            validation_draws: 2_000,
        }
    }
}

impl CcSection {
    pub fn cc_config(&self) -> CcConfig {
        CcConfig {
            max_iters: self.max_iters,
            patience: self.patience,
            init_budget: self.init_budget,
            threshold: self.threshold,
            min_per_category: self.min_per_category,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BetaSection {
    /// Beta games drawn from 𝒢_ac per category.
    pub per_category: usize,
    pub players: usize,
    pub mean_plays: f64,
    pub min_plays: usize,
    pub reliability_low: f64,
    pub reliability_high: f64,
    pub outlier_fraction: f64,
    pub outlier_low: f64,
    pub outlier_high: f64,
    pub playlog_noise: f64,
    pub quota_flips: bool,
    /// Surveys by one inconsistent replaying player; 0 disables.
    pub inconsistent_player_plays: usize,
    /// Players whose self-disagreement rate exceeds this are excluded.
    pub disagreement_bound: f64,
    /// Bands either side of a player's own band they also enjoy.
    pub preferred_radius: usize,
    /// Prefer developer-annotated games (known category) as beta games.
    pub from_annotations: bool,
}

impl Default for BetaSection {
    fn default() -> Self {
        let c = CohortConfig::default();
        let r = c.reliability;
        Self {
            per_category: 20,
            players: c.players,
            mean_plays: c.mean_plays,
            min_plays: c.min_plays,
            reliability_low: r.low,
            reliability_high: r.high,
            outlier_fraction: r.outlier_fraction,
            outlier_low: r.outlier_low,
            outlier_high: r.outlier_high,
            playlog_noise: c.playlog_noise,
            quota_flips: c.flip_mode == FlipMode::Quota,
            inconsistent_player_plays: 154,
            disagreement_bound: 0.5,
            preferred_radius: c.preferred_radius,
            from_annotations: true,
        }
    }
}

impl BetaSection {
    pub fn cohort_config(&self) -> CohortConfig {
        CohortConfig {
            players: self.players,
            mean_plays: self.mean_plays,
            min_plays: self.min_plays,
            reliability: ReliabilityDistribution {
                low: self.reliability_low,
                high: self.reliability_high,
                outlier_fraction: self.outlier_fraction,
                outlier_low: self.outlier_low,
                outlier_high: self.outlier_high,
            },
            playlog_noise: self.playlog_noise,
            enjoyment: EnjoymentModel::Preference,
            flip_mode: if self.quota_flips { FlipMode::Quota } else { FlipMode::Bernoulli },
            inconsistent_player_plays: self.inconsistent_player_plays,
            preferred_radius: self.preferred_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpeSection {
    pub max_epochs: usize,
    pub tol: f64,
    pub refit: bool,
    pub bandwidth: f64,
    pub ridge: f64,
}

impl Default for GpeSection {
    fn default() -> Self {
        let e = EmConfig::default();
        let k = KrrConfig::default();
        Self {
            max_epochs: e.max_epochs,
            tol: e.tol,
            refit: e.refit,
            bandwidth: k.bandwidth,
            ridge: k.ridge,
        }
    }
}

impl GpeSection {
    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            max_epochs: self.max_epochs,
            tol: self.tol,
            refit: self.refit,
        }
    }

    pub fn krr_config(&self) -> KrrConfig {
        KrrConfig {
            bandwidth: self.bandwidth,
            ridge: self.ridge,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdcSection {
    pub alpha_thresholds: Vec<f64>,
    pub beta_thresholds: Vec<f64>,
    pub theta_c: f64,
    pub theta_r: f64,
    pub folds: usize,
    pub forest: ForestConfig,
    /// Rejection thresholds evaluated in the sweep report.
    pub sweep_theta_r: Vec<f64>,
}

impl Default for PdcSection {
    fn default() -> Self {
        Self {
            alpha_thresholds: DEFAULT_THRESHOLD_GRID.to_vec(),
            beta_thresholds: DEFAULT_THRESHOLD_GRID.to_vec(),
            theta_c: DEFAULT_CONFIDENCE_THRESHOLD,
            theta_r: DEFAULT_REJECTION_THRESHOLD,
            folds: EnsembleConfig::default().folds,
            forest: ForestConfig {
                trees: 50,
                ..ForestConfig::default()
            },
            sweep_theta_r: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5],
        }
    }
}

impl PdcSection {
    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            folds: self.folds,
            theta_c: self.theta_c,
            theta_r: self.theta_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpSection {
    #[serde(rename = "W")]
    pub window: usize,
    pub k: usize,
    #[serde(rename = "B")]
    pub budget: usize,
    pub d: usize,
    pub q: f64,
    /// Games per IP session; `scored_games` of them, starting at
    /// `scored_offset`, enter the score comparison.
    pub session_games: usize,
    pub scored_games: usize,
    /// First scored session game.
    pub scored_offset: usize,
}

impl Default for IpSection {
    fn default() -> Self {
        let c = IpConfig::default();
        Self {
            window: c.window,
            k: c.consistency,
            budget: c.budget,
            d: c.drift_run,
            q: c.quantile,
            session_games: 30,
            scored_games: 10,
            scored_offset: 0,
        }
    }
}

impl IpSection {
    pub fn ip_config(&self) -> IpConfig {
        IpConfig {
            window: self.window,
            consistency: self.k,
            budget: self.budget,
            drift_run: self.d,
            quantile: self.q,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Target players; the last one has opaque (pure-noise) play-logs.
    pub players: usize,
    /// Fraction of target players with noisy feedback and play-logs.
    pub noisy_fraction: f64,
    pub noisy_reliability: f64,
    pub noisy_playlog_noise: f64,
    pub opaque_playlog_noise: f64,
    /// Games per model in the scored comparison.
    pub games_per_model: usize,
    /// Extra drift players simulated for the re-categorization report.
    pub drift_players: usize,
    pub drift_at: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            players: 20,
            noisy_fraction: 0.3,
            noisy_reliability: 0.85,
            noisy_playlog_noise: 0.6,
            opaque_playlog_noise: 25.0,
            games_per_model: 10,
            drift_players: 20,
            drift_at: 15,
        }
    }
}

/// Optional per-stage seeds; missing ones derive from the top-level seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedSection {
    pub world: Option<u64>,
    pub cluster: Option<u64>,
    pub icq: Option<u64>,
    pub cc: Option<u64>,
    pub beta: Option<u64>,
    pub gpe: Option<u64>,
    pub pdc: Option<u64>,
    pub ip: Option<u64>,
    pub evaluate: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    pub out: String,
    pub schema: SchemaSection,
    pub world: WorldSection,
    pub clustering: ClusteringSection,
    pub learners: ForestConfig,
    pub icq: IcqSection,
    pub cc: CcSection,
    pub beta: BetaSection,
    pub gpe: GpeSection,
    pub pdc: PdcSection,
    pub ip: IpSection,
    pub evaluate: EvaluateSection,
    pub seeds: SeedSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 2014,
            out: "lbpcg-out".into(),
            schema: SchemaSection::default(),
            world: WorldSection::default(),
            clustering: ClusteringSection::default(),
            learners: ForestConfig::default(),
            icq: IcqSection::default(),
            cc: CcSection::default(),
            beta: BetaSection::default(),
            gpe: GpeSection::default(),
            pdc: PdcSection::default(),
            ip: IpSection::default(),
            evaluate: EvaluateSection::default(),
            seeds: SeedSection::default(),
        }
    }
}

/// Pipeline stages in dependency order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Cluster,
    Icq,
    Cc,
    Beta,
    Gpe,
    Pdc,
    Ip,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Cluster,
        Stage::Icq,
        Stage::Cc,
        Stage::Beta,
        Stage::Gpe,
        Stage::Pdc,
        Stage::Ip,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Cluster => "cluster",
            Stage::Icq => "icq",
            Stage::Cc => "cc",
            Stage::Beta => "beta",
            Stage::Gpe => "gpe",
            Stage::Pdc => "pdc",
            Stage::Ip => "ip",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read `path` (or start from defaults when `None`) and apply overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        let s = &self.seeds;
        let explicit = match stage {
            Stage::Cluster => s.cluster,
            Stage::Icq => s.icq,
            Stage::Cc => s.cc,
            Stage::Beta => s.beta,
            Stage::Gpe => s.gpe,
            Stage::Pdc => s.pdc,
            Stage::Ip => s.ip,
            Stage::Evaluate => s.evaluate,
        };
        explicit.unwrap_or_else(|| derive_seed(self.seed, 1 + stage as u64))
    }

    pub fn world_seed(&self) -> u64 {
        self.seeds.world.unwrap_or_else(|| derive_seed(self.seed, 0))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let schema = self.schema.build().map_err(|e| Error::Config(e.to_string()))?;
        let space = schema.space_size().map_err(|e| Error::Config(e.to_string()))?;
        let c = &self.clustering;
        if c.k == 0 || c.m == 0 {
            return bad("clustering.K and clustering.m must be positive".into());
        }
        let points = if c.full_space { space } else { (c.subsample as u64).min(space) };
        if (c.k as u64) > points {
            return bad(format!("clustering.K = {} exceeds the {points} clustered points", c.k));
        }
        if !(0.0..=1.0).contains(&self.icq.stop_hter) || self.icq.balance_band < 0.0 {
            return bad("icq.stop_hter must be in [0, 1] and icq.balance_band non-negative".into());
        }
        if self.icq.init_seeds < 2 {
            return bad("icq.init_seeds must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.cc.threshold) {
            return bad(format!("cc.threshold {} outside [0, 1]", self.cc.threshold));
        }
        if self.cc.patience == 0 {
            return bad("cc.patience must be positive".into());
        }
        let b = &self.beta;
        if b.per_category == 0 || b.players == 0 {
            return bad("beta.per_category and beta.players must be positive".into());
        }
        if b.mean_plays < b.min_plays as f64 || b.min_plays == 0 {
            return bad("beta.mean_plays must be at least beta.min_plays >= 1".into());
        }
        for (name, lo, hi) in [
            ("reliability", b.reliability_low, b.reliability_high),
            ("outlier", b.outlier_low, b.outlier_high),
        ] {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("beta.{name}_low/high must satisfy 0 <= low <= high <= 1"));
            }
        }
        if !(0.0..=1.0).contains(&b.outlier_fraction) || b.playlog_noise < 0.0 {
            return bad("beta.outlier_fraction must be in [0, 1] and beta.playlog_noise >= 0".into());
        }
        if self.gpe.bandwidth <= 0.0 || self.gpe.ridge <= 0.0 || self.gpe.tol < 0.0 {
            return bad("gpe.bandwidth and gpe.ridge must be positive, gpe.tol non-negative".into());
        }
        let p = &self.pdc;
        for (name, grid) in [("alpha", &p.alpha_thresholds), ("beta", &p.beta_thresholds)] {
            if grid.is_empty() || grid.iter().any(|t| !(0.0..=1.0).contains(t)) || grid.windows(2).any(|w| w[0] > w[1]) {
                return bad(format!("pdc.{name}_thresholds must be non-empty, ascending, in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&p.theta_c) || !(0.0..=1.0).contains(&p.theta_r) {
            return bad("pdc.theta_c and pdc.theta_r must be in [0, 1]".into());
        }
        if p.folds < 2 {
            return bad("pdc.folds must be at least 2".into());
        }
        for f in [&self.learners, &p.forest] {
            if f.trees == 0 || f.max_depth == 0 || f.min_leaf == 0 {
                return bad("forest trees, max_depth and min_leaf must be positive".into());
            }
        }
        self.ip.ip_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.ip.scored_offset + self.ip.scored_games > self.ip.session_games {
            return bad("ip.scored_offset + ip.scored_games exceeds ip.session_games".into());
        }
        let e = &self.evaluate;
        if self.evaluate.games_per_model != self.ip.scored_games {
            return bad("evaluate.games_per_model must equal ip.scored_games".into());
        }
        if e.players == 0 || e.games_per_model == 0 {
            return bad("evaluate.players and evaluate.games_per_model must be positive".into());
        }
        if !(0.0..=1.0).contains(&e.noisy_fraction) || !(0.0..=1.0).contains(&e.noisy_reliability) {
            return bad("evaluate.noisy_fraction and evaluate.noisy_reliability must be in [0, 1]".into());
        }
        Ok(())
    }
}

/// Set a dotted `key=value` in a TOML table. The value is parsed as a TOML
/// value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
