//! Synthetic ground truth: a developer oracle for acceptability and
//! difficulty, play-log synthesis, simulated beta testers with planted
//! sensitivity/specificity, and simulated target players with preferences and
//! drift.
//!
//! Everything here is a pure function of seeds.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::content::{
    enumerate_space, Acceptability, ContentSchema, ContentVector, FeatureVector, LabeledGame,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, derived_rng, rng_from};

/// Play-log width of the reference world.
pub const PLAYLOG_WIDTH: usize = 122;
/// Probability that a game one band away from a preferred band is enjoyed.
pub const ADJACENT_ENJOY_PROB: f64 = 0.25;
const BANDS: usize = 5;
/// Points used to calibrate quantile thresholds when the space is large.
const CALIBRATION_SAMPLE: usize = 20_000;
const MISMATCH_STRIDE: usize = 6;
const MISMATCH_GAIN: f64 = 3.0;

/// Acceptable iff the game contains both values of the pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForbiddenPair {
    pub dim_a: usize,
    pub value_a: u32,
    pub dim_b: usize,
    pub value_b: u32,
}

impl ForbiddenPair {
    fn hit(&self, g: &ContentVector) -> bool {
        g.values()[self.dim_a] == self.value_a && g.values()[self.dim_b] == self.value_b
    }
}

/// Planted generative model of the content space and its players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldModel {
    pub seed: u64,
    pub schema: ContentSchema,
    /// Acceptable iff `acceptability_weights . x >= acceptability_threshold`
    /// on normalized coordinates `x` and no forbidden pair is present.
    pub acceptability_weights: Vec<f64>,
    pub acceptability_threshold: f64,
    pub forbidden: Vec<ForbiddenPair>,
    /// Latent difficulty `difficulty_weights . x`; non-negative weights mark
    /// challenge dimensions.
    pub difficulty_weights: Vec<f64>,
    /// Four ascending cut points quantizing latent difficulty into bands.
    pub difficulty_cuts: Vec<f64>,
    /// Public appeal direction for consensus cohorts.
    pub appeal_weights: Vec<f64>,
    pub appeal_threshold: f64,
    /// Play-log map: row `j` is `bias[j] + game_rows[j] . x + skill_rows[j] * skill`.
    pub playlog_bias: Vec<f64>,
    pub playlog_game_rows: Vec<Vec<f64>>,
    pub playlog_skill_rows: Vec<f64>,
}

impl Artifact for WorldModel {
    const KIND: ArtifactKind = ArtifactKind::World;
}

/// Weights `(acceptability, difficulty)` for the named default dimensions.
fn designed_weights(name: &str) -> Option<(f64, f64)> {
    Some(match name {
        "skill" => (0.00, 1.00),
        "monsters" => (-0.20, 1.00),
        "health" => (0.25, 0.0),
        "ammo" => (0.35, 0.0),
        "weapons" => (0.35, 0.0),
        "monster_melee" => (0.00, 0.0),
        "monster_ranged" => (-0.05, 0.0),
        "monster_flying" => (-0.05, 0.0),
        "monster_boss" => (-0.10, 0.30),
        _ => return None,
    })
}

/// Fraction of the space the acceptability threshold admits before the
/// forbidden pairs are applied.
const ACCEPT_QUANTILE: f64 = 0.55;

impl WorldModel {
    /// Build the world for `schema`. Dimensions of the default schema get
    /// hand-set weights; other dimensions draw weights from the seed.
    /// Thresholds are calibrated on the space (or a sample of it) so that
    /// difficulty bands split acceptable content evenly.
    pub fn generate(schema: &ContentSchema, seed: u64) -> Result<Self> {
        let d = schema.len();
        let mut rng = derived_rng(seed, 0);
        let mut acc_w = Vec::with_capacity(d);
        let mut dif_w = Vec::with_capacity(d);
        for dim in schema.dims() {
            let (a, b) = designed_weights(&dim.name).unwrap_or_else(|| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample::<f64, _>(StandardNormal).abs();
                (a * 0.3, b * 0.3)
            });
            acc_w.push(a);
            dif_w.push(b);
        }
        let mut arng = derived_rng(seed, 1);
        let appeal_weights: Vec<f64> = (0..d).map(|_| arng.sample::<f64, _>(StandardNormal)).collect();

        let mut prng = derived_rng(seed, 2);
        let playlog_bias = (0..PLAYLOG_WIDTH).map(|_| prng.sample(StandardNormal)).collect();
        let playlog_game_rows = (0..PLAYLOG_WIDTH)
            .map(|_| (0..d).map(|_| 0.5 * prng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let playlog_skill_rows = (0..PLAYLOG_WIDTH)
            .map(|j| {
                let z: f64 = prng.sample(StandardNormal);
                // A third of the attributes carry most of the skill signal.
                if j % 3 == 0 {
                    2.0 * z.signum() + 0.5 * z
                } else {
                    0.3 * z
                }
            })
            .collect();

        let forbidden = default_forbidden(schema);
        let mut world = Self {
            seed,
            schema: schema.clone(),
            acceptability_weights: acc_w,
            acceptability_threshold: 0.0,
            forbidden,
            difficulty_weights: dif_w,
            difficulty_cuts: vec![0.0; BANDS - 1],
            appeal_weights,
            appeal_threshold: 0.0,
            playlog_bias,
            playlog_game_rows,
            playlog_skill_rows,
        };
        world.calibrate(derive_seed(seed, 3))?;
        world.install_mismatch_rows(derive_seed(seed, 4));
        Ok(world)
    }

    /// Same world with the forbidden-combination list removed: a pure
    /// linear-threshold acceptability rule.
    pub fn without_forbidden(mut self) -> Self {
        self.forbidden.clear();
        self
    }

    fn calibration_points(&self, seed: u64) -> Result<Vec<ContentVector>> {
        let size = self.schema.space_size()?;
        if size <= CALIBRATION_SAMPLE as u64 {
            Ok(enumerate_space(&self.schema)?.collect())
        } else {
            let mut rng = rng_from(seed);
            Ok((0..CALIBRATION_SAMPLE).map(|_| self.schema.sample(&mut rng)).collect())
        }
    }

    fn calibrate(&mut self, seed: u64) -> Result<()> {
        let pts = self.calibration_points(seed)?;
        let mut acc: Vec<f64> = pts.iter().map(|g| self.acceptability_score(g)).collect();
        acc.sort_by(f64::total_cmp);
        self.acceptability_threshold = quantile(&acc, 1.0 - ACCEPT_QUANTILE);
        let mut app: Vec<f64> = pts.iter().map(|g| self.appeal_score(g)).collect();
        app.sort_by(f64::total_cmp);
        self.appeal_threshold = quantile(&app, 0.5);
        let mut diff: Vec<f64> = pts
            .iter()
            .filter(|g| self.acceptability(g).is_acceptable())
            .map(|g| self.difficulty_score(g))
            .collect();
        if diff.is_empty() {
            diff = pts.iter().map(|g| self.difficulty_score(g)).collect();
        }
        diff.sort_by(f64::total_cmp);
        self.difficulty_cuts = (1..BANDS).map(|b| quantile(&diff, b as f64 / BANDS as f64)).collect();
        Ok(())
    }

    /// Every `MISMATCH_STRIDE`-th attribute (offset 1) measures how far the
    /// game's difficulty sits above the player's skill, the way deaths or
    /// health lost would. Difficulty is mapped onto the skill scale by the
    /// least-squares line through `(cut_b, (b + 1) / BANDS)`.
    fn install_mismatch_rows(&mut self, seed: u64) {
        let n = self.difficulty_cuts.len() as f64;
        let ys: Vec<f64> = (1..=self.difficulty_cuts.len()).map(|b| b as f64 / BANDS as f64).collect();
        let mx = self.difficulty_cuts.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxx: f64 = self.difficulty_cuts.iter().map(|x| (x - mx) * (x - mx)).sum();
        if sxx <= 0.0 {
            return;
        }
        let sxy: f64 = self.difficulty_cuts.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let mut rng = derived_rng(seed, 0);
        for j in (1..PLAYLOG_WIDTH).step_by(MISMATCH_STRIDE) {
            let a = MISMATCH_GAIN * if rng.gen::<bool>() { 1.0 } else { -1.0 };
            self.playlog_game_rows[j] = self.difficulty_weights.iter().map(|w| a * slope * w).collect();
            self.playlog_bias[j] += a * intercept;
            self.playlog_skill_rows[j] = -a;
        }
    }

    fn dot(&self, w: &[f64], g: &ContentVector) -> f64 {
        self.schema.normalize(g).iter().zip(w).map(|(x, w)| x * w).sum()
    }

    pub fn acceptability_score(&self, g: &ContentVector) -> f64 {
        self.dot(&self.acceptability_weights, g)
    }

    pub fn difficulty_score(&self, g: &ContentVector) -> f64 {
        self.dot(&self.difficulty_weights, g)
    }

    pub fn appeal_score(&self, g: &ContentVector) -> f64 {
        self.dot(&self.appeal_weights, g)
    }

    /// Developer acceptability label. Forbidden pairs take precedence over
    /// the latent score.
    pub fn acceptability(&self, g: &ContentVector) -> Acceptability {
        if self.forbidden.iter().any(|f| f.hit(g)) {
            return Acceptability::Unacceptable;
        }
        if self.acceptability_score(g) >= self.acceptability_threshold {
            Acceptability::Acceptable
        } else {
            Acceptability::Unacceptable
        }
    }

    /// Difficulty band `0..5` (defined for every game).
    pub fn difficulty(&self, g: &ContentVector) -> usize {
        let s = self.difficulty_score(g);
        self.difficulty_cuts.iter().filter(|&&c| s >= c).count()
    }

    /// Whether the public at large enjoys `g` (consensus cohorts).
    pub fn public_appeal(&self, g: &ContentVector) -> bool {
        self.acceptability(g).is_acceptable() && self.appeal_score(g) >= self.appeal_threshold
    }

    /// Deterministic, noise-free play-log of a player with `skill` on `g`.
    pub fn playlog_mean(&self, g: &ContentVector, skill: f64) -> Vec<f64> {
        let x = self.schema.normalize(g);
        self.playlog_bias
            .iter()
            .zip(&self.playlog_game_rows)
            .zip(&self.playlog_skill_rows)
            .map(|((b, row), s)| b + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + s * skill)
            .collect()
    }
}

fn default_forbidden(schema: &ContentSchema) -> Vec<ForbiddenPair> {
    let pair = |a: &str, va: Option<u32>, b: &str, vb: Option<u32>| -> Option<ForbiddenPair> {
        let (ia, ib) = (schema.position(a)?, schema.position(b)?);
        let top = |i: usize| schema.dims()[i].cardinality - 1;
        Some(ForbiddenPair {
            dim_a: ia,
            value_a: va.unwrap_or_else(|| top(ia)),
            dim_b: ib,
            value_b: vb.unwrap_or_else(|| top(ib)),
        })
    };
    [
        pair("monsters", None, "health", Some(0)),
        pair("monster_boss", None, "weapons", Some(0)),
    ]
    .into_iter()
    .flatten()
    .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let i = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[i.min(sorted.len() - 1)]
}

/// Developer oracle: acceptability label.
pub fn oracle_acceptability(world: &WorldModel, g: &ContentVector) -> Acceptability {
    world.acceptability(g)
}

/// Developer oracle: feature labels, defined only for acceptable games.
pub fn oracle_feature(world: &WorldModel, g: &ContentVector) -> Result<FeatureVector> {
    if !world.acceptability(g).is_acceptable() {
        return Err(Error::Contract(format!(
            "feature requested for unacceptable game {g}"
        )));
    }
    Ok(FeatureVector::single(world.difficulty(g)))
}

/// Full developer annotation of one game.
pub fn oracle_label(world: &WorldModel, g: &ContentVector) -> LabeledGame {
    match world.acceptability(g) {
        Acceptability::Acceptable => {
            LabeledGame::acceptable(g.clone(), Some(FeatureVector::single(world.difficulty(g))))
        }
        Acceptability::Unacceptable => LabeledGame::unacceptable(g.clone()),
    }
}

/// How a player's true enjoyment is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnjoymentModel {
    /// Enjoyed iff the game's difficulty band is preferred.
    Preference,
    /// Everyone shares the world's public appeal.
    Consensus,
}

/// A preference switch at a given game index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub at_game: usize,
    pub preferred: Vec<usize>,
    pub skill: f64,
}

/// Simulated beta tester or target player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedPlayer {
    pub skill: f64,
    pub preferred: Vec<usize>,
    /// Planted sensitivity: P(report 1 | enjoyed).
    pub alpha: f64,
    /// Planted specificity: P(report 0 | not enjoyed).
    pub beta: f64,
    pub drift: Option<Drift>,
    pub playlog_noise: f64,
    /// Reports flip on every repeat of the same game.
    #[serde(default)]
    pub inconsistent: bool,
}

impl SimulatedPlayer {
    pub fn new(skill: f64, preferred: Vec<usize>, alpha: f64, beta: f64, playlog_noise: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidParameter(format!(
                "reliability ({alpha}, {beta}) outside [0, 1]"
            )));
        }
        if preferred.is_empty() {
            return Err(Error::InvalidParameter("preferred set is empty".into()));
        }
        Ok(Self {
            skill,
            preferred,
            alpha,
            beta,
            drift: None,
            playlog_noise,
            inconsistent: false,
        })
    }

    /// Honest player whose skill sits in the middle of `band`.
    pub fn honest_for_band(band: usize, playlog_noise: f64) -> Self {
        Self::new(band_center(band), vec![band], 1.0, 1.0, playlog_noise)
            .expect("honest player is valid")
    }

    pub fn with_drift(mut self, drift: Drift) -> Self {
        self.drift = Some(drift);
        self
    }

    /// `(skill, preferred)` in effect at game index `game`.
    pub fn profile_at(&self, game: usize) -> (f64, &[usize]) {
        match &self.drift {
            Some(d) if game >= d.at_game => (d.skill, &d.preferred),
            _ => (self.skill, &self.preferred),
        }
    }
}

/// Skill at the center of a difficulty band.
pub fn band_center(band: usize) -> f64 {
    (band as f64 + 0.5) / BANDS as f64
}

/// `band` and its neighbours up to `radius` away, clipped to the band range.
pub fn bands_around(band: usize, radius: usize) -> Vec<usize> {
    (band.saturating_sub(radius)..=(band + radius).min(BANDS - 1)).collect()
}

/// Band whose skill range contains `skill`.
pub fn band_of_skill(skill: f64) -> usize {
    ((skill * BANDS as f64).floor() as isize).clamp(0, BANDS as isize - 1) as usize
}

/// Result of one simulated play.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayOutcome {
    pub playlog: Vec<f64>,
    pub true_enjoyment: u8,
    pub reported: u8,
    /// Five-point rating `0..=4` (VeryBad..VeryGood); recorded, not learned from.
    pub rating: u8,
}

/// Ground-truth enjoyment draw, before reporting noise.
fn true_enjoyment<R: rand::Rng>(
    world: &WorldModel,
    preferred: &[usize],
    model: EnjoymentModel,
    g: &ContentVector,
    rng: &mut R,
) -> u8 {
    let adjacent_draw: f64 = rng.gen();
    match model {
        EnjoymentModel::Consensus => u8::from(world.public_appeal(g)),
        EnjoymentModel::Preference => {
            if !world.acceptability(g).is_acceptable() {
                return 0;
            }
            let band = world.difficulty(g);
            if preferred.contains(&band) {
                1
            } else if preferred.iter().any(|&p| p.abs_diff(band) == 1) {
                u8::from(adjacent_draw < ADJACENT_ENJOY_PROB)
            } else {
                0
            }
        }
    }
}

/// Simulate `player` playing `g` as their `game_index`-th game.
pub fn play_at(
    world: &WorldModel,
    player: &SimulatedPlayer,
    g: &ContentVector,
    game_index: usize,
    model: EnjoymentModel,
    seed: u64,
) -> PlayOutcome {
    let mut rng = rng_from(seed);
    let (skill, preferred) = player.profile_at(game_index);
    let truth = true_enjoyment(world, preferred, model, g, &mut rng);
    let flip_draw: f64 = rng.gen();
    let reported = if truth == 1 {
        u8::from(flip_draw < player.alpha)
    } else {
        u8::from(flip_draw >= player.beta)
    };
    let rating = rating_for(truth, &mut rng);
    let mut playlog = world.playlog_mean(g, skill);
    if player.playlog_noise > 0.0 {
        for v in &mut playlog {
            *v += player.playlog_noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    PlayOutcome {
        playlog,
        true_enjoyment: truth,
        reported,
        rating,
    }
}

/// Simulate one play (preference enjoyment, player's initial profile).
pub fn play(world: &WorldModel, player: &SimulatedPlayer, g: &ContentVector, seed: u64) -> PlayOutcome {
    play_at(world, player, g, 0, EnjoymentModel::Preference, seed)
}

fn rating_for<R: rand::Rng>(truth: u8, rng: &mut R) -> u8 {
    let noise: f64 = rng.sample(StandardNormal);
    let center = if truth == 1 { 3.0 } else { 1.0 };
    (center + 0.8 * noise).round().clamp(0.0, 4.0) as u8
}

/// Distribution of planted `(alpha, beta)` for a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityDistribution {
    /// Reliable players: both rates uniform in `[low, high]`.
    pub low: f64,
    pub high: f64,
    /// Fraction of unreliable players with rates uniform in
    /// `[outlier_low, outlier_high]`.
    pub outlier_fraction: f64,
    pub outlier_low: f64,
    pub outlier_high: f64,
}

impl Default for ReliabilityDistribution {
    fn default() -> Self {
        Self {
            low: 0.8,
            high: 0.98,
            outlier_fraction: 0.15,
            outlier_low: 0.3,
            outlier_high: 0.6,
        }
    }
}

/// How planted reliabilities become report flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipMode {
    /// Each report is flipped independently.
    Bernoulli,
    /// Each player flips exactly `round((1 - alpha) * n_pos)` of their
    /// enjoyed plays and `round((1 - beta) * n_neg)` of the others, chosen
    /// uniformly; per-report flip probabilities keep their planted values.
    Quota,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub players: usize,
    /// Mean number of distinct games per player.
    pub mean_plays: f64,
    /// Lower bound on distinct games per player.
    pub min_plays: usize,
    pub reliability: ReliabilityDistribution,
    pub playlog_noise: f64,
    pub enjoyment: EnjoymentModel,
    pub flip_mode: FlipMode,
    /// Surveys of one extra player who replays games and answers
    /// inconsistently; 0 disables.
    pub inconsistent_player_plays: usize,
    /// Players also prefer bands within this distance of their own.
    #[serde(default)]
    pub preferred_radius: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            players: 140,
            mean_plays: 5.5,
            min_plays: 1,
            reliability: ReliabilityDistribution::default(),
            playlog_noise: 0.3,
            enjoyment: EnjoymentModel::Preference,
            flip_mode: FlipMode::Quota,
            inconsistent_player_plays: 0,
            preferred_radius: 1,
        }
    }
}

/// One survey answer: `game` indexes the beta game list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub player: usize,
    pub game: usize,
    pub y: u8,
    pub rating: u8,
    pub true_enjoyment: u8,
}

/// Hidden plant of one beta player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPlayer {
    pub alpha: f64,
    pub beta: f64,
    pub skill: f64,
    pub preferred: Vec<usize>,
    pub inconsistent: bool,
}

/// Output of a simulated public beta test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaCohort {
    pub games: Vec<ContentVector>,
    /// Category (difficulty band label) of each beta game as the pipeline
    /// sees it.
    pub categories: Vec<usize>,
    pub records: Vec<SurveyRecord>,
    /// Play-log of each record, aligned with `records`.
    pub playlogs: Vec<Vec<f64>>,
    pub plants: Vec<PlantedPlayer>,
}

impl Artifact for BetaCohort {
    const KIND: ArtifactKind = ArtifactKind::Cohort;
}

impl BetaCohort {
    pub fn player_count(&self) -> usize {
        self.plants.len()
    }

    /// Fraction of repeated-game answer pairs that disagree, per player
    /// (`None` when the player never repeated a game).
    pub fn self_disagreement(&self) -> Vec<Option<f64>> {
        let mut last: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        let mut pairs = vec![(0usize, 0usize); self.player_count()];
        for r in &self.records {
            if let Some(prev) = last.insert((r.player, r.game), r.y) {
                pairs[r.player].0 += 1;
                if prev != r.y {
                    pairs[r.player].1 += 1;
                }
            }
        }
        pairs
            .into_iter()
            .map(|(n, d)| (n > 0).then(|| d as f64 / n as f64))
            .collect()
    }
}

/// Simulate a beta test of `games` (with pipeline categories) by a cohort.
pub fn generate_beta_cohort(
    world: &WorldModel,
    games: &[ContentVector],
    categories: &[usize],
    config: &CohortConfig,
    seed: u64,
) -> Result<BetaCohort> {
    if games.is_empty() {
        return Err(Error::InvalidParameter("no beta games".into()));
    }
    if categories.len() != games.len() {
        return Err(Error::DimensionMismatch {
            expected: games.len(),
            found: categories.len(),
        });
    }
    let rel = &config.reliability;
    let mut prng = derived_rng(seed, 0);
    let mut players = Vec::with_capacity(config.players + 1);
    for _ in 0..config.players {
        let outlier = prng.gen::<f64>() < rel.outlier_fraction;
        let (lo, hi) = if outlier {
            (rel.outlier_low, rel.outlier_high)
        } else {
            (rel.low, rel.high)
        };
        let alpha = prng.gen_range(lo..=hi);
        let beta = prng.gen_range(lo..=hi);
        let skill: f64 = prng.gen();
        let preferred = bands_around(band_of_skill(skill), config.preferred_radius);
        players.push(SimulatedPlayer::new(skill, preferred, alpha, beta, config.playlog_noise)?);
    }
    if config.inconsistent_player_plays > 0 {
        let skill: f64 = prng.gen();
        let mut p = SimulatedPlayer::new(skill, vec![band_of_skill(skill)], 0.5, 0.5, config.playlog_noise * 4.0)?;
        p.inconsistent = true;
        players.push(p);
    }

    let exp = Exp::new(1.0 / (config.mean_plays - config.min_plays as f64).max(1e-9))
        .map_err(|e| Error::InvalidParameter(format!("mean_plays: {e}")))?;
    let mut records = Vec::new();
    let mut playlogs = Vec::new();
    // Each player takes the currently least-played games (random ties), so
    // every game is surveyed once total plays reach the game count.
    let mut play_counts = vec![0usize; games.len()];
    for (pid, player) in players.iter().enumerate() {
        let mut rng = derived_rng(seed, pid as u64 + 1);
        let schedule: Vec<usize> = if player.inconsistent {
            (0..config.inconsistent_player_plays)
                .map(|_| rng.gen_range(0..games.len().min(20)))
                .collect()
        } else {
            let extra = exp.sample(&mut rng).floor() as usize;
            let n = (config.min_plays + extra).clamp(1, games.len());
            let mut order: Vec<usize> = (0..games.len()).collect();
            order.shuffle(&mut rng);
            order.sort_by_key(|&g| play_counts[g]);
            order.truncate(n);
            for &g in &order {
                play_counts[g] += 1;
            }
            order
        };
        let mut outcomes: Vec<PlayOutcome> = schedule
            .iter()
            .enumerate()
            .map(|(k, &gi)| {
                play_at(world, player, &games[gi], k, config.enjoyment, derive_seed(seed ^ 0xbe7a, (pid as u64) << 32 | k as u64))
            })
            .collect();
        if player.inconsistent {
            let mut seen: BTreeMap<usize, u8> = BTreeMap::new();
            for (o, &gi) in outcomes.iter_mut().zip(&schedule) {
                if let Some(prev) = seen.get(&gi) {
                    o.reported = 1 - prev;
                }
                seen.insert(gi, o.reported);
            }
        } else if config.flip_mode == FlipMode::Quota {
            apply_quota(&mut outcomes, player.alpha, player.beta, &mut rng);
        }
        for (o, &gi) in outcomes.into_iter().zip(&schedule) {
            records.push(SurveyRecord {
                player: pid,
                game: gi,
                y: o.reported,
                rating: o.rating,
                true_enjoyment: o.true_enjoyment,
            });
            playlogs.push(o.playlog);
        }
    }
    let plants = players
        .iter()
        .map(|p| PlantedPlayer {
            alpha: p.alpha,
            beta: p.beta,
            skill: p.skill,
            preferred: p.preferred.clone(),
            inconsistent: p.inconsistent,
        })
        .collect();
    Ok(BetaCohort {
        games: games.to_vec(),
        categories: categories.to_vec(),
        records,
        playlogs,
        plants,
    })
}

fn apply_quota<R: rand::Rng>(outcomes: &mut [PlayOutcome], alpha: f64, beta: f64, rng: &mut R) {
    for (class, keep_rate) in [(1u8, alpha), (0u8, beta)] {
        let mut idx: Vec<usize> = (0..outcomes.len())
            .filter(|&i| outcomes[i].true_enjoyment == class)
            .collect();
        let flips = ((1.0 - keep_rate) * idx.len() as f64).round() as usize;
        idx.shuffle(rng);
        for (k, &i) in idx.iter().enumerate() {
            outcomes[i].reported = if k < flips { 1 - class } else { class };
        }
    }
}
