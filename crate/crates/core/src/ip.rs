//! Individual preference: the online CATEGORIZE / PRODUCE / GENERALIZE
//! controller that picks each next game for one target player.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::cc::CategorizedSubspace;
use crate::content::{ContentVector, FeatureVector};
use crate::error::{Error, Result};
use crate::learners::Classifier;
use crate::pdc::{predict_preference, Decision, PreferenceEnsemble};
use crate::rng::derived_rng;
use crate::simworld::{play_at, EnjoymentModel, SimulatedPlayer, WorldModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IpState {
    Categorize,
    Produce(usize),
    Generalize,
}

impl IpState {
    pub fn label(self) -> String {
        match self {
            IpState::Categorize => "categorize".into(),
            IpState::Produce(c) => format!("produce({c})"),
            IpState::Generalize => "generalize".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpConfig {
    /// Per-category window of recent decisions.
    pub window: usize,
    /// Positives (with no negatives) within the window that fix a category.
    pub consistency: usize,
    /// Categorize games before giving up and generalizing.
    pub budget: usize,
    /// Consecutive negatives in Produce that signal drift.
    pub drift_run: usize,
    /// Generalize serves from the top `quantile` of predicted popularity.
    pub quantile: f64,
}

impl Default for IpConfig {
    fn default() -> Self {
        Self {
            window: 5,
            consistency: 2,
            budget: 15,
            drift_run: 3,
            quantile: 0.2,
        }
    }
}

impl IpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.consistency == 0 || self.consistency > self.window {
            return bad(format!("need 1 <= k <= W, got k={} W={}", self.consistency, self.window));
        }
        if self.budget < self.consistency {
            return bad(format!("budget {} below k={}", self.budget, self.consistency));
        }
        if self.drift_run == 0 {
            return bad("drift run-length must be at least 1".into());
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return bad(format!("generalize quantile {} outside (0, 1)", self.quantile));
        }
        Ok(())
    }
}

/// Everything the controller serves from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpAssets {
    pub categories: usize,
    /// Beta games per category in descending consensus.
    pub beta_ranked: Vec<Vec<ContentVector>>,
    /// 𝒢_ac with categories.
    pub confident: CategorizedSubspace,
    /// Predicted popularity of each 𝒢_ac member.
    pub predicted_gamma: Vec<f64>,
}

impl IpAssets {
    /// Rank beta games by `gamma` (descending, stable) within their category.
    pub fn new(
        categories: usize,
        beta_games: &[ContentVector],
        beta_categories: &[usize],
        beta_gamma: &[f64],
        confident: CategorizedSubspace,
        predicted_gamma: Vec<f64>,
    ) -> Result<Self> {
        if beta_games.len() != beta_categories.len() || beta_games.len() != beta_gamma.len() {
            return Err(Error::DimensionMismatch {
                expected: beta_games.len(),
                found: beta_categories.len().min(beta_gamma.len()),
            });
        }
        if predicted_gamma.len() != confident.len() {
            return Err(Error::DimensionMismatch {
                expected: confident.len(),
                found: predicted_gamma.len(),
            });
        }
        let mut ranked = vec![Vec::new(); categories];
        let mut order: Vec<usize> = (0..beta_games.len()).collect();
        order.sort_by(|&a, &b| beta_gamma[b].total_cmp(&beta_gamma[a]));
        for i in order {
            let c = beta_categories[i];
            if c >= categories {
                return Err(Error::InvalidParameter(format!("beta category {c} out of range")));
            }
            ranked[c].push(beta_games[i].clone());
        }
        Ok(Self {
            categories,
            beta_ranked: ranked,
            confident,
            predicted_gamma,
        })
    }

    /// Predicted-popularity cut for the top `q` fraction of 𝒢_ac.
    pub fn generalize_cut(&self, q: f64) -> f64 {
        let mut v = self.predicted_gamma.clone();
        v.sort_by(f64::total_cmp);
        if v.is_empty() {
            return f64::INFINITY;
        }
        let i = (((1.0 - q) * v.len() as f64).floor() as usize).min(v.len() - 1);
        v[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub game: ContentVector,
    pub category: usize,
    pub decision: Decision,
    pub score: f64,
    pub state_before: IpState,
    pub state_after: IpState,
}

/// Controller state for one player; serializable so sessions can resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSession {
    pub state: IpState,
    pub history: Vec<HistoryEntry>,
    /// Index into `history` where the current state was entered.
    pub phase_start: usize,
    pub attempts: usize,
    /// Games served in the current Produce/Generalize phase.
    pub served: BTreeSet<ContentVector>,
    /// Beta games served during any Categorize phase.
    pub beta_served: BTreeSet<ContentVector>,
    pub next_category: usize,
    pending: Option<(ContentVector, usize)>,
    seed: u64,
    draws: u64,
}

impl Artifact for PlayerSession {
    const KIND: ArtifactKind = ArtifactKind::Session;
}

impl PlayerSession {
    pub fn new(seed: u64) -> Self {
        Self {
            state: IpState::Categorize,
            history: Vec::new(),
            phase_start: 0,
            attempts: 0,
            served: BTreeSet::new(),
            beta_served: BTreeSet::new(),
            next_category: 0,
            pending: None,
            seed,
            draws: 0,
        }
    }

    /// The served game awaiting `observe`, with its category.
    pub fn pending(&self) -> Option<&(ContentVector, usize)> {
        self.pending.as_ref()
    }

    fn uniform(&mut self, n: usize) -> usize {
        let mut rng = derived_rng(self.seed, self.draws);
        self.draws += 1;
        rng.gen_range(0..n)
    }

    /// Pick the next game for the current state.
    pub fn next_game(&mut self, assets: &IpAssets, config: &IpConfig) -> Result<ContentVector> {
        let (g, c) = match self.state {
            IpState::Categorize => {
                let mut found = None;
                for off in 0..assets.categories {
                    let c = (self.next_category + off) % assets.categories;
                    if let Some(g) = assets.beta_ranked[c].iter().find(|g| !self.beta_served.contains(*g)) {
                        found = Some((g.clone(), c));
                        break;
                    }
                }
                let (g, c) = found.ok_or_else(|| Error::PoolExhausted("Categorize".into()))?;
                self.next_category = (c + 1) % assets.categories;
                self.beta_served.insert(g.clone());
                (g, c)
            }
            IpState::Produce(c) => {
                let pool: Vec<usize> = assets
                    .confident
                    .in_category(c)
                    .into_iter()
                    .filter(|&i| !self.served.contains(&assets.confident.subspace.games()[i]))
                    .collect();
                if pool.is_empty() {
                    return Err(Error::PoolExhausted(format!("Produce({c})")));
                }
                let i = pool[self.uniform(pool.len())];
                (assets.confident.subspace.games()[i].clone(), c)
            }
            IpState::Generalize => {
                let cut = assets.generalize_cut(config.quantile);
                let pool: Vec<usize> = (0..assets.confident.len())
                    .filter(|&i| {
                        assets.predicted_gamma[i] >= cut
                            && !self.served.contains(&assets.confident.subspace.games()[i])
                    })
                    .collect();
                if pool.is_empty() {
                    return Err(Error::PoolExhausted("Generalize".into()));
                }
                let i = pool[self.uniform(pool.len())];
                (assets.confident.subspace.games()[i].clone(), assets.confident.categories[i])
            }
        };
        if !matches!(self.state, IpState::Categorize) {
            self.served.insert(g.clone());
        }
        self.pending = Some((g.clone(), c));
        Ok(g)
    }

    /// Category fixed by the k-of-W rule over the current phase, if any:
    /// the category with the most window positives (ties to the lowest).
    fn consistent_category(&self, config: &IpConfig, categories: usize) -> Option<usize> {
        let phase = &self.history[self.phase_start..];
        let mut best: Option<(usize, usize)> = None;
        for c in 0..categories {
            let recent: Vec<Decision> = phase
                .iter()
                .rev()
                .filter(|e| e.category == c)
                .take(config.window)
                .map(|e| e.decision)
                .collect();
            let pos = recent.iter().filter(|&&d| d == Decision::Positive).count();
            let neg = recent.iter().filter(|&&d| d == Decision::Negative).count();
            if pos >= config.consistency && neg == 0 && best.map_or(true, |(_, p)| pos > p) {
                best = Some((c, pos));
            }
        }
        best.map(|(c, _)| c)
    }

    fn drifted(&self, config: &IpConfig) -> bool {
        let recent: Vec<Decision> = self.history[self.phase_start..]
            .iter()
            .rev()
            .map(|e| e.decision)
            .filter(|&d| d != Decision::Rejected)
            .take(config.drift_run)
            .collect();
        recent.len() == config.drift_run && recent.iter().all(|&d| d == Decision::Negative)
    }

    /// Score the pending game's play-log and apply the transition rules.
    pub fn observe<M: Classifier>(
        &mut self,
        playlog: &[f64],
        ensemble: &PreferenceEnsemble<M>,
        config: &IpConfig,
        categories: usize,
    ) -> Result<&HistoryEntry> {
        let (game, category) = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract("observe called with no served game".into()))?;
        let p = predict_preference(ensemble, playlog, &FeatureVector::single(category))?;
        let before = self.state;
        self.history.push(HistoryEntry {
            game,
            category,
            decision: p.decision,
            score: p.score,
            state_before: before,
            state_after: before,
        });
        let next = match before {
            IpState::Categorize => {
                self.attempts += 1;
                match self.consistent_category(config, categories) {
                    Some(c) => IpState::Produce(c),
                    None if self.attempts >= config.budget => IpState::Generalize,
                    None => IpState::Categorize,
                }
            }
            IpState::Produce(c) => {
                if self.drifted(config) {
                    IpState::Categorize
                } else {
                    IpState::Produce(c)
                }
            }
            IpState::Generalize => self
                .consistent_category(config, categories)
                .map_or(IpState::Generalize, IpState::Produce),
        };
        if next != before {
            self.state = next;
            self.phase_start = self.history.len();
            self.served.clear();
            if next == IpState::Categorize {
                self.attempts = 0;
            }
        }
        let last = self.history.last_mut().expect("just pushed");
        last.state_after = next;
        Ok(last)
    }
}

/// One row of a session transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub index: usize,
    pub game_id: u64,
    pub game: ContentVector,
    pub category: usize,
    pub state_before: IpState,
    pub state_after: IpState,
    pub decision: Decision,
    pub score: f64,
    pub true_enjoyment: u8,
    pub feedback: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub config: IpConfig,
    pub rows: Vec<TranscriptRow>,
    pub session: PlayerSession,
}

impl Artifact for Transcript {
    const KIND: ArtifactKind = ArtifactKind::Transcripts;
}

impl Transcript {
    pub fn final_state(&self) -> IpState {
        self.session.state
    }

    /// Index of the first game after which the state was `Produce(c)`.
    pub fn first_produce(&self, c: usize, from: usize) -> Option<usize> {
        self.rows
            .iter()
            .skip(from)
            .find(|r| r.state_after == IpState::Produce(c))
            .map(|r| r.index)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "game_id",
            "game",
            "category",
            "state_before",
            "state_after",
            "decision",
            "score",
            "true_enjoyment",
            "feedback",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.index.to_string(),
                r.game_id.to_string(),
                r.game.to_string(),
                r.category.to_string(),
                r.state_before.label(),
                r.state_after.label(),
                r.decision.as_str().to_string(),
                r.score.to_string(),
                r.true_enjoyment.to_string(),
                r.feedback.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Alternate serve, simulated play and observe for `n_games`.
pub fn run_session<M: Classifier>(
    world: &WorldModel,
    player: &SimulatedPlayer,
    assets: &IpAssets,
    ensemble: &PreferenceEnsemble<M>,
    config: &IpConfig,
    n_games: usize,
    seed: u64,
) -> Result<Transcript> {
    config.validate()?;
    let mut session = PlayerSession::new(crate::rng::derive_seed(seed, 0));
    let mut rows = Vec::with_capacity(n_games);
    for index in 0..n_games {
        let g = session.next_game(assets, config)?;
        let outcome = play_at(
            world,
            player,
            &g,
            index,
            EnjoymentModel::Preference,
            crate::rng::derive_seed(seed, 1 + index as u64),
        );
        let e = session.observe(&outcome.playlog, ensemble, config, assets.categories)?;
        rows.push(TranscriptRow {
            index,
            game_id: world.schema.game_id(&g),
            game: g,
            category: e.category,
            state_before: e.state_before,
            state_after: e.state_after,
            decision: e.decision,
            score: e.score,
            true_enjoyment: outcome.true_enjoyment,
            feedback: outcome.reported,
        });
    }
    Ok(Transcript {
        config: *config,
        rows,
        session,
    })
}
