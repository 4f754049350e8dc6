//! Generic player experience: Crowd-EM over noisy binary beta-test surveys.
//!
//! Two-coin annotator model: player `p` reports 1 on a game the public
//! enjoys with probability `alpha_p`, and 0 on a game the public does not
//! enjoy with probability `beta_p`. A content regressor supplies the prior
//! `h_n`; the E-step computes the posterior `gamma_n`, the M-step re-estimates
//! the reliabilities, and the regressor is refit on `gamma`.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::content::{ContentSchema, ContentVector};
use crate::error::{Error, Result};
use crate::learners::{Dataset, KrrConfig, TrainedRegressor};
use crate::simworld::SurveyRecord;

/// Reliabilities are kept inside `[RELIABILITY_FLOOR, 1 - RELIABILITY_FLOOR]`
/// between epochs.
pub const RELIABILITY_FLOOR: f64 = 1e-6;
/// Stand-in for a log-likelihood of negative infinity.
pub const LOG_LIKELIHOOD_SENTINEL: f64 = -1e300;

/// Sparse `(game, player) -> y` survey answers over a list of beta games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyMatrix {
    games: Vec<ContentVector>,
    players: usize,
    /// `(player, y)` per game, ascending player.
    by_game: Vec<Vec<(usize, u8)>>,
    /// `(game, y)` per player, ascending game.
    by_player: Vec<Vec<(usize, u8)>>,
}

impl SurveyMatrix {
    pub fn new(games: Vec<ContentVector>, players: usize, entries: &[(usize, usize, u8)]) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        for &(n, p, y) in entries {
            if n >= games.len() || p >= players {
                return Err(Error::InvalidParameter(format!(
                    "entry (game {n}, player {p}) outside {} games x {players} players",
                    games.len()
                )));
            }
            if y > 1 {
                return Err(Error::InvalidParameter(format!("feedback {y} is not binary")));
            }
            if map.insert((n, p), y).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate entry (game {n}, player {p})")));
            }
        }
        let mut by_game = vec![Vec::new(); games.len()];
        let mut by_player = vec![Vec::new(); players];
        for (&(n, p), &y) in &map {
            by_game[n].push((p, y));
            by_player[p].push((n, y));
        }
        for list in &mut by_player {
            list.sort_unstable();
        }
        Ok(Self {
            games,
            players,
            by_game,
            by_player,
        })
    }

    /// From raw survey records. Players for which `keep` is false are
    /// dropped; a repeated `(game, player)` answer keeps the first one.
    pub fn from_records(
        games: Vec<ContentVector>,
        players: usize,
        records: &[SurveyRecord],
        keep: impl Fn(usize) -> bool,
    ) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for r in records.iter().filter(|r| keep(r.player)) {
            seen.entry((r.game, r.player)).or_insert(r.y);
        }
        let entries: Vec<(usize, usize, u8)> = seen.into_iter().map(|((n, p), y)| (n, p, y)).collect();
        Self::new(games, players, &entries)
    }

    pub fn games(&self) -> &[ContentVector] {
        &self.games
    }

    pub fn game_count(&self) -> usize {
        self.games.len()
    }

    pub fn player_count(&self) -> usize {
        self.players
    }

    pub fn entry_count(&self) -> usize {
        self.by_game.iter().map(Vec::len).sum()
    }

    pub fn game_entries(&self, n: usize) -> &[(usize, u8)] {
        &self.by_game[n]
    }

    pub fn player_entries(&self, p: usize) -> &[(usize, u8)] {
        &self.by_player[p]
    }

    /// `P_n`: number of players who rated game `n`.
    pub fn players_per_game(&self, n: usize) -> usize {
        self.by_game[n].len()
    }

    /// `N_p`: number of games player `p` rated.
    pub fn games_per_player(&self, p: usize) -> usize {
        self.by_player[p].len()
    }

    /// Mean feedback per game (`NaN` for unrated games).
    pub fn vote_means(&self) -> Vec<f64> {
        self.by_game
            .iter()
            .map(|e| e.iter().map(|&(_, y)| f64::from(y)).sum::<f64>() / e.len() as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorReliability {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl AnnotatorReliability {
    pub fn uniform(players: usize, value: f64) -> Self {
        Self {
            alpha: vec![value; players],
            beta: vec![value; players],
        }
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    fn clamp(&mut self) {
        for v in self.alpha.iter_mut().chain(self.beta.iter_mut()) {
            *v = v.clamp(RELIABILITY_FLOOR, 1.0 - RELIABILITY_FLOOR);
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["player", "alpha", "beta"])?;
        for p in 0..self.len() {
            w.write_record([p.to_string(), self.alpha[p].to_string(), self.beta[p].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusEstimate {
    pub gamma: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub h: Vec<f64>,
    pub warnings: Vec<String>,
}

impl ConsensusEstimate {
    pub fn write_csv<W: Write>(&self, schema: &ContentSchema, games: &[ContentVector], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "game_id", "game", "gamma", "a", "b", "h"])?;
        for (n, g) in games.iter().enumerate() {
            w.write_record([
                n.to_string(),
                schema.game_id(g).to_string(),
                g.to_string(),
                self.gamma[n].to_string(),
                self.a[n].to_string(),
                self.b[n].to_string(),
                self.h[n].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `(ln a_n, ln b_n)` for one game. Each vote contributes a single factor,
/// so `0 ln 0` never arises.
fn log_factors(entries: &[(usize, u8)], rel: &AnnotatorReliability) -> (f64, f64) {
    let (mut la, mut lb) = (0.0, 0.0);
    for &(p, y) in entries {
        let (al, be) = (rel.alpha[p], rel.beta[p]);
        if y == 1 {
            la += al.ln();
            lb += (1.0 - be).ln();
        } else {
            la += (1.0 - al).ln();
            lb += be.ln();
        }
    }
    (la, lb)
}

fn check_inputs(surveys: &SurveyMatrix, rel: &AnnotatorReliability, prior: &[f64]) -> Result<()> {
    if rel.len() != surveys.player_count() {
        return Err(Error::DimensionMismatch {
            expected: surveys.player_count(),
            found: rel.len(),
        });
    }
    if prior.len() != surveys.game_count() {
        return Err(Error::DimensionMismatch {
            expected: surveys.game_count(),
            found: prior.len(),
        });
    }
    Ok(())
}

/// Posterior `gamma_n = a_n h_n / (a_n h_n + b_n (1 - h_n))` given the prior
/// `h`. A zero denominator leaves `gamma_n = h_n` and records a warning.
pub fn e_step(surveys: &SurveyMatrix, rel: &AnnotatorReliability, prior: &[f64]) -> Result<ConsensusEstimate> {
    check_inputs(surveys, rel, prior)?;
    let per_game: Vec<(f64, f64, f64, Option<String>)> = (0..surveys.game_count())
        .into_par_iter()
        .map(|n| {
            let h = prior[n];
            let (la, lb) = log_factors(surveys.game_entries(n), rel);
            let num = la + h.ln();
            let alt = lb + (1.0 - h).ln();
            let (gamma, warn) = if num == f64::NEG_INFINITY && alt == f64::NEG_INFINITY {
                (h, Some(format!("degenerate posterior for game {n}: gamma set to h")))
            } else {
                (1.0 / (1.0 + (alt - num).exp()), None)
            };
            (gamma.clamp(0.0, 1.0), la.exp(), lb.exp(), warn)
        })
        .collect();
    let mut est = ConsensusEstimate {
        gamma: Vec::with_capacity(per_game.len()),
        a: Vec::with_capacity(per_game.len()),
        b: Vec::with_capacity(per_game.len()),
        h: prior.to_vec(),
        warnings: Vec::new(),
    };
    for (g, a, b, w) in per_game {
        est.gamma.push(g);
        est.a.push(a);
        est.b.push(b);
        if let Some(w) = w {
            log::warn!("{w}");
            est.warnings.push(w);
        }
    }
    Ok(est)
}

/// Re-estimate `(alpha, beta)` from the posteriors. A player whose
/// denominator vanishes keeps the previous value; the returned list names
/// those cases.
pub fn m_step(
    surveys: &SurveyMatrix,
    gamma: &[f64],
    previous: &AnnotatorReliability,
) -> Result<(AnnotatorReliability, Vec<String>)> {
    if gamma.len() != surveys.game_count() {
        return Err(Error::DimensionMismatch {
            expected: surveys.game_count(),
            found: gamma.len(),
        });
    }
    if previous.len() != surveys.player_count() {
        return Err(Error::DimensionMismatch {
            expected: surveys.player_count(),
            found: previous.len(),
        });
    }
    let mut next = previous.clone();
    let mut warnings = Vec::new();
    for p in 0..surveys.player_count() {
        let (mut ga_y, mut ga, mut gb_y, mut gb) = (0.0, 0.0, 0.0, 0.0);
        for &(n, y) in surveys.player_entries(p) {
            let g = gamma[n];
            ga += g;
            gb += 1.0 - g;
            if y == 1 {
                ga_y += g;
            } else {
                gb_y += 1.0 - g;
            }
        }
        if ga > 0.0 {
            next.alpha[p] = ga_y / ga;
        } else if !surveys.player_entries(p).is_empty() {
            warnings.push(format!("player {p}: alpha denominator is zero, kept previous value"));
        }
        if gb > 0.0 {
            next.beta[p] = gb_y / gb;
        } else if !surveys.player_entries(p).is_empty() {
            warnings.push(format!("player {p}: beta denominator is zero, kept previous value"));
        }
    }
    Ok((next, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLikelihood {
    pub value: f64,
    /// True when some game's likelihood was exactly zero; `value` is then the
    /// sentinel.
    pub infinite: bool,
}

/// `sum_n ln(a_n h_n + b_n (1 - h_n))`, evaluated with log-sum-exp.
pub fn log_likelihood(surveys: &SurveyMatrix, rel: &AnnotatorReliability, prior: &[f64]) -> Result<LogLikelihood> {
    check_inputs(surveys, rel, prior)?;
    let mut total = 0.0;
    for (n, &h) in prior.iter().enumerate() {
        let (la, lb) = log_factors(surveys.game_entries(n), rel);
        let x = la + h.ln();
        let y = lb + (1.0 - h).ln();
        let m = x.max(y);
        if m == f64::NEG_INFINITY {
            return Ok(LogLikelihood {
                value: LOG_LIKELIHOOD_SENTINEL,
                infinite: true,
            });
        }
        total += m + ((x - m).exp() + (y - m).exp()).ln();
    }
    Ok(LogLikelihood {
        value: total,
        infinite: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_epochs: usize,
    pub tol: f64,
    /// Refit the regressor on `gamma` after every M-step.
    pub refit: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            tol: 1e-5,
            refit: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub log_likelihood: f64,
    pub infinite: bool,
}

/// Trained Crowd-EM state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpeModel {
    pub schema: ContentSchema,
    pub games: Vec<ContentVector>,
    pub consensus: ConsensusEstimate,
    pub reliability: AnnotatorReliability,
    pub regressor: TrainedRegressor,
    pub epochs: Vec<EpochRecord>,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl Artifact for GpeModel {
    const KIND: ArtifactKind = ArtifactKind::Gpe;
}

impl GpeModel {
    pub fn write_epochs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "log_likelihood", "infinite"])?;
        for e in &self.epochs {
            w.write_record([e.epoch.to_string(), e.log_likelihood.to_string(), u8::from(e.infinite).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn predict_popularity(&self, g: &ContentVector) -> Result<f64> {
        predict_popularity(&self.regressor, &self.schema, g)
    }
}

/// Predicted consensus of an unseen game.
pub fn predict_popularity(regressor: &TrainedRegressor, schema: &ContentSchema, g: &ContentVector) -> Result<f64> {
    schema.validate(g)?;
    regressor.predict(&schema.normalize(g))
}

fn fit_prior(inputs: &[Vec<f64>], targets: &[f64], cfg: KrrConfig) -> Result<(TrainedRegressor, Vec<f64>)> {
    let data = Dataset::regression(inputs.to_vec(), targets.to_vec())?;
    let reg = TrainedRegressor::fit(&data, cfg)?;
    let h = inputs.iter().map(|x| reg.predict(x)).collect::<Result<Vec<_>>>()?;
    Ok((reg, h))
}

/// The full Crowd-EM loop.
///
/// `alpha = beta = 0.5` and `gamma(0)` = per-game vote mean; the regressor
/// is pre-trained on `gamma(0)`. Each epoch runs E-step, M-step (clamped),
/// and optionally a regressor refit, then evaluates the log-likelihood;
/// iteration stops once it changes by at most `tol`.
pub fn crowd_em(surveys: &SurveyMatrix, schema: &ContentSchema, krr: KrrConfig, config: &EmConfig) -> Result<GpeModel> {
    if surveys.game_count() == 0 {
        return Err(Error::DegenerateData("no beta games".into()));
    }
    if let Some(n) = (0..surveys.game_count()).find(|&n| surveys.players_per_game(n) == 0) {
        return Err(Error::DegenerateData(format!("beta game {n} has no survey entries")));
    }
    let inputs: Vec<Vec<f64>> = surveys.games().iter().map(|g| schema.normalize(g)).collect();
    let mut rel = AnnotatorReliability::uniform(surveys.player_count(), 0.5);
    let (mut regressor, mut h) = fit_prior(&inputs, &surveys.vote_means(), krr)?;
    let mut warnings = Vec::new();
    let mut epochs = Vec::new();
    let mut prev = log_likelihood(surveys, &rel, &h)?;
    let mut consensus = e_step(surveys, &rel, &h)?;
    let mut converged = false;
    for epoch in 1..=config.max_epochs {
        consensus = e_step(surveys, &rel, &h)?;
        warnings.extend(consensus.warnings.iter().cloned());
        let (mut next, w) = m_step(surveys, &consensus.gamma, &rel)?;
        warnings.extend(w);
        next.clamp();
        rel = next;
        if config.refit {
            let (r, hh) = fit_prior(&inputs, &consensus.gamma, krr)?;
            regressor = r;
            h = hh;
        }
        let ll = log_likelihood(surveys, &rel, &h)?;
        epochs.push(EpochRecord {
            epoch,
            log_likelihood: ll.value,
            infinite: ll.infinite,
        });
        if config.refit && ll.value < prev.value - 1e-6 {
            let msg = format!("epoch {epoch}: log-likelihood decreased by {}", prev.value - ll.value);
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let delta = (ll.value - prev.value).abs();
        prev = ll;
        if delta <= config.tol {
            converged = true;
            break;
        }
    }
    Ok(GpeModel {
        schema: schema.clone(),
        games: surveys.games().to_vec(),
        consensus,
        reliability: rel,
        regressor,
        epochs,
        converged,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(games: usize, players: usize, entries: &[(usize, usize, u8)]) -> SurveyMatrix {
        let g = (0..games).map(|i| ContentVector::new(vec![i as u32])).collect();
        SurveyMatrix::new(g, players, entries).unwrap()
    }

    #[test]
    fn uninformative_annotator_returns_prior() {
        let s = matrix(1, 1, &[(0, 0, 1)]);
        let r = AnnotatorReliability::uniform(1, 0.5);
        let e = e_step(&s, &r, &[0.3]).unwrap();
        assert!((e.a[0] - 0.5).abs() < 1e-15 && (e.b[0] - 0.5).abs() < 1e-15);
        assert!((e.gamma[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn two_confident_voters() {
        let s = matrix(1, 2, &[(0, 0, 1), (0, 1, 1)]);
        let r = AnnotatorReliability::uniform(2, 0.9);
        let e = e_step(&s, &r, &[0.5]).unwrap();
        let expect = 0.81 * 0.5 / (0.81 * 0.5 + 0.01 * 0.5);
        assert!((e.gamma[0] - expect).abs() < 1e-12);
        assert!((e.gamma[0] - 0.9878).abs() < 1e-4);
    }

    #[test]
    fn perfect_annotator_forces_posterior() {
        let s = matrix(1, 1, &[(0, 0, 0)]);
        let r = AnnotatorReliability::uniform(1, 1.0);
        let e = e_step(&s, &r, &[0.7]).unwrap();
        assert_eq!(e.gamma[0], 0.0);
        assert!(e.warnings.is_empty());
    }

    #[test]
    fn zero_denominator_falls_back_to_prior() {
        // alpha = 1 with a 0 vote kills a; beta = 0 with a 0 vote kills b.
        let s = matrix(1, 1, &[(0, 0, 0)]);
        let r = AnnotatorReliability {
            alpha: vec![1.0],
            beta: vec![0.0],
        };
        let e = e_step(&s, &r, &[0.4]).unwrap();
        assert_eq!(e.gamma[0], 0.4);
        assert_eq!(e.warnings.len(), 1);
        let ll = log_likelihood(&s, &r, &[0.4]).unwrap();
        assert!(ll.infinite);
        assert_eq!(ll.value, LOG_LIKELIHOOD_SENTINEL);
    }

    #[test]
    fn m_step_examples() {
        let s = matrix(2, 1, &[(0, 0, 1), (1, 0, 1)]);
        let prev = AnnotatorReliability::uniform(1, 0.5);
        let (r, w) = m_step(&s, &[1.0, 1.0], &prev).unwrap();
        assert_eq!(r.alpha[0], 1.0);
        assert_eq!(r.beta[0], 0.5);
        assert_eq!(w.len(), 1);
        let (r, _) = m_step(&s, &[1.0, 0.0], &prev).unwrap();
        assert_eq!((r.alpha[0], r.beta[0]), (1.0, 0.0));
    }

    #[test]
    fn likelihood_examples() {
        let s = matrix(2, 2, &[(0, 0, 1), (0, 1, 1), (1, 0, 0)]);
        let perfect = AnnotatorReliability::uniform(2, 1.0);
        let ll = log_likelihood(&s, &perfect, &[1.0, 0.0]).unwrap();
        assert_eq!(ll.value, 0.0);
        let half = AnnotatorReliability::uniform(2, 0.5);
        let ll = log_likelihood(&s, &half, &[0.2, 0.9]).unwrap();
        assert!((ll.value - 3.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn unanimous_votes_reach_the_absorbing_state() {
        let schema = ContentSchema::from_cardinalities(&[5, 5]).unwrap();
        let games: Vec<ContentVector> = crate::content::enumerate_space(&schema).unwrap().take(8).collect();
        let entries: Vec<_> = (0..8).flat_map(|n| (0..3).map(move |p| (n, p, 1u8))).collect();
        let s = SurveyMatrix::new(games, 3, &entries).unwrap();
        let m = crowd_em(&s, &schema, KrrConfig::default(), &EmConfig::default()).unwrap();
        assert!(m.epochs.len() <= 2, "{:?}", m.epochs);
        for &g in &m.consensus.gamma {
            // Ridge shrinkage keeps the regressor prior a hair under 1.
            assert!(g > 0.99, "{g}");
        }
        for &a in &m.reliability.alpha {
            assert!(a >= 1.0 - 1e-5);
        }
    }

    #[test]
    fn popularity_is_clamped_and_constant_for_constant_gamma() {
        let schema = ContentSchema::from_cardinalities(&[4, 4]).unwrap();
        let games: Vec<ContentVector> = crate::content::enumerate_space(&schema).unwrap().collect();
        let x: Vec<Vec<f64>> = games.iter().map(|g| schema.normalize(g)).collect();
        let d = Dataset::regression(x, vec![0.4; games.len()]).unwrap();
        let reg = TrainedRegressor::fit(&d, KrrConfig { bandwidth: 0.5, ridge: 1e-9 }).unwrap();
        for g in &games {
            let p = predict_popularity(&reg, &schema, g).unwrap();
            assert!((p - 0.4).abs() < 1e-4);
        }
    }

    fn instance() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, u8)>, Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1usize..=4, 1usize..=3).prop_flat_map(|(n, p)| {
            (
                Just(n),
                Just(p),
                proptest::collection::vec(proptest::option::of(0u8..=1), n * p),
                proptest::collection::vec(0.01f64..0.99, p),
                proptest::collection::vec(0.01f64..0.99, p),
                proptest::collection::vec(0.01f64..0.99, n),
            )
                .prop_map(|(n, p, cells, al, be, h)| {
                    let entries = cells
                        .iter()
                        .enumerate()
                        .filter_map(|(i, c)| c.map(|y| (i / p, i % p, y)))
                        .collect();
                    (n, p, entries, al, be, h)
                })
        })
    }

    proptest! {
        #[test]
        fn label_symmetry((n, p, entries, al, be, h) in instance()) {
            let s = matrix(n, p, &entries);
            let flipped: Vec<_> = entries.iter().map(|&(a, b, y)| (a, b, 1 - y)).collect();
            let sf = matrix(n, p, &flipped);
            let r = AnnotatorReliability { alpha: al.clone(), beta: be.clone() };
            let rf = AnnotatorReliability { alpha: be, beta: al };
            let hf: Vec<f64> = h.iter().map(|v| 1.0 - v).collect();
            let g = e_step(&s, &r, &h).unwrap().gamma;
            let gf = e_step(&sf, &rf, &hf).unwrap().gamma;
            for (x, y) in g.iter().zip(&gf) {
                prop_assert!((x - (1.0 - y)).abs() < 1e-12);
            }
        }

        #[test]
        fn frozen_prior_em_is_monotone((n, p, entries, _al, _be, h) in instance()) {
            let s = matrix(n, p, &entries);
            let mut r = AnnotatorReliability::uniform(p, 0.5);
            let mut prev = log_likelihood(&s, &r, &h).unwrap().value;
            for _ in 0..10 {
                let e = e_step(&s, &r, &h).unwrap();
                let (mut next, _) = m_step(&s, &e.gamma, &r).unwrap();
                next.clamp();
                r = next;
                let ll = log_likelihood(&s, &r, &h).unwrap().value;
                prop_assert!(ll >= prev - 1e-12 * prev.abs().max(1.0), "{prev} -> {ll}");
                prev = ll;
            }
        }
    }
}
