//! The controller against a from-scratch reference of its transition rules,
//! driven by arbitrary decision sequences.

use lbpcg::cc::CategorizedSubspace;
use lbpcg::content::{ContentSchema, ContentSubspace, ContentVector, SubspaceTag};
use lbpcg::ip::{IpAssets, IpConfig, IpState, PlayerSession};
use lbpcg::learners::Classifier;
use lbpcg::pdc::{Decision, PreferenceEnsemble};
use lbpcg::Result;
use proptest::prelude::*;
use std::collections::BTreeSet;

const CATS: usize = 5;

/// Scores the first play-log attribute as-is.
struct Passthrough;

impl Classifier for Passthrough {
    fn input_dim(&self) -> usize {
        1 + CATS
    }
    fn positive_score(&self, x: &[f64]) -> Result<f64> {
        Ok(x[0])
    }
}

fn ensemble() -> PreferenceEnsemble<Passthrough> {
    PreferenceEnsemble {
        members: vec![Some(Passthrough)],
        accuracies: vec![1.0],
        weights: vec![1.0],
        thresholds: vec![(0.0, 0.0)],
        theta_c: 0.5,
        theta_r: 0.2,
        playlog_width: 1,
        category_sizes: vec![CATS],
    }
}

fn assets() -> IpAssets {
    let schema = ContentSchema::from_cardinalities(&[CATS as u32, 400]).unwrap();
    let beta: Vec<ContentVector> = (0..CATS as u32)
        .flat_map(|c| (0..40u32).map(move |j| ContentVector::new(vec![c, j])))
        .collect();
    let cats: Vec<usize> = beta.iter().map(|g| g.values()[0] as usize).collect();
    let gamma: Vec<f64> = beta.iter().map(|g| 1.0 - g.values()[1] as f64 / 400.0).collect();
    let ac: Vec<ContentVector> = (0..CATS as u32)
        .flat_map(|c| (40..400u32).map(move |j| ContentVector::new(vec![c, j])))
        .collect();
    let confident = CategorizedSubspace {
        categories: ac.iter().map(|g| g.values()[0] as usize).collect(),
        confidences: vec![1.0; ac.len()],
        subspace: ContentSubspace::new(schema, SubspaceTag::ConfidentAcceptable, ac.clone()).unwrap(),
    };
    let pred = (0..ac.len()).map(|i| (i % 17) as f64 / 17.0).collect();
    IpAssets::new(CATS, &beta, &cats, &gamma, confident, pred).unwrap()
}

/// Independent statement of the rules over `(category, decision)` history.
struct Reference {
    cfg: IpConfig,
    state: IpState,
    phase: Vec<(usize, Decision)>,
    attempts: usize,
}

impl Reference {
    fn k_of_w(&self) -> Option<usize> {
        let mut best: Option<(usize, usize)> = None;
        for c in 0..CATS {
            let last: Vec<Decision> = self
                .phase
                .iter()
                .filter(|(cc, _)| *cc == c)
                .map(|(_, d)| *d)
                .collect();
            let window = &last[last.len().saturating_sub(self.cfg.window)..];
            let pos = window.iter().filter(|d| **d == Decision::Positive).count();
            let neg = window.iter().filter(|d| **d == Decision::Negative).count();
            if neg == 0 && pos >= self.cfg.consistency && best.map_or(true, |(_, p)| pos > p) {
                best = Some((c, pos));
            }
        }
        best.map(|b| b.0)
    }

    fn step(&mut self, c: usize, d: Decision) -> IpState {
        self.phase.push((c, d));
        let next = match self.state {
            IpState::Categorize => {
                self.attempts += 1;
                if let Some(c) = self.k_of_w() {
                    IpState::Produce(c)
                } else if self.attempts >= self.cfg.budget {
                    IpState::Generalize
                } else {
                    IpState::Categorize
                }
            }
            IpState::Produce(c) => {
                let informative: Vec<Decision> =
                    self.phase.iter().map(|p| p.1).filter(|d| *d != Decision::Rejected).collect();
                let run = &informative[informative.len().saturating_sub(self.cfg.drift_run)..];
                if run.len() == self.cfg.drift_run && run.iter().all(|d| *d == Decision::Negative) {
                    IpState::Categorize
                } else {
                    IpState::Produce(c)
                }
            }
            IpState::Generalize => self.k_of_w().map_or(IpState::Generalize, IpState::Produce),
        };
        if next != self.state {
            self.phase.clear();
            if next == IpState::Categorize {
                self.attempts = 0;
            }
        }
        self.state = next;
        next
    }
}

fn score_of(code: u8) -> f64 {
    match code {
        0 => 0.9,
        1 => 0.1,
        _ => 0.5,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn matches_reference(codes in proptest::collection::vec(0u8..3, 1..80), seed in 0u64..1000) {
        let a = assets();
        let cfg = IpConfig::default();
        let ens = ensemble();
        let mut s = PlayerSession::new(seed);
        let mut r = Reference { cfg, state: IpState::Categorize, phase: Vec::new(), attempts: 0 };
        let mut beta_seen = BTreeSet::new();
        let mut phase_seen = BTreeSet::new();
        for code in codes {
            let before = s.state;
            let g = s.next_game(&a, &cfg).unwrap();
            let c = s.pending().unwrap().1;
            match before {
                IpState::Categorize => prop_assert!(beta_seen.insert(g.clone()), "beta game repeated"),
                IpState::Produce(pc) => {
                    prop_assert_eq!(c, pc);
                    prop_assert!(phase_seen.insert(g.clone()), "game repeated within a phase");
                }
                IpState::Generalize => prop_assert!(phase_seen.insert(g.clone()), "game repeated within a phase"),
            }
            let e = s.observe(&[score_of(code)], &ens, &cfg, CATS).unwrap().clone();
            let expected = r.step(c, e.decision);
            prop_assert_eq!(e.state_after, expected);
            prop_assert_eq!(s.state, expected);
            if expected != before {
                phase_seen.clear();
            }
        }
    }
}

#[test]
fn rejections_alone_reach_generalize_at_the_budget() {
    let a = assets();
    let cfg = IpConfig::default();
    let mut s = PlayerSession::new(3);
    for i in 0..cfg.budget {
        s.next_game(&a, &cfg).unwrap();
        let e = s.observe(&[0.5], &ensemble(), &cfg, CATS).unwrap();
        let want = if i + 1 == cfg.budget { IpState::Generalize } else { IpState::Categorize };
        assert_eq!(e.state_after, want);
    }
}
