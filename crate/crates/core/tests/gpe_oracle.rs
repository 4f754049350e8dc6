//! Crowd-EM against independent recomputation: brute-force Bayes over every
//! joint labelling for tiny instances, and the M-step from dense counts.

use lbpcg::content::{ContentSchema, ContentVector};
use lbpcg::gpe::{crowd_em, e_step, log_likelihood, m_step, AnnotatorReliability, EmConfig, SurveyMatrix};
use lbpcg::learners::KrrConfig;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Instance {
    games: usize,
    players: usize,
    /// `votes[n][p]`: `None` when player `p` did not survey game `n`.
    votes: Vec<Vec<Option<u8>>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    prior: Vec<f64>,
}

impl Instance {
    fn matrix(&self) -> SurveyMatrix {
        let games = (0..self.games).map(|n| ContentVector::new(vec![n as u32])).collect();
        let mut entries = Vec::new();
        for (n, row) in self.votes.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                if let Some(y) = v {
                    entries.push((n, p, *y));
                }
            }
        }
        SurveyMatrix::new(games, self.players, &entries).unwrap()
    }

    fn reliability(&self) -> AnnotatorReliability {
        AnnotatorReliability {
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
        }
    }

    /// P(votes | z) P(z) for one joint labelling `z` (bit n = label of game n).
    fn joint(&self, z: usize) -> f64 {
        let mut p = 1.0;
        for n in 0..self.games {
            let label = (z >> n) & 1;
            p *= if label == 1 { self.prior[n] } else { 1.0 - self.prior[n] };
            for (q, v) in self.votes[n].iter().enumerate() {
                let Some(y) = v else { continue };
                p *= match (label, y) {
                    (1, 1) => self.alpha[q],
                    (1, _) => 1.0 - self.alpha[q],
                    (_, 0) => self.beta[q],
                    _ => 1.0 - self.beta[q],
                };
            }
        }
        p
    }

    fn brute_force(&self) -> (Vec<f64>, f64) {
        let total: f64 = (0..1usize << self.games).map(|z| self.joint(z)).sum();
        let gamma = (0..self.games)
            .map(|n| {
                (0..1usize << self.games)
                    .filter(|z| (z >> n) & 1 == 1)
                    .map(|z| self.joint(z))
                    .sum::<f64>()
                    / total
            })
            .collect();
        (gamma, total.ln())
    }
}

fn instance() -> impl Strategy<Value = Instance> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(games, players)| {
        (
            proptest::collection::vec(proptest::collection::vec(proptest::option::of(0u8..=1), players), games),
            proptest::collection::vec(0.05f64..0.95, players),
            proptest::collection::vec(0.05f64..0.95, players),
            proptest::collection::vec(0.05f64..0.95, games),
        )
            .prop_map(move |(votes, alpha, beta, prior)| Instance {
                games,
                players,
                votes,
                alpha,
                beta,
                prior,
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn e_step_is_the_exact_posterior(inst in instance()) {
        let est = e_step(&inst.matrix(), &inst.reliability(), &inst.prior).unwrap();
        let (gamma, ll) = inst.brute_force();
        for (a, b) in est.gamma.iter().zip(&gamma) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
        let got = log_likelihood(&inst.matrix(), &inst.reliability(), &inst.prior).unwrap();
        prop_assert!(!got.infinite);
        prop_assert!((got.value - ll).abs() <= 1e-12, "{} vs {ll}", got.value);
    }

    #[test]
    fn m_step_matches_dense_counts(inst in instance(), gamma in proptest::collection::vec(0.0f64..=1.0, 4)) {
        let gamma = &gamma[..inst.games];
        let prev = inst.reliability();
        let (next, _) = m_step(&inst.matrix(), gamma, &prev).unwrap();
        for p in 0..inst.players {
            let (mut num_a, mut den_a, mut num_b, mut den_b) = (0.0, 0.0, 0.0, 0.0);
            for n in 0..inst.games {
                if let Some(y) = inst.votes[n][p] {
                    let y = f64::from(y);
                    num_a += gamma[n] * y;
                    den_a += gamma[n];
                    num_b += (1.0 - gamma[n]) * (1.0 - y);
                    den_b += 1.0 - gamma[n];
                }
            }
            let want_a = if den_a > 0.0 { num_a / den_a } else { prev.alpha[p] };
            let want_b = if den_b > 0.0 { num_b / den_b } else { prev.beta[p] };
            prop_assert!((next.alpha[p] - want_a).abs() <= 1e-12);
            prop_assert!((next.beta[p] - want_b).abs() <= 1e-12);
        }
    }
}

#[test]
fn worked_example() {
    // One game, two players voting (1, 0), alpha = (0.9, 0.6), beta = (0.8, 0.7), h = 0.5:
    // a = 0.9 * 0.4 = 0.36, b = 0.2 * 0.7 = 0.14, gamma = 0.36 / 0.5 = 0.72.
    let inst = Instance {
        games: 1,
        players: 2,
        votes: vec![vec![Some(1), Some(0)]],
        alpha: vec![0.9, 0.6],
        beta: vec![0.8, 0.7],
        prior: vec![0.5],
    };
    let est = e_step(&inst.matrix(), &inst.reliability(), &inst.prior).unwrap();
    assert!((est.gamma[0] - 0.72).abs() < 1e-15);
    assert!((est.a[0] - 0.36).abs() < 1e-15);
    assert!((est.b[0] - 0.14).abs() < 1e-15);
}

#[test]
fn log_likelihood_never_decreases_without_refit() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let schema = ContentSchema::from_cardinalities(&[4, 4, 4]).unwrap();
    let games: Vec<ContentVector> = (0..40).map(|_| schema.sample(&mut rng)).collect();
    let truth: Vec<u8> = (0..40).map(|_| rng.gen_range(0..=1)).collect();
    let mut entries = Vec::new();
    for p in 0..15 {
        let (a, b) = (rng.gen_range(0.6..0.95), rng.gen_range(0.6..0.95));
        for (n, &z) in truth.iter().enumerate() {
            if rng.gen_bool(0.5) {
                let keep = if z == 1 { rng.gen_bool(a) } else { !rng.gen_bool(b) };
                entries.push((n, p, u8::from(keep)));
            }
        }
    }
    let m = SurveyMatrix::new(games, 15, &entries).unwrap();
    let cfg = EmConfig {
        max_epochs: 60,
        tol: 0.0,
        refit: false,
    };
    let model = crowd_em(&m, &schema, KrrConfig::default(), &cfg).unwrap();
    for w in model.epochs.windows(2) {
        assert!(w[1].log_likelihood >= w[0].log_likelihood, "{:?}", model.epochs);
    }
}
