//! Statistical checks of the simulated world and of the random baseline.

use lbpcg::content::{enumerate_space, ContentSchema, ContentVector};
use lbpcg::gpe::{crowd_em, EmConfig, SurveyMatrix};
use lbpcg::harness::baseline_random;
use lbpcg::learners::KrrConfig;
use lbpcg::rng::{derive_seed, derived_rng};
use lbpcg::simworld::{
    generate_beta_cohort, play, CohortConfig, EnjoymentModel, FlipMode, ReliabilityDistribution, SimulatedPlayer,
    WorldModel,
};

fn world() -> WorldModel {
    WorldModel::generate(&ContentSchema::default_schema(), 2014).unwrap()
}

/// `counts[truth][reported]` over `n` plays of random games.
fn contingency(world: &WorldModel, player: &SimulatedPlayer, n: usize, seed: u64) -> [[f64; 2]; 2] {
    let mut rng = derived_rng(seed, 0);
    let mut m = [[0.0; 2]; 2];
    for i in 0..n {
        let g = world.schema.sample(&mut rng);
        let o = play(world, player, &g, derive_seed(seed, i as u64 + 1));
        m[o.true_enjoyment as usize][o.reported as usize] += 1.0;
    }
    m
}

#[test]
fn coin_flip_reports_are_independent_of_enjoyment() {
    let w = world();
    let player = SimulatedPlayer::new(0.5, vec![1, 2, 3], 0.5, 0.5, 0.3).unwrap();
    let m = contingency(&w, &player, 2000, 5);
    let n: f64 = m.iter().flatten().sum();
    let rows = [m[0][0] + m[0][1], m[1][0] + m[1][1]];
    let cols = [m[0][0] + m[1][0], m[0][1] + m[1][1]];
    assert!(rows.iter().all(|&r| r > 100.0), "both enjoyment classes needed: {m:?}");
    let mut chi2 = 0.0;
    for t in 0..2 {
        for r in 0..2 {
            let e = rows[t] * cols[r] / n;
            chi2 += (m[t][r] - e).powi(2) / e;
        }
    }
    // 1 degree of freedom, p = 0.01.
    assert!(chi2 < 6.635, "chi2 = {chi2}");
}

#[test]
fn bernoulli_flip_rates_match_the_plant() {
    let w = world();
    let player = SimulatedPlayer::new(0.5, vec![1, 2, 3], 0.8, 0.7, 0.3).unwrap();
    let m = contingency(&w, &player, 10_000, 9);
    let alpha = m[1][1] / (m[1][0] + m[1][1]);
    let beta = m[0][0] / (m[0][0] + m[0][1]);
    assert!((alpha - 0.8).abs() <= 0.02, "alpha {alpha}");
    assert!((beta - 0.7).abs() <= 0.02, "beta {beta}");
}

#[test]
fn perfect_annotators_on_a_consensus_world_give_exact_consensus() {
    let w = world();
    let games = w.schema.sample_distinct(40, &mut derived_rng(3, 0)).unwrap();
    let cats: Vec<usize> = games.iter().map(|g| w.difficulty(g)).collect();
    let cfg = CohortConfig {
        players: 12,
        mean_plays: 20.0,
        min_plays: 15,
        reliability: ReliabilityDistribution {
            low: 1.0,
            high: 1.0,
            outlier_fraction: 0.0,
            ..ReliabilityDistribution::default()
        },
        enjoyment: EnjoymentModel::Consensus,
        flip_mode: FlipMode::Bernoulli,
        ..CohortConfig::default()
    };
    let cohort = generate_beta_cohort(&w, &games, &cats, &cfg, 11).unwrap();
    let m = SurveyMatrix::from_records(games.clone(), cohort.player_count(), &cohort.records, |_| true).unwrap();
    let model = crowd_em(&m, &w.schema, KrrConfig::default(), &EmConfig::default()).unwrap();
    for (g, gamma) in games.iter().zip(&model.consensus.gamma) {
        let truth = w.public_appeal(g);
        assert_eq!(*gamma > 0.99, truth, "{g}: gamma {gamma}");
        assert_eq!(*gamma < 0.01, !truth, "{g}: gamma {gamma}");
    }
}

#[test]
fn random_baseline_is_unfiltered() {
    let w = world();
    let space: Vec<ContentVector> = enumerate_space(&w.schema).unwrap().collect();
    let base = space.iter().filter(|g| w.acceptability(g).is_acceptable()).count() as f64 / space.len() as f64;
    let n = 5000;
    let picked = baseline_random(&w.schema, n, 21);
    let rate = picked.iter().filter(|g| w.acceptability(g).is_acceptable()).count() as f64 / n as f64;
    // Three binomial standard deviations.
    let tol = 3.0 * (base * (1.0 - base) / n as f64).sqrt();
    assert!((rate - base).abs() <= tol, "rate {rate} vs base {base} (tol {tol})");
}
