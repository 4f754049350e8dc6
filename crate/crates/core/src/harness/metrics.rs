//! Scoring of served games against each player's pooled feedback, and the
//! two comparison selectors.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::content::{ContentSchema, ContentVector};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Played games with their scoring category and the reported feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedGame {
    pub game: ContentVector,
    pub category: usize,
    pub feedback: u8,
}

/// Per-category preference rates of one player. Categories the player never
/// saw have `rate = None` and contribute 0 to every score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRates {
    pub played: Vec<usize>,
    pub enjoyed: Vec<usize>,
    pub rate: Vec<Option<f64>>,
}

impl PreferenceRates {
    /// ρ_{p,c} = N^E_{p,c} / N_{p,c} over everything the player played.
    pub fn from_feedback<'a>(games: impl IntoIterator<Item = &'a ServedGame>, categories: usize) -> Result<Self> {
        let mut played = vec![0usize; categories];
        let mut enjoyed = vec![0usize; categories];
        for s in games {
            if s.category >= categories {
                return Err(Error::InvalidParameter(format!("category {} out of range", s.category)));
            }
            played[s.category] += 1;
            enjoyed[s.category] += usize::from(s.feedback == 1);
        }
        let rate = played
            .iter()
            .zip(&enjoyed)
            .map(|(&n, &e)| (n > 0).then(|| e as f64 / n as f64))
            .collect();
        Ok(Self { played, enjoyed, rate })
    }

    pub fn unseen(&self) -> Vec<usize> {
        (0..self.rate.len()).filter(|&c| self.rate[c].is_none()).collect()
    }
}

/// N_{m,p,c}: games per category served by one model.
pub fn category_counts(games: &[ServedGame], categories: usize) -> Vec<usize> {
    let mut n = vec![0usize; categories];
    for s in games {
        n[s.category] += 1;
    }
    n
}

/// S_{m,p} = Σ_c ρ_{p,c} N_{m,p,c}.
pub fn score(rates: &PreferenceRates, served: &[usize]) -> f64 {
    rates
        .rate
        .iter()
        .zip(served)
        .map(|(r, &n)| r.unwrap_or(0.0) * n as f64)
        .sum()
}

/// `n` beta games spread evenly over the categories (remainder to the lowest
/// categories), drawn without replacement within each category and
/// interleaved round-robin. A category with too few games contributes all
/// it has.
pub fn baseline_balanced(
    beta_games: &[ContentVector],
    beta_categories: &[usize],
    categories: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<(ContentVector, usize)>> {
    if beta_games.len() != beta_categories.len() {
        return Err(Error::DimensionMismatch {
            expected: beta_games.len(),
            found: beta_categories.len(),
        });
    }
    if categories == 0 {
        return Err(Error::InvalidParameter("no categories".into()));
    }
    let mut per: Vec<Vec<&ContentVector>> = vec![Vec::new(); categories];
    for (g, &c) in beta_games.iter().zip(beta_categories) {
        per.get_mut(c)
            .ok_or_else(|| Error::InvalidParameter(format!("beta category {c} out of range")))?
            .push(g);
    }
    let mut picks: Vec<Vec<&ContentVector>> = Vec::with_capacity(categories);
    for (c, mut group) in per.into_iter().enumerate() {
        let want = n / categories + usize::from(c < n % categories);
        group.shuffle(&mut derived_rng(seed, c as u64));
        group.truncate(want);
        picks.push(group);
    }
    let mut out = Vec::with_capacity(n);
    for round in 0.. {
        let before = out.len();
        for (c, group) in picks.iter().enumerate() {
            if let Some(g) = group.get(round) {
                out.push(((*g).clone(), c));
            }
        }
        if out.len() == before {
            break;
        }
    }
    Ok(out)
}

/// `n` uniform draws over the whole schema, with no filtering at all.
pub fn baseline_random(schema: &ContentSchema, n: usize, seed: u64) -> Vec<ContentVector> {
    let mut rng = derived_rng(seed, 0);
    (0..n).map(|_| schema.sample(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn served(cats: &[(usize, u8)]) -> Vec<ServedGame> {
        cats.iter()
            .map(|&(c, y)| ServedGame {
                game: ContentVector::new(vec![c as u32]),
                category: c,
                feedback: y,
            })
            .collect()
    }

    #[test]
    fn worked_score() {
        let rates = PreferenceRates {
            played: vec![2, 2, 1, 0, 0],
            enjoyed: vec![2, 1, 0, 0, 0],
            rate: vec![Some(1.0), Some(0.5), Some(0.0), None, None],
        };
        assert_eq!(score(&rates, &[4, 4, 2, 0, 0]), 6.0);
    }

    #[test]
    fn enjoy_everything_scores_the_model_length() {
        let games = served(&[(0, 1), (1, 1), (2, 1), (3, 1), (4, 1), (0, 1), (1, 1), (2, 1), (3, 1), (4, 1)]);
        let rates = PreferenceRates::from_feedback(&games, 5).unwrap();
        assert!(rates.rate.iter().all(|r| *r == Some(1.0)));
        assert_eq!(score(&rates, &category_counts(&games, 5)), 10.0);
    }

    #[test]
    fn unseen_categories_are_flagged_and_score_zero() {
        let games = served(&[(0, 1), (0, 0)]);
        let rates = PreferenceRates::from_feedback(&games, 3).unwrap();
        assert_eq!(rates.unseen(), vec![1, 2]);
        assert_eq!(score(&rates, &[0, 5, 5]), 0.0);
    }

    #[test]
    fn score_ignores_play_order() {
        let mut games = served(&[(0, 1), (1, 0), (1, 1), (2, 0), (0, 1)]);
        let a = score(&PreferenceRates::from_feedback(&games, 3).unwrap(), &category_counts(&games, 3));
        games.reverse();
        let b = score(&PreferenceRates::from_feedback(&games, 3).unwrap(), &category_counts(&games, 3));
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_splits_evenly() {
        let games: Vec<ContentVector> = (0..25u32).map(|i| ContentVector::new(vec![i])).collect();
        let cats: Vec<usize> = (0..25).map(|i| i % 5).collect();
        let out = baseline_balanced(&games, &cats, 5, 10, 1).unwrap();
        assert_eq!(out.len(), 10);
        let mut per = [0; 5];
        for (g, c) in &out {
            assert_eq!(g.values()[0] as usize % 5, *c);
            per[*c] += 1;
        }
        assert_eq!(per, [2; 5]);
        let out = baseline_balanced(&games, &cats, 5, 7, 1).unwrap();
        let per: Vec<usize> = (0..5).map(|c| out.iter().filter(|(_, k)| *k == c).count()).collect();
        assert_eq!(per, vec![2, 2, 1, 1, 1]);
        assert_eq!(out, baseline_balanced(&games, &cats, 5, 7, 1).unwrap());
    }

    #[test]
    fn random_is_reproducible() {
        let s = ContentSchema::default_schema();
        assert_eq!(baseline_random(&s, 10, 3), baseline_random(&s, 10, 3));
        assert_ne!(baseline_random(&s, 10, 3), baseline_random(&s, 10, 4));
    }
}
