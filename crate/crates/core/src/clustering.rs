//! K-medoids partitioning of content vectors and per-cluster sampling.
//!
//! The solver seeds medoids by greedy farthest-point selection from a random
//! start, alternates nearest-medoid assignment with in-cluster medoid
//! updates until a fixed point, and can finish with a greedy PAM swap phase
//! when the instance is small enough for `O(k n^2)` passes.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{Artifact, ArtifactKind};
use crate::content::{ContentSchema, ContentSubspace, ContentVector, SubspaceTag};
use crate::error::{Error, Result};
use crate::rng::{derived_rng, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMedoidsConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Run the greedy swap phase after the alternating phase converges.
    pub swap: bool,
}

impl KMedoidsConfig {
    pub fn new(k: usize, max_iters: usize) -> Self {
        Self {
            k,
            max_iters,
            swap: false,
        }
    }
}

/// Medoids, the nearest-medoid assignment of every clustered point, and the
/// total assignment cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub schema: ContentSchema,
    points: Vec<ContentVector>,
    medoid_index: Vec<usize>,
    assignment: Vec<usize>,
    pub cost: f64,
    /// Cost after each alternating iteration and each applied swap.
    pub cost_history: Vec<f64>,
}

impl Artifact for ClusterPartition {
    const KIND: ArtifactKind = ArtifactKind::Partition;
}

impl ClusterPartition {
    pub fn k(&self) -> usize {
        self.medoid_index.len()
    }

    pub fn points(&self) -> &[ContentVector] {
        &self.points
    }

    /// Cluster index of each point, aligned with [`ClusterPartition::points`].
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn medoid_indices(&self) -> &[usize] {
        &self.medoid_index
    }

    pub fn medoids(&self) -> Vec<ContentVector> {
        self.medoid_index.iter().map(|&i| self.points[i].clone()).collect()
    }

    /// Point indices belonging to each cluster, in point order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// Nearest medoid of an arbitrary vector (ties to the lowest index).
    pub fn nearest_cluster(&self, g: &ContentVector) -> Result<usize> {
        self.schema.validate(g)?;
        let metric = Metric::new(&self.schema);
        Ok(nearest(&metric, g.values(), self.medoid_index.iter().map(|&m| self.points[m].values())).0)
    }
}

/// Same arithmetic as [`crate::content::distance`], without validation.
struct Metric {
    ranges: Vec<f64>,
}

impl Metric {
    fn new(schema: &ContentSchema) -> Self {
        Self {
            ranges: schema.dims().iter().map(|d| (d.cardinality - 1) as f64).collect(),
        }
    }

    fn dist(&self, a: &[u32], b: &[u32]) -> f64 {
        let sum: f64 = self
            .ranges
            .iter()
            .zip(a.iter().zip(b))
            .map(|(r, (&x, &y))| x.abs_diff(y) as f64 / r)
            .sum();
        sum / self.ranges.len() as f64
    }
}

fn nearest<'a>(metric: &Metric, p: &[u32], medoids: impl Iterator<Item = &'a [u32]>) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (c, m) in medoids.enumerate() {
        let d = metric.dist(p, m);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Partition `points` into `config.k` clusters.
pub fn k_medoids(
    schema: &ContentSchema,
    points: Vec<ContentVector>,
    config: KMedoidsConfig,
    seed: u64,
) -> Result<ClusterPartition> {
    let n = points.len();
    let k = config.k;
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot form {k} clusters from {n} points"
        )));
    }
    for p in &points {
        schema.validate(p)?;
    }
    let metric = Metric::new(schema);
    let mut medoids = farthest_point_seeds(&metric, &points, k, seed);
    let (mut assignment, mut cost) = assign(&metric, &points, &medoids);
    let mut history = vec![cost];

    for _ in 0..config.max_iters {
        let updated = update_medoids(&metric, &points, &medoids, &assignment);
        if updated == medoids {
            break;
        }
        medoids = updated;
        let (a, c) = assign(&metric, &points, &medoids);
        debug_assert!(c <= cost + 1e-9, "cost increased: {cost} -> {c}");
        assignment = a;
        cost = c;
        history.push(cost);
    }

    if config.swap {
        for _ in 0..config.max_iters {
            let Some((slot, candidate)) = best_swap(&metric, &points, &medoids, cost) else {
                break;
            };
            medoids[slot] = candidate;
            let (a, c) = assign(&metric, &points, &medoids);
            debug_assert!(c <= cost + 1e-9);
            assignment = a;
            cost = c;
            history.push(cost);
        }
    }

    Ok(ClusterPartition {
        schema: schema.clone(),
        points,
        medoid_index: medoids,
        assignment,
        cost,
        cost_history: history,
    })
}

fn farthest_point_seeds(metric: &Metric, points: &[ContentVector], k: usize, seed: u64) -> Vec<usize> {
    let n = points.len();
    let mut rng = rng_from(seed);
    let first = rng.gen_range(0..n);
    let mut chosen = vec![first];
    let mut taken = vec![false; n];
    taken[first] = true;
    let mut nearest_d: Vec<f64> = points
        .par_iter()
        .map(|p| metric.dist(p.values(), points[first].values()))
        .collect();
    while chosen.len() < k {
        let mut pick = None::<(usize, f64)>;
        for (i, &d) in nearest_d.iter().enumerate() {
            if !taken[i] && pick.map_or(true, |(_, b)| d > b) {
                pick = Some((i, d));
            }
        }
        let (next, _) = pick.expect("k <= n leaves an untaken point");
        chosen.push(next);
        taken[next] = true;
        let m = points[next].values();
        nearest_d
            .par_iter_mut()
            .zip(points.par_iter())
            .for_each(|(d, p)| *d = d.min(metric.dist(p.values(), m)));
    }
    chosen
}

fn assign(metric: &Metric, points: &[ContentVector], medoids: &[usize]) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = points
        .par_iter()
        .map(|p| nearest(metric, p.values(), medoids.iter().map(|&m| points[m].values())))
        .collect();
    // Sequential sum keeps the reduction order fixed.
    let cost = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), cost)
}

fn update_medoids(
    metric: &Metric,
    points: &[ContentVector],
    medoids: &[usize],
    assignment: &[usize],
) -> Vec<usize> {
    let mut members = vec![Vec::new(); medoids.len()];
    for (i, &c) in assignment.iter().enumerate() {
        members[c].push(i);
    }
    members
        .par_iter()
        .zip(medoids.par_iter())
        .map(|(group, &current)| {
            let within = |cand: usize| -> f64 {
                group
                    .iter()
                    .map(|&j| metric.dist(points[cand].values(), points[j].values()))
                    .sum()
            };
            let mut best = (current, within(current));
            for &cand in group {
                let c = within(cand);
                if c < best.1 - 1e-12 {
                    best = (cand, c);
                }
            }
            best.0
        })
        .collect()
}

/// Swap `(medoid slot, replacement point)` with the largest cost decrease.
fn best_swap(metric: &Metric, points: &[ContentVector], medoids: &[usize], cost: f64) -> Option<(usize, usize)> {
    let n = points.len();
    let mut is_medoid = vec![false; n];
    for &m in medoids {
        is_medoid[m] = true;
    }
    let candidates: Vec<(usize, usize)> = (0..medoids.len())
        .flat_map(|s| (0..n).filter(|&o| !is_medoid[o]).map(move |o| (s, o)))
        .collect();
    let costs: Vec<f64> = candidates
        .par_iter()
        .map(|&(slot, o)| {
            let mut trial = medoids.to_vec();
            trial[slot] = o;
            points
                .iter()
                .map(|p| nearest(metric, p.values(), trial.iter().map(|&m| points[m].values())).1)
                .sum()
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, &c) in costs.iter().enumerate() {
        if c < cost - 1e-12 && best.map_or(true, |(_, b)| c < b) {
            best = Some((i, c));
        }
    }
    best.map(|(i, _)| candidates[i])
}

/// Up to `m` uniformly chosen members per cluster, tagged as the reduced
/// space.
pub fn sample_per_cluster(partition: &ClusterPartition, m: usize, seed: u64) -> Result<ContentSubspace> {
    sample_members(partition, m, seed, SubspaceTag::Reduced, |_| true)
}

/// Like [`sample_per_cluster`], drawing only among members that pass
/// `keep`.
pub fn sample_members(
    partition: &ClusterPartition,
    m: usize,
    seed: u64,
    tag: SubspaceTag,
    keep: impl Fn(&ContentVector) -> bool,
) -> Result<ContentSubspace> {
    if m == 0 {
        return Err(Error::InvalidParameter("per-cluster sample size must be >= 1".into()));
    }
    let mut games = Vec::new();
    for (c, group) in partition.members().into_iter().enumerate() {
        let eligible: Vec<usize> = group.into_iter().filter(|&i| keep(&partition.points[i])).collect();
        let take = m.min(eligible.len());
        let mut rng = derived_rng(seed, c as u64);
        let mut picked: Vec<usize> = index::sample(&mut rng, eligible.len(), take)
            .into_iter()
            .map(|j| eligible[j])
            .collect();
        picked.sort_unstable();
        games.extend(picked.into_iter().map(|i| partition.points[i].clone()));
    }
    ContentSubspace::new(partition.schema.clone(), tag, games)
}

/// One representative (the medoid) per cluster.
pub fn representative_per_cluster(partition: &ClusterPartition) -> Vec<ContentVector> {
    partition.medoids()
}
