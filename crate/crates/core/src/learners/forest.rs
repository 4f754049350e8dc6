use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, Classifier, Dataset, Trainer};
use crate::artifact::{Artifact, ArtifactKind};
use crate::error::{Error, Result};
use crate::rng::derived_rng;

/// Random forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Candidate features per split; 0 means `ceil(sqrt(width))`.
    pub features_per_split: usize,
    /// Draw a bootstrap sample per tree (otherwise every tree sees all rows).
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 12,
            min_leaf: 1,
            features_per_split: 0,
            bootstrap: true,
        }
    }
}

impl ForestConfig {
    fn validate(&self) -> Result<()> {
        if self.trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::InvalidParameter(
                "forest needs trees, max_depth and min_leaf >= 1".into(),
            ));
        }
        Ok(())
    }

    fn mtry(&self, width: usize) -> usize {
        let m = if self.features_per_split == 0 {
            (width as f64).sqrt().ceil() as usize
        } else {
            self.features_per_split
        };
        m.clamp(1, width.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        label: u8,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn vote(&self, x: &[f64]) -> u8 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[*feature as usize] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }
}

/// Bagged Gini-impurity decision trees. Confidence is the vote fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub config: ForestConfig,
    pub seed: u64,
    pub fingerprint: u64,
    width: usize,
    trees: Vec<Tree>,
}

impl Artifact for RandomForest {
    const KIND: ArtifactKind = ArtifactKind::Forest;
}

impl RandomForest {
    /// Train on classification data containing both classes. Tree `t` draws
    /// from the stream derived from `(seed, t)`, so parallel training is
    /// bit-identical to sequential training.
    pub fn train(data: &Dataset, config: ForestConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (neg, pos) = data.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::DegenerateData(format!(
                "forest needs both classes ({neg} negative, {pos} positive)"
            )));
        }
        let width = data.width();
        let trees = (0..config.trees)
            .into_par_iter()
            .map(|t| grow_tree(data, &config, seed, t as u64))
            .collect();
        Ok(Self {
            config,
            seed,
            fingerprint: data.fingerprint(),
            width,
            trees,
        })
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    /// Number of trees voting 1.
    pub fn positive_votes(&self, x: &[f64]) -> Result<usize> {
        check_dim(self.width, x)?;
        Ok(self.trees.iter().filter(|t| t.vote(x) == 1).count())
    }
}

impl Classifier for RandomForest {
    fn input_dim(&self) -> usize {
        self.width
    }

    fn positive_score(&self, x: &[f64]) -> Result<f64> {
        Ok(self.positive_votes(x)? as f64 / self.trees.len() as f64)
    }
}

impl Trainer for ForestConfig {
    type Model = RandomForest;

    fn fit(&self, data: &Dataset, seed: u64) -> Result<RandomForest> {
        RandomForest::train(data, *self, seed)
    }
}

struct Pending {
    node: usize,
    rows: Vec<usize>,
    depth: usize,
}

fn grow_tree(data: &Dataset, config: &ForestConfig, seed: u64, index: u64) -> Tree {
    let mut rng = derived_rng(seed, index);
    let n = data.len();
    let rows: Vec<usize> = if config.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let width = data.width();
    let mtry = config.mtry(width);
    let mut features: Vec<usize> = (0..width).collect();

    let mut nodes = vec![Node::Leaf { label: 0 }];
    let mut stack = vec![Pending {
        node: 0,
        rows,
        depth: 0,
    }];
    while let Some(Pending { node, rows, depth }) = stack.pop() {
        let pos = rows.iter().filter(|&&r| data.label(r) == 1).count();
        let label = u8::from(2 * pos >= rows.len());
        let pure = pos == 0 || pos == rows.len();
        if pure || depth >= config.max_depth || rows.len() < 2 * config.min_leaf {
            nodes[node] = Node::Leaf { label };
            continue;
        }
        features.partial_shuffle(&mut rng, mtry);
        let best = features[..mtry]
            .iter()
            .filter_map(|&f| best_split(data, &rows, f, config.min_leaf))
            .fold(None::<SplitChoice>, |acc, s| match acc {
                Some(a) if a.impurity <= s.impurity => Some(a),
                _ => Some(s),
            });
        let Some(split) = best else {
            nodes[node] = Node::Leaf { label };
            continue;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| data.inputs()[r][split.feature] <= split.threshold);
        let left = nodes.len();
        nodes.push(Node::Leaf { label: 0 });
        let right = nodes.len();
        nodes.push(Node::Leaf { label: 0 });
        nodes[node] = Node::Split {
            feature: split.feature as u32,
            threshold: split.threshold,
            left: left as u32,
            right: right as u32,
        };
        stack.push(Pending {
            node: right,
            rows: right_rows,
            depth: depth + 1,
        });
        stack.push(Pending {
            node: left,
            rows: left_rows,
            depth: depth + 1,
        });
    }
    Tree { nodes }
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    feature: usize,
    threshold: f64,
    /// Size-weighted Gini impurity of the two children.
    impurity: f64,
}

fn gini_mass(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    // n * gini = n * 2p(1-p)
    2.0 * n as f64 * p * (1.0 - p)
}

/// Lowest-impurity threshold on feature `f` leaving `min_leaf` rows on each
/// side. Zero-gain splits are allowed (XOR-style layouts need them).
fn best_split(data: &Dataset, rows: &[usize], f: usize, min_leaf: usize) -> Option<SplitChoice> {
    let mut vals: Vec<(f64, u8)> = rows
        .iter()
        .map(|&r| (data.inputs()[r][f], data.label(r)))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = vals.len();
    let total_pos = vals.iter().filter(|v| v.1 == 1).count();
    let mut left_pos = 0usize;
    let mut best: Option<SplitChoice> = None;
    for i in 0..n - 1 {
        left_pos += vals[i].1 as usize;
        let left_n = i + 1;
        if vals[i].0 == vals[i + 1].0 || left_n < min_leaf || n - left_n < min_leaf {
            continue;
        }
        let impurity = gini_mass(left_pos, left_n) + gini_mass(total_pos - left_pos, n - left_n);
        if best.map_or(true, |b| impurity < b.impurity) {
            best = Some(SplitChoice {
                feature: f,
                threshold: 0.5 * (vals[i].0 + vals[i + 1].0),
                impurity,
            });
        }
    }
    best
}
