//! Gradient-boosted regression trees on the pinball loss, one ensemble per
//! quantile level.
//!
//! Each round fits a least-squares tree to the negative pinball gradient
//! (`tau` above the current fit, `tau - 1` at or below), then replaces every
//! leaf value by the `tau`-quantile of the residuals that fall into it. The
//! ensemble starts from the `tau`-quantile of the targets.

use alloc::vec;
use alloc::vec::Vec;

use super::{validate_levels, TrainConfig, TrainingInfo};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math;

pub const MIN_ROWS: usize = 10;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(_) => return i,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_of(x)] {
            Node::Leaf(v) => v,
            Node::Split { .. } => unreachable!(),
        }
    }
}

/// Column-sorted row order, computed once per fit.
struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    fn new(train: &Dataset) -> Self {
        let d = train.dim();
        let order = (0..d)
            .map(|j| {
                let mut idx: Vec<usize> = (0..train.len()).collect();
                idx.sort_by(|&a, &b| train.row(a)[j].total_cmp(&train.row(b)[j]));
                idx
            })
            .collect();
        Self { order }
    }
}

struct Best {
    feature: usize,
    threshold: f64,
    gain: f64,
}

/// Best least-squares split among the rows with `node_of[row] == node`.
fn best_split(
    train: &Dataset,
    sorted: &Presorted,
    node_of: &[usize],
    node: usize,
    grad: &[f64],
    count: usize,
    total: f64,
) -> Option<Best> {
    let parent = total * total / count as f64;
    let mut best: Option<Best> = None;
    for (j, order) in sorted.order.iter().enumerate() {
        let mut left_n = 0usize;
        let mut left_s = 0.0;
        let mut prev: Option<f64> = None;
        for &r in order.iter().filter(|&&r| node_of[r] == node) {
            let v = train.row(r)[j];
            if let Some(p) = prev {
                if v > p {
                    let right_n = count - left_n;
                    let right_s = total - left_s;
                    let gain = left_s * left_s / left_n as f64 + right_s * right_s / right_n as f64 - parent;
                    if gain > MIN_GAIN && best.as_ref().is_none_or(|b| gain > b.gain) {
                        best = Some(Best {
                            feature: j,
                            threshold: p + 0.5 * (v - p),
                            gain,
                        });
                    }
                }
            }
            left_n += 1;
            left_s += grad[r];
            prev = Some(v);
        }
    }
    best
}

fn grow_tree(train: &Dataset, sorted: &Presorted, grad: &[f64], max_depth: usize) -> (Tree, Vec<usize>) {
    let n = train.len();
    let mut nodes = vec![Node::Leaf(0.0)];
    let mut node_of = vec![0usize; n];
    // Depth-first work list of (node, depth).
    let mut frontier = vec![(0usize, 0usize)];
    while let Some((node, depth)) = frontier.pop() {
        if depth >= max_depth {
            continue;
        }
        let (count, total) = node_of
            .iter()
            .zip(grad)
            .filter(|(&k, _)| k == node)
            .fold((0usize, 0.0), |(c, s), (_, &g)| (c + 1, s + g));
        if count < 2 {
            continue;
        }
        let Some(b) = best_split(train, sorted, &node_of, node, grad, count, total) else {
            continue;
        };
        let left = nodes.len();
        let right = left + 1;
        nodes.push(Node::Leaf(0.0));
        nodes.push(Node::Leaf(0.0));
        nodes[node] = Node::Split {
            feature: b.feature,
            threshold: b.threshold,
            left,
            right,
        };
        for (r, k) in node_of.iter_mut().enumerate() {
            if *k == node {
                *k = if train.row(r)[b.feature] <= b.threshold { left } else { right };
            }
        }
        frontier.push((right, depth + 1));
        frontier.push((left, depth + 1));
    }
    (Tree { nodes }, node_of)
}

/// Boosted ensemble for a single level.
#[derive(Debug, Clone, PartialEq)]
struct Booster {
    init: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
}

impl Booster {
    fn fit(train: &Dataset, sorted: &Presorted, cfg: &TrainConfig, tau: f64) -> Self {
        let ys = train.targets();
        let mut tmp = ys.to_vec();
        let init = math::lower_quantile(&mut tmp, tau);
        let mut fitted = vec![init; ys.len()];
        let mut grad = vec![0.0; ys.len()];
        let mut trees = Vec::with_capacity(cfg.trees);
        for _ in 0..cfg.trees {
            for ((g, &y), &f) in grad.iter_mut().zip(ys).zip(&fitted) {
                *g = if y > f { tau } else { tau - 1.0 };
            }
            let (mut tree, node_of) = grow_tree(train, sorted, &grad, cfg.depth);
            let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes.len()];
            for (r, &k) in node_of.iter().enumerate() {
                residuals[k].push(ys[r] - fitted[r]);
            }
            for (k, res) in residuals.iter_mut().enumerate() {
                if let Node::Leaf(v) = &mut tree.nodes[k] {
                    *v = if res.is_empty() { 0.0 } else { math::lower_quantile(res, tau) };
                }
            }
            for (r, &k) in node_of.iter().enumerate() {
                if let Node::Leaf(v) = tree.nodes[k] {
                    fitted[r] += cfg.shrinkage * v;
                }
            }
            trees.push(tree);
        }
        Self {
            init,
            shrinkage: cfg.shrinkage,
            trees,
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| self.shrinkage * t.predict(x)).sum::<f64>()
    }
}

/// Independent boosted ensembles, one per quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEnsemble {
    levels: Vec<f64>,
    boosters: Vec<Booster>,
    dim: usize,
    info: TrainingInfo,
}

impl QuantileEnsemble {
    pub fn fit(train: &Dataset, cfg: &TrainConfig, levels: &[f64]) -> Result<Self> {
        validate_levels(levels)?;
        if train.len() < MIN_ROWS {
            return Err(Error::TooFewRows {
                min: MIN_ROWS,
                got: train.len(),
            });
        }
        let sorted = Presorted::new(train);
        let boosters: Vec<Booster> = levels.iter().map(|&t| Booster::fit(train, &sorted, cfg, t)).collect();
        let loss = levels
            .iter()
            .zip(&boosters)
            .map(|(&tau, b)| {
                train
                    .rows()
                    .zip(train.targets())
                    .map(|(x, &y)| pinball(y - b.predict(x), tau))
                    .sum::<f64>()
                    / train.len() as f64
            })
            .sum::<f64>()
            / levels.len() as f64;
        Ok(Self {
            levels: levels.to_vec(),
            boosters,
            dim: train.dim(),
            info: TrainingInfo {
                epochs_run: cfg.trees,
                final_loss: loss,
            },
        })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn info(&self) -> TrainingInfo {
        self.info
    }

    /// One value per level, sorted so that no two levels cross.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut q: Vec<f64> = self.boosters.iter().map(|b| b.predict(x)).collect();
        q.sort_by(math::total_cmp);
        q
    }
}

/// Pinball loss of residual `u = y - q` at level `tau`.
pub fn pinball(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}
