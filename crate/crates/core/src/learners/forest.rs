use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_dim, common_dim, BinaryInstance};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: None,
            min_leaf: 1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Fractions of `[negative, positive]` training samples reaching the leaf.
    Leaf { votes: [f64; 2] },
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    fn positive_fraction(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { votes } => return votes[1],
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_trees: usize,
    pub feature_dim: usize,
    pub rng_seed: u64,
}

impl DecisionForestModel {
    /// Mean over trees of the positive-class leaf fraction.
    pub fn predict_confidence(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.feature_dim, x)?;
        if self.trees.is_empty() {
            return Ok(0.0);
        }
        let sum: f64 = self.trees.iter().map(|t| t.positive_fraction(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// Confidence of exactly 0.5 counts as positive.
    pub fn predict(&self, x: &[f64]) -> Result<bool> {
        Ok(self.predict_confidence(x)? >= 0.5)
    }
}

fn gini(pos: f64, total: f64) -> f64 {
    if total == 0.0 {
        return 0.0;
    }
    let p = pos / total;
    2.0 * p * (1.0 - p)
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    impurity: f64,
}

struct TreeBuilder<'a> {
    data: &'a [BinaryInstance],
    dim: usize,
    subset: usize,
    params: &'a ForestParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> u32 {
        let pos = idx.iter().filter(|&&i| self.data[i].y).count() as f64;
        let n = idx.len() as f64;
        let p = pos / n;
        self.nodes.push(Node::Leaf { votes: [1.0 - p, p] });
        (self.nodes.len() - 1) as u32
    }

    fn best_split_on(&self, idx: &[usize], feature: usize, total_pos: f64) -> Option<SplitChoice> {
        let mut col: Vec<(f64, bool)> = idx.iter().map(|&i| (self.data[i].x[feature], self.data[i].y)).collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = col.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<SplitChoice> = None;
        let mut left_pos = 0.0;
        for k in 0..n - 1 {
            if col[k].1 {
                left_pos += 1.0;
            }
            let (lo, hi) = (col[k].0, col[k + 1].0);
            if lo == hi {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let impurity =
                (nl as f64 * gini(left_pos, nl as f64) + nr as f64 * gini(total_pos - left_pos, nr as f64)) / n as f64;
            if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                let mut threshold = lo + (hi - lo) / 2.0;
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some(SplitChoice {
                    feature,
                    threshold,
                    impurity,
                });
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut impl Rng) -> u32 {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.data[i].y).count();
        let at_depth_limit = self.params.max_depth.is_some_and(|d| depth >= d);
        if pos == 0 || pos == n || at_depth_limit || n < 2 * self.params.min_leaf.max(1) {
            return self.leaf(idx);
        }
        let parent = gini(pos as f64, n as f64);

        // Examine a random subset first; keep drawing features only while
        // nothing informative has been found.
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.shuffle(rng);
        let mut best: Option<SplitChoice> = None;
        for (tried, &f) in order.iter().enumerate() {
            if tried >= self.subset && best.as_ref().is_some_and(|b| b.impurity < parent - 1e-12) {
                break;
            }
            if let Some(c) = self.best_split_on(idx, f, pos as f64) {
                if best.as_ref().is_none_or(|b| c.impurity < b.impurity) {
                    best = Some(c);
                }
            }
        }
        let Some(split) = best.filter(|b| b.impurity < parent - 1e-12) else {
            return self.leaf(idx);
        };

        let mut mid = 0;
        for k in 0..n {
            if self.data[idx[k]].x[split.feature] <= split.threshold {
                idx.swap(k, mid);
                mid += 1;
            }
        }
        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf { votes: [0.0, 0.0] });
        let (l, r) = idx.split_at_mut(mid);
        let left = self.build(l, depth + 1, rng);
        let right = self.build(r, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        slot as u32
    }
}

/// Trains a bagged forest of Gini trees. Each tree draws a bootstrap sample
/// and considers ⌈√d⌉ random features per node; tree `k` is seeded from
/// `(params.seed, k)` so results do not depend on thread scheduling.
pub fn train_forest(data: &[BinaryInstance], params: &ForestParams) -> Result<DecisionForestModel> {
    let dim = common_dim(data.iter().map(|d| &d.x))?;
    let subset = ((dim as f64).sqrt().ceil() as usize).max(1);
    let n = data.len();
    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(seed::derive(params.seed, k as u64));
            let mut idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            let mut builder = TreeBuilder {
                data,
                dim,
                subset,
                params,
                nodes: Vec::new(),
            };
            builder.build(&mut idx, 0, &mut rng);
            DecisionTree { nodes: builder.nodes }
        })
        .collect();
    Ok(DecisionForestModel {
        trees,
        n_trees: params.n_trees,
        feature_dim: dim,
        rng_seed: params.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn separable(n: usize, seed_value: u64) -> Vec<BinaryInstance> {
        let mut rng = seed::rng(seed_value);
        (0..n)
            .map(|_| {
                let x = vec![rng.gen::<f64>(), rng.gen::<f64>()];
                let y = x[0] > 0.5;
                BinaryInstance { x, y }
            })
            .collect()
    }

    #[test]
    fn single_class_gives_constant_model() {
        let data: Vec<_> = (0..100)
            .map(|i| BinaryInstance {
                x: vec![i as f64, (i * 7 % 13) as f64],
                y: true,
            })
            .collect();
        let m = train_forest(&data, &ForestParams::default()).unwrap();
        for x in [[0.0, 0.0], [1e6, -3.0], [-5.0, 50.0]] {
            assert_eq!(m.predict_confidence(&x).unwrap(), 1.0);
        }
    }

    #[test]
    fn fits_separable_data() {
        let data = separable(200, 42);
        let m = train_forest(
            &data,
            &ForestParams {
                seed: 42,
                ..Default::default()
            },
        )
        .unwrap();
        let correct = data.iter().filter(|d| m.predict(&d.x).unwrap() == d.y).count();
        assert!(correct as f64 / 200.0 >= 0.95);
        assert!(m.predict_confidence(&[0.95, 0.5]).unwrap() >= 0.5);
        assert!(m.predict_confidence(&[0.05, 0.5]).unwrap() < 0.5);
    }

    #[test]
    fn two_tree_average() {
        let m = DecisionForestModel {
            trees: vec![
                DecisionTree {
                    nodes: vec![Node::Leaf { votes: [0.0, 1.0] }],
                },
                DecisionTree {
                    nodes: vec![Node::Leaf { votes: [1.0, 0.0] }],
                },
            ],
            n_trees: 2,
            feature_dim: 1,
            rng_seed: 0,
        };
        assert_eq!(m.predict_confidence(&[3.0]).unwrap(), 0.5);
        assert!(m.predict(&[3.0]).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = train_forest(&separable(20, 1), &ForestParams::default()).unwrap();
        assert!(m.predict_confidence(&[0.1]).is_err());
        assert!(m.predict_confidence(&[0.1, 0.2, 0.3]).is_err());
    }

    #[test]
    fn empty_data_is_an_error() {
        assert!(train_forest(&[], &ForestParams::default()).is_err());
    }

    #[test]
    fn max_depth_is_respected() {
        let data = separable(200, 3);
        let m = train_forest(
            &data,
            &ForestParams {
                max_depth: Some(2),
                n_trees: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn leaves_are_distributions_and_splits_in_range() {
        let m = train_forest(
            &separable(100, 9),
            &ForestParams {
                n_trees: 20,
                ..Default::default()
            },
        )
        .unwrap();
        for t in &m.trees {
            for node in &t.nodes {
                match node {
                    Node::Leaf { votes } => assert!((votes[0] + votes[1] - 1.0).abs() < 1e-12),
                    Node::Split { feature, .. } => assert!(*feature < m.feature_dim),
                }
            }
        }
    }
}
