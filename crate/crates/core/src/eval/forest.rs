//! CART-style decision trees (Gini impurity) bagged into forests, with
//! mean-decrease-impurity feature importance. Three interchangeable
//! variants share one contract: classic bagging with √d feature
//! subsampling, randomized-threshold trees, and a single deterministic
//! tree that considers every feature at every split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::data::EffectivenessLabel;
use crate::matrix::Matrix;
use crate::rng::SplitMix64;

/// Which tree-growing strategy the forest uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForestVariant {
    /// Bootstrap rows, √d random feature candidates, exhaustive
    /// threshold search.
    RandomForest,
    /// All rows, √d random feature candidates, one uniform-random
    /// threshold per candidate.
    ExtraTrees,
    /// One deterministic tree: all rows, every feature considered,
    /// exhaustive thresholds. Useful when exact reproducibility across
    /// column permutations matters.
    SingleTree,
}

impl ForestVariant {
    pub fn name(self) -> &'static str {
        match self {
            ForestVariant::RandomForest => "random_forest",
            ForestVariant::ExtraTrees => "extra_trees",
            ForestVariant::SingleTree => "single_tree",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "random_forest" => Some(ForestVariant::RandomForest),
            "extra_trees" => Some(ForestVariant::ExtraTrees),
            "single_tree" => Some(ForestVariant::SingleTree),
            _ => None,
        }
    }
}

/// Names accepted by variant selection, in presentation order.
pub const FOREST_VARIANT_NAMES: [&str; 3] = ["random_forest", "extra_trees", "single_tree"];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub trees: usize,
    pub max_depth: usize,
    pub variant: ForestVariant,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_depth: 8,
            variant: ForestVariant::RandomForest,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        p_effective: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_proba(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { p_effective } => return *p_effective,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

fn gini(effective: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let p = effective as f64 / total as f64;
    1.0 - p * p - (1.0 - p) * (1.0 - p)
}

struct TreeBuilder<'a> {
    data: &'a Matrix,
    labels: &'a [EffectivenessLabel],
    cfg: &'a ForestConfig,
    n_root: usize,
    nodes: Vec<Node>,
    importance: Vec<f64>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    decrease: f64,
}

impl<'a> TreeBuilder<'a> {
    /// Picks the feature indices a split may consider: everything for
    /// the deterministic variant, ⌊√d⌋ (at least 1) distinct random
    /// features otherwise.
    fn candidate_features(&self, rng: &mut SplitMix64) -> Vec<usize> {
        let d = self.data.cols();
        match self.cfg.variant {
            ForestVariant::SingleTree => (0..d).collect(),
            _ => {
                let k = ((d as f64).sqrt().floor() as usize).clamp(1, d);
                let mut pool: Vec<usize> = (0..d).collect();
                for i in 0..k {
                    let j = i + rng.below(d - i);
                    pool.swap(i, j);
                }
                pool.truncate(k);
                pool
            }
        }
    }

    /// Exhaustive threshold search over midpoints of consecutive
    /// distinct values; returns the Gini decrease of the best cut.
    fn best_cut_exhaustive(&self, indices: &[usize], feature: usize) -> Option<(f64, f64)> {
        let mut values: Vec<(f64, bool)> = indices
            .iter()
            .map(|&i| (self.data.get(i, feature), self.labels[i].is_effective()))
            .collect();
        values.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total = values.len();
        let total_eff = values.iter().filter(|(_, e)| *e).count();
        let parent = gini(total_eff, total);
        let mut left_n = 0usize;
        let mut left_eff = 0usize;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..total - 1 {
            left_n += 1;
            if values[i].1 {
                left_eff += 1;
            }
            if values[i].0 == values[i + 1].0 {
                continue;
            }
            let right_n = total - left_n;
            let right_eff = total_eff - left_eff;
            let weighted = (left_n as f64 * gini(left_eff, left_n)
                + right_n as f64 * gini(right_eff, right_n))
                / total as f64;
            let decrease = parent - weighted;
            let threshold = 0.5 * (values[i].0 + values[i + 1].0);
            if best.map_or(true, |(_, d)| decrease > d) {
                best = Some((threshold, decrease));
            }
        }
        best
    }

    /// One uniform-random threshold between the node's min and max for
    /// this feature, as the randomized variant uses.
    fn best_cut_random(
        &self,
        indices: &[usize],
        feature: usize,
        rng: &mut SplitMix64,
    ) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in indices {
            let v = self.data.get(i, feature);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == hi {
            return None;
        }
        let threshold = rng.uniform(lo, hi);
        let total = indices.len();
        let total_eff = indices
            .iter()
            .filter(|&&i| self.labels[i].is_effective())
            .count();
        let mut left_n = 0usize;
        let mut left_eff = 0usize;
        for &i in indices {
            if self.data.get(i, feature) <= threshold {
                left_n += 1;
                if self.labels[i].is_effective() {
                    left_eff += 1;
                }
            }
        }
        if left_n == 0 || left_n == total {
            return None;
        }
        let right_n = total - left_n;
        let right_eff = total_eff - left_eff;
        let parent = gini(total_eff, total);
        let weighted = (left_n as f64 * gini(left_eff, left_n)
            + right_n as f64 * gini(right_eff, right_n))
            / total as f64;
        Some((threshold, parent - weighted))
    }

    fn find_best_split(&self, indices: &[usize], rng: &mut SplitMix64) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        for feature in self.candidate_features(rng) {
            let cut = match self.cfg.variant {
                ForestVariant::ExtraTrees => self.best_cut_random(indices, feature, rng),
                _ => self.best_cut_exhaustive(indices, feature),
            };
            if let Some((threshold, decrease)) = cut {
                if decrease > 0.0 && best.as_ref().map_or(true, |b| decrease > b.decrease) {
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        decrease,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, indices: &[usize], depth: usize, rng: &mut SplitMix64) -> usize {
        let total = indices.len();
        let effective = indices
            .iter()
            .filter(|&&i| self.labels[i].is_effective())
            .count();
        let make_leaf = |nodes: &mut Vec<Node>| {
            nodes.push(Node::Leaf {
                p_effective: effective as f64 / total as f64,
            });
            nodes.len() - 1
        };
        if depth >= self.cfg.max_depth || effective == 0 || effective == total || total < 2 {
            return make_leaf(&mut self.nodes);
        }
        let Some(split) = self.find_best_split(indices, rng) else {
            return make_leaf(&mut self.nodes);
        };
        let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
            .iter()
            .partition(|&&i| self.data.get(i, split.feature) <= split.threshold);
        // Mean decrease in impurity: the node's share of the training
        // rows times the impurity drop its cut achieves.
        self.importance[split.feature] += total as f64 / self.n_root as f64 * split.decrease;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { p_effective: 0.0 }); // placeholder
        let left = self.build(&left_idx, depth + 1, rng);
        let right = self.build(&right_idx, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// A trained forest plus its normalized feature importances.
#[derive(Debug, Clone)]
pub struct Forest {
    pub cfg: ForestConfig,
    trees: Vec<Tree>,
    importances: Vec<f64>,
}

impl Forest {
    /// Trains the configured variant. Deterministic given the seed:
    /// every tree draws from its own substream, so thread scheduling
    /// cannot reorder randomness.
    pub fn train(
        data: &Matrix,
        labels: &[EffectivenessLabel],
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Forest, EvalError> {
        if data.rows() != labels.len() {
            return Err(EvalError::LengthMismatch {
                predictions: data.rows(),
                labels: labels.len(),
            });
        }
        if data.rows() == 0 {
            return Err(EvalError::EmptyTraining);
        }
        if data.cols() == 0 {
            return Err(EvalError::NoFeatures);
        }
        let effective = labels.iter().filter(|l| l.is_effective()).count();
        if effective == 0 || effective == labels.len() {
            return Err(EvalError::SingleClass);
        }

        let n_trees = match cfg.variant {
            ForestVariant::SingleTree => 1,
            _ => cfg.trees.max(1),
        };
        let base = SplitMix64::new(seed);
        let grown: Vec<(Tree, Vec<f64>)> = (0..n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = base.substream(t as u64);
                let indices: Vec<usize> = match cfg.variant {
                    ForestVariant::RandomForest => (0..data.rows())
                        .map(|_| rng.below(data.rows()))
                        .collect(),
                    _ => (0..data.rows()).collect(),
                };
                let mut builder = TreeBuilder {
                    data,
                    labels,
                    cfg,
                    n_root: indices.len(),
                    nodes: Vec::new(),
                    importance: vec![0.0; data.cols()],
                };
                builder.build(&indices, 0, &mut rng);
                (
                    Tree {
                        nodes: builder.nodes,
                    },
                    builder.importance,
                )
            })
            .collect();

        let mut importances = vec![0.0; data.cols()];
        let mut trees = Vec::with_capacity(n_trees);
        for (tree, imp) in grown {
            for (acc, v) in importances.iter_mut().zip(&imp) {
                *acc += v;
            }
            trees.push(tree);
        }
        let total: f64 = importances.iter().sum();
        if total > 0.0 {
            for v in &mut importances {
                *v /= total;
            }
        }
        Ok(Forest {
            cfg: cfg.clone(),
            trees,
            importances,
        })
    }

    /// Mean leaf probability of the positive (effective) class.
    pub fn predict_proba(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_proba(row)).sum();
        sum / self.trees.len() as f64
    }

    /// Majority decision: mean probability strictly above ½ reads
    /// effective.
    pub fn predict(&self, row: &[f64]) -> EffectivenessLabel {
        EffectivenessLabel::from_bool(self.predict_proba(row) > 0.5)
    }

    /// Per-column importances, non-negative, summing to 1 whenever any
    /// split happened (all zero otherwise).
    pub fn importances(&self) -> &[f64] {
        &self.importances
    }
}

/// Trains a forest and returns `(name, importance)` pairs sorted by
/// importance descending, ties broken by original column order.
pub fn forest_importance(
    names: &[String],
    data: &Matrix,
    labels: &[EffectivenessLabel],
    cfg: &ForestConfig,
    seed: u64,
) -> Result<Vec<(String, f64)>, EvalError> {
    if names.len() != data.cols() {
        return Err(EvalError::SchemaMismatch {
            names: names.len(),
            cols: data.cols(),
        });
    }
    let forest = Forest::train(data, labels, cfg, seed)?;
    let mut ranked: Vec<(usize, f64)> = forest
        .importances()
        .iter()
        .copied()
        .enumerate()
        .collect();
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite importances")
            .then(a.0.cmp(&b.0))
    });
    Ok(ranked
        .into_iter()
        .map(|(i, v)| (names[i].clone(), v))
        .collect())
}
