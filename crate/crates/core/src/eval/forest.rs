//! Extremely randomized trees for binary classification.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtraTreesConfig {
    pub n_trees: usize,
    /// Features drawn at each node; the best of their random splits is kept.
    pub k_candidate_features: usize,
    /// Minimum samples in each child of a split.
    pub n_min_leaf: usize,
    pub seed: u64,
}

impl ExtraTreesConfig {
    /// 100 trees, `⌈√d⌉` candidate features, children of at least 2 samples.
    pub fn for_features(n_features: usize, seed: u64) -> Self {
        Self { n_trees: 100, k_candidate_features: (n_features as f64).sqrt().ceil() as usize, n_min_leaf: 2, seed }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_trees == 0 {
            return Err(EvalError::InvalidConfig("n_trees must be ≥ 1".into()));
        }
        if self.k_candidate_features == 0 {
            return Err(EvalError::InvalidConfig("k_candidate_features must be ≥ 1".into()));
        }
        if self.n_min_leaf == 0 {
            return Err(EvalError::InvalidConfig("n_min_leaf must be ≥ 1".into()));
        }
        Ok(())
    }
}

impl Default for ExtraTreesConfig {
    fn default() -> Self {
        Self::for_features(super::FEATURE_COUNT, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf { positive_fraction: f64 },
    /// `x[feature] < threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { positive_fraction } => return positive_fraction,
                Node::Split { feature, threshold, left, right } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    fn depth(&self) -> usize {
        let mut deepest = 0;
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, d)) = stack.pop() {
            deepest = deepest.max(d);
            if let Node::Split { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        deepest
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [bool],
    cfg: &'a ExtraTreesConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&self, samples: &[usize]) -> Node {
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        Node::Leaf { positive_fraction: pos as f64 / samples.len() as f64 }
    }

    /// Best of the candidate random splits, or `None` when the node is a leaf.
    fn choose_split(&self, samples: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = samples.len();
        let pos = samples.iter().filter(|&&i| self.y[i]).count();
        if pos == 0 || pos == n || n < 2 * self.cfg.n_min_leaf {
            return None;
        }
        let d = self.x[0].len();
        let ranges: Vec<(usize, f64, f64)> = (0..d)
            .filter_map(|f| {
                let (lo, hi) = samples
                    .iter()
                    .map(|&i| self.x[i][f])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return None;
        }
        let k = self.cfg.k_candidate_features.min(ranges.len());
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None;
        for j in index::sample(rng, ranges.len(), k) {
            let (f, lo, hi) = ranges[j];
            let threshold = rng.random_range(lo..hi);
            let (mut nl, mut pl) = (0, 0);
            for &i in samples {
                if self.x[i][f] < threshold {
                    nl += 1;
                    pl += usize::from(self.y[i]);
                }
            }
            let nr = n - nl;
            if nl < self.cfg.n_min_leaf || nr < self.cfg.n_min_leaf {
                continue;
            }
            let gain = parent - (nl as f64 * gini(pl, nl) + nr as f64 * gini(pos - pl, nr)) / n as f64;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, threshold));
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    /// Depth-first, left child first, with an explicit stack so degenerate
    /// chains cannot overflow the call stack.
    fn grow(&mut self, samples: Vec<usize>, rng: &mut ChaCha8Rng) {
        self.nodes.push(Node::Leaf { positive_fraction: 0.0 });
        let mut stack = vec![(0usize, samples)];
        while let Some((slot, samples)) = stack.pop() {
            match self.choose_split(&samples, rng) {
                None => self.nodes[slot] = self.leaf(&samples),
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        samples.into_iter().partition(|&i| self.x[i][feature] < threshold);
                    let (left, right) = (self.nodes.len(), self.nodes.len() + 1);
                    self.nodes.push(Node::Leaf { positive_fraction: 0.0 });
                    self.nodes.push(Node::Leaf { positive_fraction: 0.0 });
                    self.nodes[slot] = Node::Split { feature, threshold, left, right };
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
    }
}

impl Forest {
    /// Every tree sees the full training set; randomness comes only from the
    /// feature and threshold draws.
    pub fn train(features: &[Vec<f64>], labels: &[bool], cfg: &ExtraTreesConfig) -> Result<Self, EvalError> {
        cfg.validate()?;
        if features.is_empty() {
            return Err(EvalError::EmptyTraining);
        }
        if features.len() != labels.len() {
            return Err(EvalError::LengthMismatch { scores: features.len(), labels: labels.len() });
        }
        let d = features[0].len();
        if features.iter().any(|r| r.len() != d) {
            return Err(EvalError::RaggedFeatures);
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == labels.len() {
            return Err(EvalError::SingleClass);
        }
        let trees = (0..cfg.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("tree/{t}")));
                let mut g = Grower { x: features, y: labels, cfg, nodes: Vec::new() };
                g.grow((0..features.len()).collect(), &mut rng);
                Tree { nodes: g.nodes }
            })
            .collect();
        Ok(Self { trees, n_features: d })
    }

    /// Mean over trees of the positive fraction of the leaf reached.
    pub fn predict(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.n_features);
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        rows.iter().map(|r| self.predict(r)).collect()
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y = x.iter().map(|r| r[0] + 0.5 * r[1] > 0.1).collect();
        (x, y)
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let (x, y) = toy(200);
        let forest = Forest::train(&x, &y, &ExtraTreesConfig::for_features(2, 1)).unwrap();
        let acc = x.iter().zip(&y).filter(|(r, &l)| (forest.predict(r) >= 0.5) == l).count();
        assert_eq!(acc, 200);
    }

    #[test]
    fn huge_n_min_gives_stumps_predicting_prior() {
        let (x, y) = toy(50);
        let prior = y.iter().filter(|&&l| l).count() as f64 / 50.0;
        let cfg = ExtraTreesConfig { n_trees: 1, k_candidate_features: 2, n_min_leaf: 50, seed: 0 };
        let forest = Forest::train(&x, &y, &cfg).unwrap();
        assert_eq!(forest.max_depth(), 0);
        assert_eq!(forest.predict(&[0.3, -0.2]), prior);
    }

    #[test]
    fn deterministic_by_seed() {
        let (x, y) = toy(80);
        let cfg = ExtraTreesConfig::for_features(2, 9);
        assert_eq!(Forest::train(&x, &y, &cfg).unwrap(), Forest::train(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn errors() {
        let cfg = ExtraTreesConfig::for_features(1, 0);
        assert!(matches!(Forest::train(&[], &[], &cfg), Err(EvalError::EmptyTraining)));
        assert!(matches!(Forest::train(&[vec![1.0], vec![2.0]], &[true, true], &cfg), Err(EvalError::SingleClass)));
    }
}
