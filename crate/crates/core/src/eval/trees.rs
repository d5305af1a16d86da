//! Gini-impurity decision trees and bagged random forests over flattened
//! feature vectors — the classical baselines the deep models are compared
//! against.
//!
//! Determinism contract: candidate features are visited in a fixed order
//! (ascending, or the sampled order for a forest node), split positions
//! are scanned in sorted feature order, and only a strictly better score
//! replaces the incumbent — so equal-quality splits resolve to the first
//! one visited, and a fixed seed always grows the same forest. Split
//! thresholds are set to the largest value routed left, and routing uses
//! `value <= threshold`, which avoids the empty-child hazards of midpoint
//! arithmetic on adjacent floats.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Limits for a single tree.
#[derive(Debug, Clone)]
pub struct TreeConfig {
    pub max_depth: usize,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means all of them.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 50,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
    },
    Leaf {
        dist: Vec<f64>,
    },
}

/// A CART-style classification tree with class-distribution leaves.
#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    n_classes: usize,
    n_features: usize,
}

fn validate_training_set(x: &ArrayView2<'_, f32>, y: &[u8], n_classes: usize) -> Result<()> {
    let (n, _) = x.dim();
    if n == 0 {
        return Err(Error::invalid("cannot fit a tree on an empty set"));
    }
    if n != y.len() {
        return Err(Error::invalid(format!(
            "{n} feature rows vs {} labels",
            y.len()
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c as usize >= n_classes) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("tree features must be finite"));
    }
    Ok(())
}

/// Best (feature, threshold, score) over the candidates, or `None` when no
/// candidate has two distinct values. Score is Σ_child (Σ_c count_c²)/n —
/// maximizing it minimizes the weighted Gini impurity.
fn best_split(
    x: &ArrayView2<'_, f32>,
    y: &[u8],
    idx: &[u32],
    candidates: &[usize],
    n_classes: usize,
    scratch: &mut Vec<u32>,
) -> Option<(usize, f32)> {
    let n = idx.len();
    let mut best: Option<(f64, usize, f32)> = None;
    let mut total = vec![0u64; n_classes];
    for &i in idx {
        total[y[i as usize] as usize] += 1;
    }
    for &f in candidates {
        scratch.clear();
        scratch.extend_from_slice(idx);
        scratch.sort_unstable_by(|&a, &b| x[(a as usize, f)].total_cmp(&x[(b as usize, f)]));
        let mut left = vec![0u64; n_classes];
        let mut ssq_l = 0.0f64;
        let mut ssq_r: f64 = total.iter().map(|&c| (c * c) as f64).sum();
        for k in 0..n - 1 {
            let c = y[scratch[k] as usize] as usize;
            // Moving one class-c sample left changes both Σ count² terms.
            ssq_l += (2 * left[c] + 1) as f64;
            ssq_r -= (2 * (total[c] - left[c]) - 1) as f64;
            left[c] += 1;
            let here = x[(scratch[k] as usize, f)];
            let next = x[(scratch[k + 1] as usize, f)];
            if here == next {
                continue; // not a boundary between distinct values
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let score = ssq_l / nl + ssq_r / nr;
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, f, here));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl DecisionTree {
    /// Fit on rows of `x` labelled by `y`. `rng` feeds per-split feature
    /// sampling and is only consulted when `max_features` is set.
    pub fn fit(
        x: &ArrayView2<'_, f32>,
        y: &[u8],
        n_classes: usize,
        cfg: &TreeConfig,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Self> {
        validate_training_set(x, y, n_classes)?;
        let mut tree = DecisionTree {
            nodes: Vec::new(),
            n_classes,
            n_features: x.dim().1,
        };
        let mut idx: Vec<u32> = (0..x.dim().0 as u32).collect();
        let mut scratch = Vec::new();
        tree.grow(x, y, &mut idx, 0, cfg, &mut rng, &mut scratch);
        Ok(tree)
    }

    fn leaf(&mut self, y: &[u8], idx: &[u32]) -> u32 {
        let mut dist = vec![0.0f64; self.n_classes];
        for &i in idx {
            dist[y[i as usize] as usize] += 1.0;
        }
        let n = idx.len() as f64;
        for d in &mut dist {
            *d /= n;
        }
        self.nodes.push(Node::Leaf { dist });
        (self.nodes.len() - 1) as u32
    }

    fn grow(
        &mut self,
        x: &ArrayView2<'_, f32>,
        y: &[u8],
        idx: &mut [u32],
        depth: usize,
        cfg: &TreeConfig,
        rng: &mut Option<&mut ChaCha8Rng>,
        scratch: &mut Vec<u32>,
    ) -> u32 {
        let pure = idx
            .iter()
            .all(|&i| y[i as usize] == y[idx[0] as usize]);
        if pure || depth >= cfg.max_depth || idx.len() < cfg.min_samples_split {
            return self.leaf(y, idx);
        }
        let candidates: Vec<usize> = match (cfg.max_features, rng.as_deref_mut()) {
            (Some(m), Some(r)) if m < self.n_features => sample_features(self.n_features, m, r),
            _ => (0..self.n_features).collect(),
        };
        let Some((feature, threshold)) =
            best_split(x, y, idx, &candidates, self.n_classes, scratch)
        else {
            return self.leaf(y, idx); // every candidate is constant here
        };
        // Partition in place: `<= threshold` left, rest right.
        let mut mid = 0;
        for k in 0..idx.len() {
            if x[(idx[k] as usize, feature)] <= threshold {
                idx.swap(mid, k);
                mid += 1;
            }
        }
        debug_assert!(mid > 0 && mid < idx.len(), "split produced an empty child");
        let slot = self.nodes.len() as u32;
        self.nodes.push(Node::Leaf { dist: Vec::new() }); // reserve
        let (li, ri) = idx.split_at_mut(mid);
        let left = self.grow(x, y, li, depth + 1, cfg, rng, scratch);
        let right = self.grow(x, y, ri, depth + 1, cfg, rng, scratch);
        self.nodes[slot as usize] = Node::Split {
            feature: feature as u32,
            threshold,
            left,
            right,
        };
        slot
    }

    /// Class distribution of the leaf each row lands in.
    pub fn predict_proba(&self, x: &ArrayView2<'_, f32>) -> Result<Vec<Vec<f64>>> {
        if x.dim().1 != self.n_features {
            return Err(Error::ShapeMismatch {
                expected: format!("(_, {})", self.n_features),
                got: format!("(_, {})", x.dim().1),
            });
        }
        Ok(x.outer_iter()
            .map(|row| {
                let mut at = 0usize;
                loop {
                    match &self.nodes[at] {
                        Node::Leaf { dist } => return dist.clone(),
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            at = if row[*feature as usize] <= *threshold {
                                *left as usize
                            } else {
                                *right as usize
                            };
                        }
                    }
                }
            })
            .collect())
    }

    pub fn predict(&self, x: &ArrayView2<'_, f32>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.iter().map(|d| argmax(d)).collect())
    }

    /// Root decision, if the tree has one (used by tests and reports).
    pub fn root_split(&self) -> Option<(usize, f32)> {
        match self.nodes.first() {
            Some(Node::Split { feature, threshold, .. }) => {
                Some((*feature as usize, *threshold))
            }
            _ => None,
        }
    }
}

fn argmax(d: &[f64]) -> u8 {
    let mut best = 0usize;
    for (i, &v) in d.iter().enumerate().skip(1) {
        if v > d[best] {
            best = i;
        }
    }
    best as u8
}

/// The first `m` entries of a seeded Fisher–Yates pass over 0..d.
fn sample_features(d: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..d).collect();
    for k in 0..m {
        let j = rng.gen_range(k..d);
        all.swap(k, j);
    }
    all.truncate(m);
    all
}

/// Forest hyperparameters.
#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub max_features: Option<usize>,
    /// Resample the training rows (with replacement) per tree.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: 50,
            max_features: Some(25),
            bootstrap: true,
        }
    }
}

/// Bagged trees voting by averaged leaf distributions. Tree t draws its
/// bootstrap rows and split features from stream t of the base seed, so
/// trees are independent of each other and of how many are grown.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
    n_classes: usize,
}

impl RandomForest {
    pub fn fit(
        x: &ArrayView2<'_, f32>,
        y: &[u8],
        n_classes: usize,
        cfg: &ForestConfig,
        seed: u64,
    ) -> Result<Self> {
        if cfg.n_trees == 0 {
            return Err(Error::invalid("a forest needs at least one tree"));
        }
        validate_training_set(x, y, n_classes)?;
        let n = x.dim().0;
        let tree_cfg = TreeConfig {
            max_depth: cfg.max_depth,
            min_samples_split: 2,
            max_features: cfg.max_features,
        };
        let mut trees = Vec::with_capacity(cfg.n_trees);
        for t in 0..cfg.n_trees {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let (bx, by);
            let (xa, ya): (ArrayView2<'_, f32>, &[u8]) = if cfg.bootstrap {
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                bx = ndarray::Array2::from_shape_fn((n, x.dim().1), |(i, j)| x[(rows[i], j)]);
                by = rows.iter().map(|&i| y[i]).collect::<Vec<u8>>();
                (bx.view(), &by)
            } else {
                (x.view(), y)
            };
            trees.push(DecisionTree::fit(&xa, ya, n_classes, &tree_cfg, Some(&mut rng))?);
        }
        Ok(RandomForest { trees, n_classes })
    }

    /// Mean of the member trees' leaf distributions.
    pub fn predict_proba(&self, x: &ArrayView2<'_, f32>) -> Result<Vec<Vec<f64>>> {
        let mut acc = vec![vec![0.0f64; self.n_classes]; x.dim().0];
        for tree in &self.trees {
            for (a, p) in acc.iter_mut().zip(tree.predict_proba(x)?) {
                for (av, pv) in a.iter_mut().zip(p) {
                    *av += pv;
                }
            }
        }
        let k = self.trees.len() as f64;
        for a in &mut acc {
            for v in a.iter_mut() {
                *v /= k;
            }
        }
        Ok(acc)
    }

    pub fn predict(&self, x: &ArrayView2<'_, f32>) -> Result<Vec<u8>> {
        Ok(self.predict_proba(x)?.iter().map(|d| argmax(d)).collect())
    }
}
