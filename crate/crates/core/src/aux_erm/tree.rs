//! Newton-boosted regression trees for the asymmetric squared loss.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::loss::{asym_loss, asym_loss_grad_hess, fit_constant, AsymLossSpec};
use crate::error::{invalid, Error, Result};
use crate::scalar::{ordered_sum, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node<T> {
    Leaf { value: T },
    Split { feature: usize, threshold: T, left: usize, right: usize },
}

/// Binary tree stored as a node arena; the root is node 0. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree<T> {
    pub nodes: Vec<Node<T>>,
}

impl<T: Scalar> RegressionTree<T> {
    pub fn predict_row(&self, x: ArrayView1<'_, T>) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    at = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn scale_leaves(&mut self, factor: T) {
        for node in &mut self.nodes {
            if let Node::Leaf { value } = node {
                *value *= factor;
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

/// Additive tree ensemble: `base_score + learning_rate * sum_t tree_t(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsembleModel<T> {
    pub base_score: T,
    pub learning_rate: T,
    pub trees: Vec<RegressionTree<T>>,
}

impl<T: Scalar> TreeEnsembleModel<T> {
    pub fn constant(value: T) -> Self {
        Self { base_score: value, learning_rate: T::one(), trees: Vec::new() }
    }

    pub fn predict_row(&self, x: ArrayView1<'_, T>) -> T {
        self.base_score + self.learning_rate * ordered_sum(self.trees.iter().map(|t| t.predict_row(x)))
    }

    pub fn predict(&self, features: ArrayView2<'_, T>) -> Vec<T> {
        features.rows().into_iter().map(|x| self.predict_row(x)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostParams<T> {
    pub learning_rate: T,
    pub max_depth: usize,
    pub n_rounds: usize,
    /// L2 penalty on leaf values.
    pub lambda_reg: T,
    pub min_leaf: usize,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
}

impl<T: Scalar> Default for BoostParams<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(0.3),
            max_depth: 3,
            n_rounds: 100,
            lambda_reg: T::one(),
            min_leaf: 2,
            patience: 10,
        }
    }
}

/// Per-round losses recorded while boosting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoostReport<T> {
    /// Training loss after the base score and after each round.
    pub train_loss: Vec<T>,
    pub val_loss: Vec<T>,
    /// Number of trees kept.
    pub best_round: usize,
}

struct Grower<'a, T> {
    x: ArrayView2<'a, T>,
    g: &'a [T],
    h: &'a [T],
    params: &'a BoostParams<T>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Grower<'_, T> {
    fn leaf_value(&self, idx: &[usize]) -> T {
        let gs = ordered_sum(idx.iter().map(|&i| self.g[i]));
        let hs = ordered_sum(idx.iter().map(|&i| self.h[i]));
        -gs / (hs + self.params.lambda_reg)
    }

    fn score(&self, g: T, h: T) -> T {
        g * g / (h + self.params.lambda_reg)
    }

    /// Exact greedy search over sorted feature values.
    fn best_split(&self, idx: &[usize]) -> Option<(usize, T, Vec<usize>, Vec<usize>)> {
        let min_leaf = self.params.min_leaf.max(1);
        if idx.len() < 2 * min_leaf {
            return None;
        }
        let g_all = ordered_sum(idx.iter().map(|&i| self.g[i]));
        let h_all = ordered_sum(idx.iter().map(|&i| self.h[i]));
        let parent = self.score(g_all, h_all);
        let mut best: Option<(T, usize, usize, Vec<usize>)> = None;
        for f in 0..self.x.ncols() {
            let mut order = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.x[[a, f]].partial_cmp(&self.x[[b, f]]).expect("finite features").then(a.cmp(&b))
            });
            let (mut gl, mut hl) = (T::zero(), T::zero());
            for pos in 0..order.len() - 1 {
                gl += self.g[order[pos]];
                hl += self.h[order[pos]];
                let left_n = pos + 1;
                if left_n < min_leaf || order.len() - left_n < min_leaf {
                    continue;
                }
                if self.x[[order[pos], f]] == self.x[[order[pos + 1], f]] {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(g_all - gl, h_all - hl) - parent;
                if gain > T::lit(1e-12) && best.as_ref().map_or(true, |(bg, ..)| gain > *bg) {
                    best = Some((gain, f, pos, order.clone()));
                }
            }
        }
        let (_, f, pos, order) = best?;
        let a = self.x[[order[pos], f]];
        let b = self.x[[order[pos + 1], f]];
        let mid = (a + b) / T::lit(2.0);
        let threshold = if a <= mid && mid < b { mid } else { a };
        let (left, right) = order.split_at(pos + 1);
        Some((f, threshold, left.to_vec(), right.to_vec()))
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: T::zero() });
        let split = if depth < self.params.max_depth { self.best_split(&idx) } else { None };
        match split {
            None => {
                self.nodes[at] = Node::Leaf { value: self.leaf_value(&idx) };
            }
            Some((feature, threshold, l, r)) => {
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[at] = Node::Split { feature, threshold, left, right };
            }
        }
        at
    }
}

fn mean_loss<T: Scalar>(targets: &[T], preds: &[T], spec: &AsymLossSpec<T>) -> T {
    ordered_sum(targets.iter().zip(preds).map(|(&r, &f)| asym_loss(r, f, spec)))
        / T::from_usize_lossy(targets.len().max(1))
}

/// Fits an ensemble for `params.n_rounds` rounds.
pub fn fit_tree_ensemble<T: Scalar>(
    features: ArrayView2<'_, T>,
    targets: &[T],
    spec: &AsymLossSpec<T>,
    params: &BoostParams<T>,
) -> Result<TreeEnsembleModel<T>> {
    fit_tree_ensemble_with_report(features, targets, None, spec, params).map(|(m, _)| m)
}

/// Newton boosting with optional early stopping on a validation set.
///
/// Starts from the best constant, then each round grows a depth-limited tree
/// on the loss gradients and Hessians with leaf values `-G / (H + lambda)`.
/// If a shrunken tree would raise the training loss (possible when points
/// cross the kink into the heavier side) its leaves are halved until it no
/// longer does, so the training loss never increases.
pub fn fit_tree_ensemble_with_report<T: Scalar>(
    features: ArrayView2<'_, T>,
    targets: &[T],
    validation: Option<(ArrayView2<'_, T>, &[T])>,
    spec: &AsymLossSpec<T>,
    params: &BoostParams<T>,
) -> Result<(TreeEnsembleModel<T>, BoostReport<T>)> {
    let m = targets.len();
    if m < 2 {
        return invalid(format!("boosting needs at least 2 samples, got {m}"));
    }
    if features.nrows() != m {
        return Err(Error::Shape(format!("features {} rows vs {m} targets", features.nrows())));
    }
    if !(params.learning_rate > T::zero()) || params.max_depth == 0 {
        return invalid("learning rate must be positive and max depth at least 1");
    }
    if features.iter().any(|v| !v.is_finite()) {
        return invalid("features must be finite");
    }
    if let Some((vx, vy)) = validation {
        if vx.nrows() != vy.len() || vx.ncols() != features.ncols() {
            return Err(Error::Shape("validation set shape".into()));
        }
    }

    let base = fit_constant(targets, spec)?;
    let mut model = TreeEnsembleModel { base_score: base, learning_rate: params.learning_rate, trees: Vec::new() };
    let mut preds = vec![base; m];
    let mut val_preds = validation.map(|(vx, _)| vec![base; vx.nrows()]);
    let mut report = BoostReport::default();
    let mut train_loss = mean_loss(targets, &preds, spec);
    report.train_loss.push(train_loss);
    let mut best_val = validation.map(|(_, vy)| mean_loss(vy, val_preds.as_ref().expect("set"), spec));
    if let Some(v) = best_val {
        report.val_loss.push(v);
    }
    let mut best_round = 0;
    let mut since_best = 0;

    let mut g = vec![T::zero(); m];
    let mut h = vec![T::zero(); m];
    for _round in 0..params.n_rounds {
        for i in 0..m {
            let (gi, hi) = asym_loss_grad_hess(targets[i], preds[i], spec);
            g[i] = gi;
            h[i] = hi;
        }
        let mut grower = Grower { x: features, g: &g, h: &h, params, nodes: Vec::new() };
        grower.grow((0..m).collect(), 0);
        let mut tree = RegressionTree { nodes: grower.nodes };

        let step: Vec<T> = features.rows().into_iter().map(|x| tree.predict_row(x)).collect();
        let mut factor = T::one();
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<T> = preds.iter().zip(&step).map(|(&p, &s)| p + params.learning_rate * factor * s).collect();
            let l = mean_loss(targets, &cand, spec);
            if l <= train_loss {
                accepted = Some((cand, l));
                break;
            }
            factor = factor / T::lit(2.0);
        }
        let Some((cand, l)) = accepted else { break };
        if factor != T::one() {
            tree.scale_leaves(factor);
        }
        preds = cand;
        train_loss = l;
        report.train_loss.push(l);
        if let (Some((vx, vy)), Some(vp)) = (validation, val_preds.as_mut()) {
            for (j, x) in vx.rows().into_iter().enumerate() {
                vp[j] += params.learning_rate * tree.predict_row(x);
            }
            let vl = mean_loss(vy, vp, spec);
            report.val_loss.push(vl);
            model.trees.push(tree);
            if vl < best_val.expect("set") {
                best_val = Some(vl);
                best_round = model.trees.len();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= params.patience {
                    break;
                }
            }
        } else {
            model.trees.push(tree);
            best_round = model.trees.len();
        }
    }
    model.trees.truncate(best_round);
    report.best_round = best_round;
    Ok((model, report))
}
