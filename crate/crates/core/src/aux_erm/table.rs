//! Per-action surrogate bound models and the `(sample, action)` bounds table.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{fit_constant, AsymLossSpec};
use super::tree::{fit_tree_ensemble_with_report, BoostParams, TreeEnsembleModel};
use crate::bounds::Direction;
use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::UncertaintyBudget;
use crate::scalar::Scalar;

/// Actions observed fewer times than this get a constant model.
pub const MIN_ACTION_SAMPLES: usize = 5;

/// `f_a(x_i) <= g_a(x_i)` for every sample and action.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardBoundsTable<T> {
    pub lower: Array2<T>,
    pub upper: Array2<T>,
}

impl<T: Scalar> RewardBoundsTable<T> {
    pub fn new(lower: Array2<T>, upper: Array2<T>) -> Result<Self> {
        if lower.dim() != upper.dim() {
            return Err(Error::Shape(format!("lower {:?} vs upper {:?}", lower.dim(), upper.dim())));
        }
        if lower.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
            return invalid("reward bounds must be finite");
        }
        if let Some(((i, a), _)) = lower.indexed_iter().find(|&(ix, &f)| f > upper[ix]) {
            return invalid(format!("reward bounds out of order at sample {i}, action {a}"));
        }
        Ok(Self { lower, upper })
    }

    /// Both sides equal to `preds`.
    pub fn exact(preds: Array2<T>) -> Result<Self> {
        Self::new(preds.clone(), preds)
    }

    pub fn n(&self) -> usize {
        self.lower.nrows()
    }

    pub fn k(&self) -> usize {
        self.lower.ncols()
    }

    pub fn check_shape(&self, n: usize, k: usize) -> Result<()> {
        if self.lower.dim() != (n, k) {
            return Err(Error::Shape(format!("reward bounds {:?}, expected ({n}, {k})", self.lower.dim())));
        }
        Ok(())
    }

    /// `M_alpha`: the largest absolute entry of either side.
    pub fn m_alpha(&self) -> T {
        self.lower.iter().chain(self.upper.iter()).fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// CSV with columns `i,a,lower,upper` and optionally `point`.
    pub fn write_csv<W: Write>(&self, out: W, point: Option<&Array2<T>>) -> Result<()> {
        if let Some(p) = point {
            self.check_shape(p.nrows(), p.ncols())?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["i", "a", "lower", "upper"];
        if point.is_some() {
            header.push("point");
        }
        w.write_record(&header)?;
        for ((i, a), f) in self.lower.indexed_iter() {
            let mut rec = vec![i.to_string(), a.to_string(), f.to_string(), self.upper[[i, a]].to_string()];
            if let Some(p) = point {
                rec.push(p[[i, a]].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads what [`write_csv`](Self::write_csv) writes. Every `(i, a)` pair
    /// must appear exactly once.
    pub fn read_csv<R: Read>(input: R) -> Result<(Self, Option<Array2<T>>)> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h.trim() == name);
        let (Some(ci), Some(ca), Some(cl), Some(cu)) = (col("i"), col("a"), col("lower"), col("upper")) else {
            return invalid("bounds CSV needs columns i,a,lower,upper");
        };
        let cp = col("point");
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |c: usize| rec.get(c).map(str::trim).unwrap_or("");
            let bad = || Error::InvalidInput(format!("bounds CSV row {}: malformed entry", line + 1));
            let i: usize = field(ci).parse().map_err(|_| bad())?;
            let a: usize = field(ca).parse().map_err(|_| bad())?;
            let num = |c: usize| field(c).parse::<f64>().map(T::lit).map_err(|_| bad());
            let p = cp.map(num).transpose()?;
            rows.push((i, a, num(cl)?, num(cu)?, p));
        }
        if rows.is_empty() {
            return invalid("bounds CSV has no rows");
        }
        let n = rows.iter().map(|r| r.0).max().expect("non-empty") + 1;
        let k = rows.iter().map(|r| r.1).max().expect("non-empty") + 1;
        if rows.len() != n * k {
            return invalid(format!("bounds CSV has {} rows, expected {n} x {k}", rows.len()));
        }
        let mut lower = Array2::from_elem((n, k), T::nan());
        let mut upper = Array2::from_elem((n, k), T::nan());
        let mut point = cp.map(|_| Array2::from_elem((n, k), T::nan()));
        for (i, a, f, g, p) in rows {
            if !lower[[i, a]].is_nan() {
                return invalid(format!("bounds CSV repeats entry ({i}, {a})"));
            }
            lower[[i, a]] = f;
            upper[[i, a]] = g;
            if let (Some(pt), Some(v)) = (point.as_mut(), p) {
                pt[[i, a]] = v;
            }
        }
        Ok((Self::new(lower, upper)?, point))
    }
}

/// Hyperparameter grid for the per-action boosted fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostGrid<T> {
    pub learning_rates: Vec<T>,
    pub max_depths: Vec<usize>,
    pub n_rounds: usize,
    pub patience: usize,
    pub lambda_reg: T,
    pub min_leaf: usize,
}

impl<T: Scalar> Default for BoostGrid<T> {
    fn default() -> Self {
        Self {
            learning_rates: [0.01, 0.1, 0.3, 0.5].iter().map(|&v| T::lit(v)).collect(),
            max_depths: vec![2, 3, 4],
            n_rounds: 100,
            patience: 10,
            lambda_reg: T::one(),
            min_leaf: 2,
        }
    }
}

impl<T: Scalar> BoostGrid<T> {
    fn params(&self) -> Vec<BoostParams<T>> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &max_depth in &self.max_depths {
                out.push(BoostParams {
                    learning_rate,
                    max_depth,
                    n_rounds: self.n_rounds,
                    lambda_reg: self.lambda_reg,
                    min_leaf: self.min_leaf,
                    patience: self.patience,
                });
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        if self.learning_rates.is_empty() || self.max_depths.is_empty() {
            return invalid("boosting grid must not be empty");
        }
        if self.learning_rates.iter().any(|&v| !(v > T::zero())) || self.max_depths.contains(&0) {
            return invalid("learning rates must be positive and depths at least 1");
        }
        if self.lambda_reg < T::zero() || self.min_leaf == 0 {
            return invalid("lambda_reg must be nonnegative and min_leaf at least 1");
        }
        Ok(())
    }
}

/// Lower (`f_a`), upper (`g_a`) and point (`mu_a`) models, one per action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardModels<T> {
    pub alpha: T,
    pub lower: Vec<TreeEnsembleModel<T>>,
    pub upper: Vec<TreeEnsembleModel<T>>,
    pub point: Vec<TreeEnsembleModel<T>>,
}

/// Evaluated models on a set of contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTables<T> {
    pub bounds: RewardBoundsTable<T>,
    pub point: Array2<T>,
    /// Entries changed by the ordering clamp.
    pub clamped: usize,
}

#[derive(Clone, Copy)]
enum Side {
    Lower,
    Upper,
    Point,
}

fn fit_one<T: Scalar>(
    x: ArrayView2<'_, T>,
    y: &[T],
    split_at: usize,
    spec: &AsymLossSpec<T>,
    grid: &[BoostParams<T>],
    fallback: &[T],
) -> Result<TreeEnsembleModel<T>> {
    if y.is_empty() {
        return Ok(TreeEnsembleModel::constant(fit_constant(fallback, spec)?));
    }
    if y.len() < MIN_ACTION_SAMPLES {
        return Ok(TreeEnsembleModel::constant(fit_constant(y, spec)?));
    }
    let (tx, vx) = x.split_at(Axis(0), split_at);
    let (ty, vy) = y.split_at(split_at);
    let mut best: Option<(T, TreeEnsembleModel<T>)> = None;
    for params in grid {
        let (model, report) = fit_tree_ensemble_with_report(tx, ty, Some((vx, vy)), spec, params)?;
        let val = report.val_loss[report.best_round];
        if best.as_ref().map_or(true, |(b, _)| val < *b) {
            best = Some((val, model));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

impl<T: Scalar> RewardModels<T> {
    /// Fits `f_a`, `g_a` and `mu_a` for every action on the samples that
    /// logged it. Each action's samples are shuffled by `seed` and split
    /// 80/20; the grid point with the lowest validation loss (the asymmetric
    /// loss itself) wins. Actions with fewer than [`MIN_ACTION_SAMPLES`]
    /// samples get a constant fit, and actions never logged fall back to a
    /// constant over all rewards.
    pub fn fit(train: &LoggedDataset<T>, budget: &UncertaintyBudget<T>, grid: &BoostGrid<T>, seed: u64) -> Result<Self> {
        grid.validate()?;
        let k = train.k();
        let params = grid.params();
        let per_action: Vec<(Array2<T>, Vec<T>, usize)> = (0..k)
            .map(|a| {
                let mut idx: Vec<usize> = (0..train.n()).filter(|&i| train.actions[i] == a).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(a as u64);
                idx.shuffle(&mut rng);
                let m = idx.len();
                let n_val = ((m as f64) * 0.2).round().max(1.0) as usize;
                let split_at = m.saturating_sub(n_val);
                (
                    train.contexts.select(Axis(0), &idx),
                    idx.iter().map(|&i| train.rewards[i]).collect(),
                    split_at,
                )
            })
            .collect();
        let specs = [
            AsymLossSpec::new(budget.alpha, Direction::Lower)?,
            AsymLossSpec::new(budget.alpha, Direction::Upper)?,
            AsymLossSpec::squared(),
        ];
        let jobs: Vec<(usize, Side)> =
            (0..k).flat_map(|a| [(a, Side::Lower), (a, Side::Upper), (a, Side::Point)]).collect();
        let fitted: Vec<Result<TreeEnsembleModel<T>>> = jobs
            .par_iter()
            .map(|&(a, side)| {
                let (x, y, split_at) = &per_action[a];
                fit_one(x.view(), y, *split_at, &specs[side as usize], &params, &train.rewards)
            })
            .collect();
        let mut out = Self { alpha: budget.alpha, lower: Vec::new(), upper: Vec::new(), point: Vec::new() };
        for ((_, side), model) in jobs.into_iter().zip(fitted) {
            let model = model?;
            match side {
                Side::Lower => out.lower.push(model),
                Side::Upper => out.upper.push(model),
                Side::Point => out.point.push(model),
            }
        }
        Ok(out)
    }

    pub fn k(&self) -> usize {
        self.point.len()
    }

    fn eval(models: &[TreeEnsembleModel<T>], contexts: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros((contexts.nrows(), models.len()));
        for (a, m) in models.iter().enumerate() {
            for (i, x) in contexts.rows().into_iter().enumerate() {
                out[[i, a]] = m.predict_row(x);
            }
        }
        out
    }

    pub fn point_preds(&self, contexts: ArrayView2<'_, T>) -> Array2<T> {
        Self::eval(&self.point, contexts)
    }

    /// Evaluates all three models and enforces `f <= mu <= g` by clamping.
    pub fn tables(&self, contexts: ArrayView2<'_, T>) -> Result<RewardTables<T>> {
        let mut lower = Self::eval(&self.lower, contexts);
        let mut upper = Self::eval(&self.upper, contexts);
        let point = Self::eval(&self.point, contexts);
        let mut clamped = 0;
        for (ix, mu) in point.indexed_iter() {
            if lower[ix] > *mu {
                lower[ix] = *mu;
                clamped += 1;
            }
            if upper[ix] < *mu {
                upper[ix] = *mu;
                clamped += 1;
            }
        }
        if clamped > 0 {
            log::warn!("clamped {clamped} reward-bound entries to keep lower <= point <= upper");
        }
        Ok(RewardTables { bounds: RewardBoundsTable::new(lower, upper)?, point, clamped })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fits the surrogate models on `train` and evaluates them on its contexts.
pub fn build_reward_bounds<T: Scalar>(
    train: &LoggedDataset<T>,
    budget: &UncertaintyBudget<T>,
    grid: &BoostGrid<T>,
    seed: u64,
) -> Result<RewardBoundsTable<T>> {
    Ok(RewardModels::fit(train, budget, grid, seed)?.tables(train.contexts.view())?.bounds)
}
