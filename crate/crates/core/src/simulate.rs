//! Supervised-to-bandit conversion, splits, runtime perturbations and
//! simulation-only metrics.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aux_erm::RewardBoundsTable;
use crate::bounds::{
    dr_bound, ips_bound, nips_bound_exact, nips_bound_greedy, rm_bound, tips_bound, Direction, EstimatorKind,
};
use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::{dr_value, ips_value, nips_value, rm_value, tips_value, PolicyProbs};
use crate::geometry::UncertaintyBudget;
use crate::policy::softmax_rows;
use crate::scalar::{ordered_sum, Scalar};

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub rm_train: f64,
    pub rm_val: f64,
    pub seed: u64,
    /// Keep the original row order instead of permuting.
    pub by_order: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train: 0.56, val: 0.24, test: 0.20, rm_train: 0.8, rm_val: 0.2, seed: 0, by_order: false }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test, self.rm_train, self.rm_val];
        if parts.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return invalid("split fractions must be positive");
        }
        if (self.train + self.val + self.test - 1.0).abs() > 1e-12 || (self.rm_train + self.rm_val - 1.0).abs() > 1e-12 {
            return invalid("split fractions must sum to 1");
        }
        Ok(())
    }

    fn order(&self, n: usize, stream: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        if !self.by_order {
            idx.shuffle(&mut rng_for(self.seed, stream));
        }
        idx
    }

    /// Train/validation/test index sets; sizes are `round(n f)` for train and
    /// validation, the rest goes to test.
    pub fn split_indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let idx = self.order(n, 0);
        let n_train = ((n as f64) * self.train).round() as usize;
        let n_val = (((n as f64) * self.val).round() as usize).min(n - n_train);
        let (tr, rest) = idx.split_at(n_train);
        let (va, te) = rest.split_at(n_val);
        Ok((tr.to_vec(), va.to_vec(), te.to_vec()))
    }

    pub fn rm_split_indices(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        self.validate()?;
        let idx = self.order(n, 1);
        let n_train = ((n as f64) * self.rm_train).round() as usize;
        let (tr, va) = idx.split_at(n_train);
        Ok((tr.to_vec(), va.to_vec()))
    }
}

fn nonempty<T>(parts: &[&[T]], what: &str) -> Result<()> {
    if parts.iter().any(|p| p.is_empty()) {
        return invalid(format!("{what} split produced an empty part"));
    }
    Ok(())
}

pub fn split<T: Scalar>(
    ds: &LoggedDataset<T>,
    spec: &SplitSpec,
) -> Result<(LoggedDataset<T>, LoggedDataset<T>, LoggedDataset<T>)> {
    let (a, b, c) = spec.split_indices(ds.n())?;
    nonempty(&[&a, &b, &c], "train/validation/test")?;
    Ok((ds.subset(&a), ds.subset(&b), ds.subset(&c)))
}

pub fn rm_split<T: Scalar>(train: &LoggedDataset<T>, spec: &SplitSpec) -> Result<(LoggedDataset<T>, LoggedDataset<T>)> {
    let (a, b) = spec.rm_split_indices(train.n())?;
    nonempty(&[&a, &b], "reward-model")?;
    Ok((train.subset(&a), train.subset(&b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Fraction of rows used to fit the logging model.
    pub fit_fraction: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Full-batch gradient steps for the logistic model.
    pub fit_steps: usize,
    pub fit_lr: f64,
    pub l2: f64,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        Self { fit_fraction: 0.3, temperature: 2.0, seed: 0, fit_steps: 300, fit_lr: 0.5, l2: 1e-3 }
    }
}

impl LoggingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fit_fraction > 0.0 && self.fit_fraction < 1.0) {
            return invalid("logging fit fraction must be in (0, 1)");
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return invalid("logging temperature must be positive");
        }
        if !(self.fit_lr > 0.0) || !(self.l2 >= 0.0) {
            return invalid("logging fit_lr must be positive and l2 nonnegative");
        }
        Ok(())
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LogisticModel {
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], k: usize, steps: usize, lr: f64, l2: f64) -> Result<Self> {
        let (m, d) = x.dim();
        if m == 0 || labels.len() != m {
            return Err(Error::Shape(format!("{m} rows vs {} labels", labels.len())));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let z = (&x - &mean) / &scale;
        let mut model = Self { mean, scale, weights: Array2::zeros((k, d)), bias: Array1::zeros(k) };
        for _ in 0..steps {
            let mut p = softmax_rows(&(z.dot(&model.weights.t()) + &model.bias));
            for (i, &y) in labels.iter().enumerate() {
                p[[i, y]] -= 1.0;
            }
            let gw = p.t().dot(&z) / m as f64 + &model.weights * l2;
            let gb = p.sum_axis(Axis(0)) / m as f64;
            model.weights.scaled_add(-lr, &gw);
            model.bias.scaled_add(-lr, &gb);
        }
        Ok(model)
    }

    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        ((&x - &self.mean) / &self.scale).dot(&self.weights.t()) + &self.bias
    }
}

/// Floor mixed into every logging row so propensities stay strictly positive.
pub const PROPENSITY_FLOOR: f64 = 1e-9;

fn sample_categorical(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (a, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return a;
        }
    }
    row.len() - 1
}

/// Turns a labelled classification set into logged bandit feedback with
/// rewards `r(a) = I(a = label)`. The logging policy is a temperature-scaled
/// softmax of a logistic model fit on a random `fit_fraction` of the rows;
/// each row's action is drawn from its own seeded stream.
pub fn convert_supervised(
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &LoggingConfig,
) -> Result<LoggedDataset<f64>> {
    cfg.validate()?;
    let n = features.nrows();
    if n == 0 || labels.len() != n {
        return Err(Error::Shape(format!("{n} feature rows vs {} labels", labels.len())));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return invalid("features must be finite");
    }
    let k = labels.iter().max().expect("non-empty") + 1;
    let mut seen = vec![false; k];
    labels.iter().for_each(|&y| seen[y] = true);
    let distinct = seen.iter().filter(|&&s| s).count();
    if k < 2 || distinct < k {
        return invalid(format!("need at least 2 classes with every label in 0..k present, got {distinct} of {k}"));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(cfg.seed, u64::MAX));
    let m = (((n as f64) * cfg.fit_fraction).round() as usize).clamp(1, n);
    let fit_idx = &idx[..m];
    let fx = features.select(Axis(0), fit_idx);
    let fy: Vec<usize> = fit_idx.iter().map(|&i| labels[i]).collect();
    let model = LogisticModel::fit(fx.view(), &fy, k, cfg.fit_steps, cfg.fit_lr, cfg.l2)?;

    let mut props = softmax_rows(&(model.logits(features) / cfg.temperature));
    props.mapv_inplace(|p| (1.0 - PROPENSITY_FLOOR) * p + PROPENSITY_FLOOR / k as f64);
    let mut full = Array2::zeros((n, k));
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for i in 0..n {
        full[[i, labels[i]]] = 1.0;
        let u: f64 = rng_for(cfg.seed, i as u64).random();
        let a = sample_categorical(props.row(i).as_slice().expect("standard layout"), u);
        actions.push(a);
        rewards.push(full[[i, a]]);
    }
    LoggedDataset::new(features.to_owned(), actions, rewards, props, Some(full))
}

/// Gaussian-blob classification data: `k` class centres drawn from
/// `N(0, separation^2 I)`, unit-variance noise around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub separation: f64,
    pub seed: u64,
}

pub fn synthetic_classification(spec: &SyntheticSpec) -> Result<(Array2<f64>, Vec<usize>)> {
    if spec.n < spec.k || spec.k < 2 || spec.d == 0 {
        return invalid("synthetic data needs n >= k >= 2 and d >= 1");
    }
    let mut rng = rng_for(spec.seed, 0);
    let centres = Array2::from_shape_simple_fn((spec.k, spec.d), || {
        let e: f64 = StandardNormal.sample(&mut rng);
        spec.separation * e
    });
    // every class appears at least once
    let mut labels: Vec<usize> = (0..spec.n).map(|i| if i < spec.k { i } else { rng.random_range(0..spec.k) }).collect();
    labels.shuffle(&mut rng);
    let x = Array2::from_shape_fn((spec.n, spec.d), |(i, j)| {
        let e: f64 = StandardNormal.sample(&mut rng);
        centres[[labels[i], j]] + e
    });
    Ok((x, labels))
}

/// `(1/n) sum_i sum_a r_i(a) pi(a|x_i)`.
pub fn oracle_value<T: Scalar>(policy: &PolicyProbs<T>, full_rewards: &Array2<T>) -> Result<T> {
    if policy.probs.dim() != full_rewards.dim() {
        return Err(Error::Shape(format!("policy {:?} vs rewards {:?}", policy.probs.dim(), full_rewards.dim())));
    }
    let n = policy.n();
    let total = ordered_sum((0..n).map(|i| {
        ordered_sum((0..policy.k()).map(|a| policy.probs[[i, a]] * full_rewards[[i, a]]))
    }));
    Ok(total / T::from_usize_lossy(n))
}

const PERTURB_TRIES: usize = 100;

/// Draws `pi_u ∝ pi0 e^u` with `u` uniform in `[-alpha/2, alpha/2]` per entry,
/// which keeps every ratio `pi_u / pi0` inside `[e^-alpha, e^alpha]`. Rows that
/// miss the bound through rounding are redrawn, then the half-width shrinks.
pub fn sample_perturbed_policy<T: Scalar>(
    propensities: &Array2<T>,
    budget: &UncertaintyBudget<T>,
    seed: u64,
) -> Array2<T> {
    if budget.alpha == T::zero() {
        return propensities.clone();
    }
    let mut out = propensities.clone();
    let slack = T::lit(1e-12);
    for (i, row) in propensities.rows().into_iter().enumerate() {
        let mut rng = rng_for(seed, i as u64);
        let mut beta = budget.alpha.to_f64_lossy() / 2.0;
        'row: loop {
            for _ in 0..PERTURB_TRIES {
                let raw: Vec<T> =
                    row.iter().map(|&p| p * T::lit(rng.random_range(-beta..=beta)).exp()).collect();
                let z = ordered_sum(raw.iter().copied());
                let cand: Vec<T> = raw.into_iter().map(|v| v / z).collect();
                let ok = cand.iter().zip(row.iter()).all(|(&u, &p)| {
                    let ratio = u / p;
                    ratio <= budget.ratio_hi * (T::one() + slack) && ratio >= budget.ratio_lo * (T::one() - slack)
                });
                if ok {
                    for (a, v) in cand.into_iter().enumerate() {
                        out[[i, a]] = v;
                    }
                    break 'row;
                }
            }
            beta /= 2.0;
            if beta < 1e-300 {
                break;
            }
        }
    }
    out
}

/// Point estimate minus lower bound for one estimator. RM and DR need the
/// bounds table and point predictions; TIPS uses the budget's cutoff.
pub fn fluctuation<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    kind: EstimatorKind,
    reward_bounds: Option<(&RewardBoundsTable<T>, &Array2<T>)>,
) -> Result<T> {
    let need = || Error::MissingBounds(format!("{} fluctuation needs reward bounds and point predictions", kind.name()));
    match kind {
        EstimatorKind::Ips => Ok(ips_value(ds, policy)? - ips_bound(ds, policy, budget, Direction::Lower)?.value),
        EstimatorKind::Tips => {
            Ok(tips_value(ds, policy, budget.cutoff_q)? - tips_bound(ds, policy, budget, Direction::Lower)?.value)
        }
        EstimatorKind::NipsGreedy => Ok(nips_value(ds, policy)? - nips_bound_greedy(ds, policy, budget)?),
        EstimatorKind::NipsExact => Ok(nips_value(ds, policy)? - nips_bound_exact(ds, policy, budget)?),
        EstimatorKind::Rm => {
            let (table, point) = reward_bounds.ok_or_else(need)?;
            Ok(rm_value(ds, policy, point)? - rm_bound(ds, policy, budget, table, point, Direction::Lower)?)
        }
        EstimatorKind::Dr => {
            let (table, point) = reward_bounds.ok_or_else(need)?;
            Ok(dr_value(ds, policy, point)? - dr_bound(ds, policy, budget, table, Direction::Lower)?.value)
        }
    }
}
