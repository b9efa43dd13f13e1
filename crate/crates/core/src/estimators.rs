//! Point estimators of policy value from logged data.
//!
//! All sums run sequentially in index order so results are reproducible bit
//! for bit.

use ndarray::Array2;

use crate::data::{row_sum_tol, LoggedDataset};
use crate::error::{invalid, Error, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Candidate-policy probabilities `pi(.|x_i)`, one simplex row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProbs<T> {
    pub probs: Array2<T>,
}

impl<T: Scalar> PolicyProbs<T> {
    pub fn new(probs: Array2<T>) -> Result<Self> {
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < T::zero() || *p > T::one()) {
                return invalid(format!("policy row {i} has entries outside [0,1]"));
            }
            let s = ordered_sum(row.iter().copied());
            if (s - T::one()).abs() > row_sum_tol::<T>() {
                return invalid(format!("policy row {i} sums to {s}"));
            }
        }
        Ok(Self { probs })
    }

    /// Deterministic policy putting all mass on `choice[i]`.
    pub fn one_hot(choice: &[usize], k: usize) -> Result<Self> {
        let mut probs = Array2::zeros((choice.len(), k));
        for (i, &a) in choice.iter().enumerate() {
            if a >= k {
                return invalid(format!("action {a} out of range"));
            }
            probs[[i, a]] = T::one();
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize, k: usize) -> Self {
        Self { probs: Array2::from_elem((n, k), T::one() / T::from_usize_lossy(k)) }
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }
}

pub(crate) fn check_policy<T: Scalar>(ds: &LoggedDataset<T>, policy: &PolicyProbs<T>) -> Result<()> {
    if policy.probs.dim() != (ds.n(), ds.k()) {
        return Err(Error::Shape(format!(
            "policy {:?} vs dataset ({}, {})",
            policy.probs.dim(),
            ds.n(),
            ds.k()
        )));
    }
    Ok(())
}

pub(crate) fn check_preds<T: Scalar>(ds: &LoggedDataset<T>, preds: &Array2<T>, what: &str) -> Result<()> {
    if preds.dim() != (ds.n(), ds.k()) {
        return Err(Error::Shape(format!(
            "{what} {:?} vs dataset ({}, {})",
            preds.dim(),
            ds.n(),
            ds.k()
        )));
    }
    Ok(())
}

pub(crate) fn check_cutoff<T: Scalar>(q: T) -> Result<()> {
    if !(q >= T::zero() && q < T::one()) {
        return invalid(format!("cutoff q must lie in [0,1), got {q}"));
    }
    Ok(())
}

/// `(1/n) sum_i pi(a_i|x_i) / pi0(a_i|x_i) * r_i`
pub fn ips_value<T: Scalar>(ds: &LoggedDataset<T>, policy: &PolicyProbs<T>) -> Result<T> {
    check_policy(ds, policy)?;
    let total = ordered_sum((0..ds.n()).map(|i| {
        policy.probs[[i, ds.actions[i]]] / ds.logged_propensity(i) * ds.rewards[i]
    }));
    Ok(total / T::from_usize_lossy(ds.n()))
}

/// IPS with the logged propensity floored at `q`.
pub fn tips_value<T: Scalar>(ds: &LoggedDataset<T>, policy: &PolicyProbs<T>, q: T) -> Result<T> {
    check_policy(ds, policy)?;
    check_cutoff(q)?;
    let total = ordered_sum((0..ds.n()).map(|i| {
        policy.probs[[i, ds.actions[i]]] / q.max(ds.logged_propensity(i)) * ds.rewards[i]
    }));
    Ok(total / T::from_usize_lossy(ds.n()))
}

/// Self-normalized IPS: `sum_i w_i r_i / sum_i w_i`.
pub fn nips_value<T: Scalar>(ds: &LoggedDataset<T>, policy: &PolicyProbs<T>) -> Result<T> {
    check_policy(ds, policy)?;
    let (mut num, mut den) = (T::zero(), T::zero());
    for i in 0..ds.n() {
        let w = policy.probs[[i, ds.actions[i]]] / ds.logged_propensity(i);
        num += w * ds.rewards[i];
        den += w;
    }
    if den <= T::zero() {
        return Err(Error::DegenerateWeights);
    }
    Ok(num / den)
}

/// Direct method: `(1/n) sum_i sum_a pi(a|x_i) rhat(a, x_i)`.
pub fn rm_value<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    model_preds: &Array2<T>,
) -> Result<T> {
    check_policy(ds, policy)?;
    check_preds(ds, model_preds, "model predictions")?;
    let total = ordered_sum((0..ds.n()).map(|i| {
        ordered_sum((0..ds.k()).map(|a| policy.probs[[i, a]] * model_preds[[i, a]]))
    }));
    Ok(total / T::from_usize_lossy(ds.n()))
}

/// Doubly robust estimate, written per sample as
/// `sum_a pi(a|x_i) rhat(a,x_i) + pi(a_i|x_i) / pi0(a_i|x_i) (r_i - rhat(a_i,x_i))`.
pub fn dr_value<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    model_preds: &Array2<T>,
) -> Result<T> {
    check_policy(ds, policy)?;
    check_preds(ds, model_preds, "model predictions")?;
    let total = ordered_sum((0..ds.n()).map(|i| {
        let ai = ds.actions[i];
        let direct = ordered_sum((0..ds.k()).map(|a| policy.probs[[i, a]] * model_preds[[i, a]]));
        direct
            + policy.probs[[i, ai]] / ds.logged_propensity(i) * (ds.rewards[i] - model_preds[[i, ai]])
    }));
    Ok(total / T::from_usize_lossy(ds.n()))
}
