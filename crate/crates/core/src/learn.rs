//! Minorize-maximize policy learning on the DR lower bound.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aux_erm::RewardBoundsTable;
use crate::bounds::{dr_bound, BoundCertificate, Direction};
use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::UncertaintyBudget;
use crate::policy::{adam_maximize, policy_probs, PolicyClass, PolicyModel};
use crate::scalar::Scalar;
use crate::simulate::oracle_value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnConfig {
    pub alpha: f64,
    pub policy: PolicyClass,
    /// Adam steps per outer iteration.
    pub inner_steps: usize,
    pub lr: f64,
    pub max_outer: usize,
    /// Relative improvement below which the loop stops.
    pub tol: f64,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            policy: PolicyClass::TwoLayerMlp { hidden: 5 },
            inner_steps: 200,
            lr: 0.05,
            max_outer: 100,
            tol: 1e-6,
            seed: 0,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return invalid("alpha must be nonnegative");
        }
        if !(self.lr > 0.0) || !(self.tol >= 0.0) {
            return invalid("lr must be positive and tol nonnegative");
        }
        if self.inner_steps == 0 || self.max_outer == 0 {
            return invalid("inner_steps and max_outer must be at least 1");
        }
        if let PolicyClass::TwoLayerMlp { hidden: 0 } = self.policy {
            return invalid("hidden size must be at least 1");
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnRecord {
    pub iteration: usize,
    /// Surrogate value at the end of the inner maximization.
    pub surrogate: f64,
    /// Re-minimized DR lower bound of the candidate.
    pub lower_bound: f64,
    pub oracle: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearnTrace {
    pub records: Vec<LearnRecord>,
}

impl LearnTrace {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut records = Vec::new();
        for line in input.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }

    /// Lower bounds of the accepted iterations, in order.
    pub fn accepted_bounds(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.accepted).map(|r| r.lower_bound).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnResult<T> {
    /// Last accepted policy.
    pub policy: PolicyModel<T>,
    pub trace: LearnTrace,
    pub initial_lower_bound: T,
    pub final_lower_bound: T,
    pub certificate: BoundCertificate<T>,
}

fn monitor_oracle<T: Scalar>(policy: &PolicyModel<T>, monitor: Option<&LoggedDataset<T>>) -> Result<Option<f64>> {
    let Some(ds) = monitor else { return Ok(None) };
    let Some(full) = ds.full_rewards.as_ref() else { return Ok(None) };
    let probs = policy_probs(policy, ds.contexts.view())?;
    Ok(Some(oracle_value(&probs, full)?.to_f64_lossy()))
}

/// Alternates between solving the DR bounding program at the current policy
/// and running Adam on the surrogate it certifies.
///
/// A candidate is accepted only if its re-minimized lower bound is at least
/// the current one; the first rejection ends the loop, as does an accepted
/// gain of at most `tol * |old bound|`. Accepted bounds therefore never
/// decrease. `monitor`, when it carries full rewards, adds oracle values.
pub fn minorize_maximize<T: Scalar>(
    train: &LoggedDataset<T>,
    budget: &UncertaintyBudget<T>,
    reward_bounds: &RewardBoundsTable<T>,
    config: &LearnConfig,
    monitor: Option<&LoggedDataset<T>>,
) -> Result<LearnResult<T>> {
    config.validate()?;
    if (budget.alpha.to_f64_lossy() - config.alpha).abs() > 1e-12 {
        return invalid(format!("budget alpha {} differs from config alpha {}", budget.alpha, config.alpha));
    }
    reward_bounds.check_shape(train.n(), train.k())?;
    let mut policy = config.policy.init::<T>(train.d(), train.k(), config.seed)?;
    let bound = |p: &PolicyModel<T>| -> Result<BoundCertificate<T>> {
        dr_bound(train, &policy_probs(p, train.contexts.view())?, budget, reward_bounds, Direction::Lower)
    };
    let mut cert = bound(&policy)?;
    let initial = cert.value;
    let mut trace = LearnTrace::default();
    let lr = T::lit(config.lr);
    for iteration in 1..=config.max_outer {
        let (candidate, values) = adam_maximize(&policy, train, &cert, config.inner_steps, lr)?;
        let surrogate = *values.last().expect("at least one value");
        let new_cert = bound(&candidate)?;
        let (old, new) = (cert.value, new_cert.value);
        if !new.is_finite() {
            return Err(Error::NonConvergence { solver: "minorize-maximize", iterations: iteration });
        }
        let accepted = new >= old;
        let current = if accepted { &candidate } else { &policy };
        trace.records.push(LearnRecord {
            iteration,
            surrogate: surrogate.to_f64_lossy(),
            lower_bound: new.to_f64_lossy(),
            oracle: monitor_oracle(current, monitor)?,
            accepted,
        });
        if !accepted {
            break;
        }
        policy = candidate;
        cert = new_cert;
        if new - old <= T::lit(config.tol) * old.abs() {
            break;
        }
    }
    Ok(LearnResult { policy, trace, initial_lower_bound: initial, final_lower_bound: cert.value, certificate: cert })
}

/// One point of the model-selection grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Candidate {
    pub policy: PolicyClass,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub best: usize,
    /// Validation DR lower bound per candidate.
    pub scores: Vec<T>,
    pub result: LearnResult<T>,
}

/// Runs [`minorize_maximize`] for every candidate and keeps the one whose
/// policy has the highest DR lower bound on the validation split.
#[allow(clippy::too_many_arguments)]
pub fn select_and_learn<T: Scalar>(
    train: &LoggedDataset<T>,
    val: &LoggedDataset<T>,
    budget: &UncertaintyBudget<T>,
    train_bounds: &RewardBoundsTable<T>,
    val_bounds: &RewardBoundsTable<T>,
    config: &LearnConfig,
    candidates: &[Candidate],
    monitor: Option<&LoggedDataset<T>>,
) -> Result<Selection<T>> {
    if candidates.is_empty() {
        return invalid("no learning candidates");
    }
    val_bounds.check_shape(val.n(), val.k())?;
    let runs: Vec<Result<(T, LearnResult<T>)>> = candidates
        .par_iter()
        .map(|c| {
            let cfg = LearnConfig { policy: c.policy, lr: c.lr, ..config.clone() };
            let res = minorize_maximize(train, budget, train_bounds, &cfg, monitor)?;
            let probs = policy_probs(&res.policy, val.contexts.view())?;
            let score = dr_bound(val, &probs, budget, val_bounds, Direction::Lower)?.value;
            Ok((score, res))
        })
        .collect();
    let mut scores = Vec::with_capacity(runs.len());
    let mut results = Vec::with_capacity(runs.len());
    for r in runs {
        let (s, res) = r?;
        scores.push(s);
        results.push(res);
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    let result = results.swap_remove(best);
    Ok(Selection { best, scores, result })
}
