//! Generalization slack of the learned lower bound and Rademacher estimates.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::PolicyProbs;
use crate::policy::{policy_probs, PolicyClass};
use crate::scalar::{ordered_sum, Scalar};

/// Parameter vectors drawn by [`rademacher_sampled_class`].
pub const SAMPLED_CLASS_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackInputs<T> {
    /// Propensity floor, in `(0, 1/2)`.
    pub q: T,
    pub m_alpha: T,
    pub r_bar: T,
    pub n: u64,
    pub delta: T,
    pub rademacher: T,
}

impl<T: Scalar> SlackInputs<T> {
    pub fn validate(&self) -> Result<()> {
        let half = T::lit(0.5);
        if !(self.q > T::zero() && self.q < half) {
            return invalid(format!("q must lie in (0, 1/2), got {}", self.q));
        }
        if !(self.m_alpha >= T::zero()) || !(self.r_bar >= T::zero()) || !(self.rademacher >= T::zero()) {
            return invalid("M_alpha, r_bar and the Rademacher complexity must be nonnegative");
        }
        if ![self.m_alpha, self.r_bar, self.rademacher].iter().all(|v| v.is_finite()) {
            return invalid("slack inputs must be finite");
        }
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        // log(3/delta) must stay positive; delta >= 1 makes the statement vacuous
        if !(self.delta > T::zero() && self.delta < T::lit(3.0)) {
            return invalid(format!("delta must lie in (0, 3), got {}", self.delta));
        }
        Ok(())
    }
}

/// `-6((q+1)/q M + r) sqrt(2 log(3/delta) / n) - 2 max(M, r/q) R_n`.
pub fn generalization_slack<T: Scalar>(inputs: &SlackInputs<T>) -> Result<T> {
    inputs.validate()?;
    let SlackInputs { q, m_alpha, r_bar, n, delta, rademacher } = *inputs;
    let n = T::from_u64(n).expect("count representable");
    let conc = ((T::lit(2.0) * (T::lit(3.0) / delta).ln()) / n).sqrt();
    let first = T::lit(6.0) * ((q + T::one()) / q * m_alpha + r_bar) * conc;
    let second = T::lit(2.0) * m_alpha.max(r_bar / q) * rademacher;
    Ok(-first - second)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte-Carlo estimate of `E sup_pi |(1/n) sum_{i,a} eps_{i,a} pi(a|x_i)|`
/// over a finite set of policies. Draw `j` uses its own seeded stream.
pub fn rademacher_mc<T: Scalar>(policy_set: &[PolicyProbs<T>], draws: usize, seed: u64) -> Result<RademacherEstimate> {
    let Some(first) = policy_set.first() else {
        return invalid("policy set must not be empty");
    };
    let (n, k) = first.probs.dim();
    if policy_set.iter().any(|p| p.probs.dim() != (n, k)) {
        return invalid("policies in the set must share their shape");
    }
    if draws == 0 {
        return invalid("draws must be at least 1");
    }
    let sups: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let signs: Vec<f64> = (0..n * k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
            policy_set
                .iter()
                .map(|p| {
                    let s = ordered_sum(p.probs.iter().zip(&signs).map(|(&v, &e)| v.to_f64_lossy() * e));
                    (s / n as f64).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let mean = ordered_sum(sups.iter().copied()) / draws as f64;
    let var = if draws > 1 {
        ordered_sum(sups.iter().map(|s| (s - mean) * (s - mean))) / (draws - 1) as f64
    } else {
        0.0
    };
    Ok(RademacherEstimate { mean, std_error: (var / draws as f64).sqrt(), draws })
}

/// Heuristic lower estimate for a parametric class: the sup runs over
/// `samples` random parameter vectors (entries standard uniform on
/// `[-scale, scale]`) instead of the whole class.
pub fn rademacher_sampled_class<T: Scalar>(
    class: PolicyClass,
    contexts: ArrayView2<'_, T>,
    k: usize,
    samples: usize,
    scale: f64,
    draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if samples == 0 || !(scale > 0.0) {
        return invalid("need at least one sample and a positive scale");
    }
    let mut set = Vec::with_capacity(samples);
    for s in 0..samples {
        let mut model = class.init::<T>(contexts.ncols(), k, seed.wrapping_add(s as u64))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX - s as u64);
        let theta: Vec<T> = (0..model.n_params()).map(|_| T::lit(rng.random_range(-scale..=scale))).collect();
        model.set_params(&theta)?;
        set.push(policy_probs(&model, contexts)?);
    }
    rademacher_mc(&set, draws, seed)
}
