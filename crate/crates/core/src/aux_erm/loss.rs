use serde::{Deserialize, Serialize};

use crate::bounds::Direction;
use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Asymmetric squared loss `(r - f)_+^2 + weight (r - f)_-^2`, with
/// `weight = e^{2 alpha}` for the lower surrogate and `e^{-2 alpha}` for the
/// upper one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymLossSpec<T> {
    pub alpha: T,
    pub direction: Direction,
    pub weight: T,
}

impl<T: Scalar> AsymLossSpec<T> {
    pub fn new(alpha: T, direction: Direction) -> Result<Self> {
        if !alpha.is_finite() || alpha < T::zero() {
            return invalid(format!("alpha must be nonnegative, got {alpha}"));
        }
        let two_alpha = alpha + alpha;
        let weight = match direction {
            Direction::Lower => two_alpha.exp(),
            Direction::Upper => (-two_alpha).exp(),
        };
        Ok(Self { alpha, direction, weight })
    }

    /// Plain least squares (`weight = 1`).
    pub fn squared() -> Self {
        Self { alpha: T::zero(), direction: Direction::Lower, weight: T::one() }
    }

    /// A spec with an explicit negative-side weight.
    pub fn with_weight(weight: T) -> Result<Self> {
        if !(weight > T::zero()) || !weight.is_finite() {
            return invalid("loss weight must be positive");
        }
        let direction = if weight >= T::one() { Direction::Lower } else { Direction::Upper };
        Ok(Self { alpha: weight.ln().abs() / T::lit(2.0), direction, weight })
    }
}

#[inline]
pub fn asym_loss<T: Scalar>(r: T, f: T, spec: &AsymLossSpec<T>) -> T {
    let e = r - f;
    if e >= T::zero() {
        e * e
    } else {
        spec.weight * e * e
    }
}

/// Gradient and Hessian of [`asym_loss`] with respect to `f`. At the kink the
/// positive side is used: `(0, 2)`.
#[inline]
pub fn asym_loss_grad_hess<T: Scalar>(r: T, f: T, spec: &AsymLossSpec<T>) -> (T, T) {
    let e = r - f;
    let two = T::lit(2.0);
    if e >= T::zero() {
        (-two * e, two)
    } else {
        (-two * spec.weight * e, two * spec.weight)
    }
}

/// Unique minimizer of `sum_j asym_loss(r_j, c)` over constants `c`.
///
/// On each gap between consecutive sorted rewards the objective is a plain
/// quadratic whose stationary point is
/// `(sum_{above} r + weight sum_{below} r) / (m_above + weight m_below)`;
/// that point is clamped into its gap and the best gap wins.
pub fn fit_constant<T: Scalar>(rewards: &[T], spec: &AsymLossSpec<T>) -> Result<T> {
    if rewards.is_empty() {
        return invalid("fit_constant needs at least one reward");
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return invalid("fit_constant needs finite rewards");
    }
    let mut sorted = rewards.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let m = sorted.len();
    let w = spec.weight;

    // prefix sums of r and r^2
    let mut s1 = vec![T::zero(); m + 1];
    let mut s2 = vec![T::zero(); m + 1];
    for j in 0..m {
        s1[j + 1] = s1[j] + sorted[j];
        s2[j + 1] = s2[j] + sorted[j] * sorted[j];
    }
    // loss with the first `j` points below c and the rest at or above it
    let loss_at = |j: usize, c: T| {
        let (lo1, lo2, lo_n) = (s1[j], s2[j], T::from_usize_lossy(j));
        let (hi1, hi2, hi_n) = (s1[m] - s1[j], s2[m] - s2[j], T::from_usize_lossy(m - j));
        (hi2 - T::lit(2.0) * c * hi1 + hi_n * c * c) + w * (lo2 - T::lit(2.0) * c * lo1 + lo_n * c * c)
    };

    let mut best: Option<(T, T)> = None;
    for j in 0..=m {
        // gap j spans [sorted[j-1], sorted[j]]
        if j > 0 && j < m && sorted[j - 1] == sorted[j] {
            continue;
        }
        let below_n = T::from_usize_lossy(j);
        let above_n = T::from_usize_lossy(m - j);
        let denom = above_n + w * below_n;
        let mut c = ((s1[m] - s1[j]) + w * s1[j]) / denom;
        if j > 0 {
            c = c.max(sorted[j - 1]);
        }
        if j < m {
            c = c.min(sorted[j]);
        }
        let l = loss_at(j, c);
        if best.map_or(true, |(_, bl)| l < bl) {
            best = Some((c, l));
        }
    }
    Ok(best.expect("at least one gap").0)
}
