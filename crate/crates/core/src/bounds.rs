//! Worst-case (and best-case) values of each estimator when the logging
//! propensities are replaced by any policy inside the uncertainty ball.
//!
//! IPS, truncated IPS and DR separate over samples and are monotone in the
//! optimization-policy mass, so their programs are solved exactly by picking
//! interval endpoints. The normalized estimator couples all samples and is
//! handled either greedily or by Dinkelbach iteration on small problems.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::aux_erm::RewardBoundsTable;
use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::{check_policy, check_preds, PolicyProbs};
use crate::geometry::{
    feasible_interval, feasible_interval_subnormalized, feasible_interval_truncated, FeasibleInterval,
    UncertaintyBudget,
};
use crate::scalar::{ordered_sum, Scalar};

/// Default cap on `n * k` for [`nips_bound_exact`].
pub const NIPS_EXACT_GUARD: usize = 64;
pub const DINKELBACH_TOL: f64 = 1e-10;
pub const DINKELBACH_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Lower,
    Upper,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Lower => "lower",
            Direction::Upper => "upper",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(Direction::Lower),
            "upper" => Ok(Direction::Upper),
            other => invalid(format!("unknown direction '{other}'")),
        }
    }
}

/// The estimators that have a robust counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Ips,
    Tips,
    NipsGreedy,
    NipsExact,
    Rm,
    Dr,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ips => "ips",
            EstimatorKind::Tips => "tips",
            EstimatorKind::NipsGreedy => "nips-greedy",
            EstimatorKind::NipsExact => "nips-exact",
            EstimatorKind::Rm => "rm",
            EstimatorKind::Dr => "dr",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ips" => EstimatorKind::Ips,
            "tips" => EstimatorKind::Tips,
            "nips-greedy" | "nips" => EstimatorKind::NipsGreedy,
            "nips-exact" => EstimatorKind::NipsExact,
            "rm" => EstimatorKind::Rm,
            "dr" => EstimatorKind::Dr,
            other => return invalid(format!("unknown estimator '{other}'")),
        })
    }
}

/// A bound value and the optimization policy (and, for DR, reward model)
/// attaining it.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundCertificate<T> {
    pub value: T,
    /// Minimizing (or maximizing) `p(a_i|x_i)` per sample.
    pub p_star: Vec<T>,
    /// `n x k` reward-model values chosen by the DR program.
    pub r_star: Option<Array2<T>>,
    pub direction: Direction,
}

#[derive(Serialize, Deserialize)]
struct CertificateDoc<T> {
    value: T,
    direction: Direction,
    p_star: Vec<T>,
    r_star: Option<Vec<Vec<T>>>,
}

impl<T: Scalar> BoundCertificate<T> {
    pub fn to_json(&self) -> Result<String> {
        let doc = CertificateDoc {
            value: self.value,
            direction: self.direction,
            p_star: self.p_star.clone(),
            r_star: self.r_star.as_ref().map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CertificateDoc<T> = serde_json::from_str(s)?;
        let r_star = match doc.r_star {
            None => None,
            Some(rows) => {
                let k = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != k) {
                    return Err(Error::Shape("ragged r_star".into()));
                }
                let flat: Vec<T> = rows.into_iter().flatten().collect();
                Some(Array2::from_shape_vec((flat.len() / k.max(1), k), flat).map_err(|e| Error::Shape(e.to_string()))?)
            }
        };
        Ok(Self { value: doc.value, p_star: doc.p_star, r_star, direction: doc.direction })
    }

    /// Checks `p*` against the normalized feasible intervals and `r*` against
    /// the reward bounds, with absolute tolerance `tol`.
    pub fn is_feasible(
        &self,
        ds: &LoggedDataset<T>,
        budget: &UncertaintyBudget<T>,
        bounds: Option<&RewardBoundsTable<T>>,
        tol: T,
    ) -> Result<bool> {
        if self.p_star.len() != ds.n() {
            return Ok(false);
        }
        for i in 0..ds.n() {
            let iv = feasible_interval(ds.propensities.row(i), ds.actions[i], budget)?;
            if !iv.contains(self.p_star[i], tol) {
                return Ok(false);
            }
        }
        if let (Some(r), Some(b)) = (&self.r_star, bounds) {
            if r.dim() != b.lower.dim() {
                return Ok(false);
            }
            let ok = r
                .indexed_iter()
                .all(|((i, a), &v)| v >= b.lower[[i, a]] - tol && v <= b.upper[[i, a]] + tol);
            return Ok(ok);
        }
        Ok(true)
    }
}

/// Endpoint minimizing (lower) or maximizing (upper) `c / p` over `p` in the
/// interval. A zero coefficient picks `hi`.
#[inline]
fn ratio_endpoint<T: Scalar>(c: T, iv: &FeasibleInterval<T>, dir: Direction) -> T {
    match dir {
        Direction::Lower => {
            if c >= T::zero() {
                iv.hi
            } else {
                iv.lo
            }
        }
        Direction::Upper => {
            if c > T::zero() {
                iv.lo
            } else {
                iv.hi
            }
        }
    }
}

fn ratio_bound<T, F>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    dir: Direction,
    interval: F,
) -> Result<BoundCertificate<T>>
where
    T: Scalar,
    F: Fn(usize) -> Result<FeasibleInterval<T>>,
{
    check_policy(ds, policy)?;
    let mut p_star = Vec::with_capacity(ds.n());
    let mut total = T::zero();
    for i in 0..ds.n() {
        let iv = interval(i)?;
        let c = policy.probs[[i, ds.actions[i]]] * ds.rewards[i];
        let p = ratio_endpoint(c, &iv, dir);
        total += c / p;
        p_star.push(p);
    }
    Ok(BoundCertificate { value: total / T::from_usize_lossy(ds.n()), p_star, r_star: None, direction: dir })
}

/// Robust IPS: per sample, `pi(a_i|x_i) r_i / p` at the endpoint of the
/// normalized feasible interval that minimizes (or maximizes) it.
pub fn ips_bound<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    dir: Direction,
) -> Result<BoundCertificate<T>> {
    ratio_bound(ds, policy, dir, |i| feasible_interval(ds.propensities.row(i), ds.actions[i], budget))
}

/// Robust truncated IPS over the cutoff-floored, unnormalized intervals.
pub fn tips_bound<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    dir: Direction,
) -> Result<BoundCertificate<T>> {
    ratio_bound(ds, policy, dir, |i| {
        feasible_interval_truncated(ds.propensities.row(i), ds.actions[i], budget).map_err(|e| match e {
            Error::Infeasible { lo, hi, .. } => Error::Infeasible { row: i, lo, hi },
            other => other,
        })
    })
}

/// Two-step greedy lower bound for the normalized estimator: take the IPS
/// minimizer `p*` and evaluate `n * V_ips / sum_i pi(a_i|x_i)/p*_i`.
///
/// Samples with `pi(a_i|x_i) r_i = 0` do not affect the IPS bound, so their
/// `p*` is free within the interval; it is set to the end that lowers the
/// ratio (the low end when the IPS numerator is positive, the high end
/// otherwise). The result is the normalized objective at a feasible point and
/// therefore never below [`nips_bound_exact`].
pub fn nips_bound_greedy<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
) -> Result<T> {
    let cert = ips_bound(ds, policy, budget, Direction::Lower)?;
    let numerator = cert.value * T::from_usize_lossy(ds.n());
    let mut weight_sum = T::zero();
    for i in 0..ds.n() {
        let pi = policy.probs[[i, ds.actions[i]]];
        let mut p = cert.p_star[i];
        if pi * ds.rewards[i] == T::zero() && pi > T::zero() {
            let iv = feasible_interval(ds.propensities.row(i), ds.actions[i], budget)?;
            p = if numerator > T::zero() { iv.lo } else { iv.hi };
        }
        weight_sum += pi / p;
    }
    if weight_sum <= T::zero() {
        return Err(Error::DegenerateWeights);
    }
    Ok(numerator / weight_sum)
}

/// Exact lower bound of the normalized estimator.
pub fn nips_bound_exact<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
) -> Result<T> {
    nips_bound_exact_with_guard(ds, policy, budget, NIPS_EXACT_GUARD)
}

/// Minimizes `sum_i w_i pi_i r_i / sum_i w_i pi_i` with `w_i = 1/p(a_i|x_i)`
/// over the sub-normalized feasible set by Dinkelbach iteration. Each
/// parametric subproblem `min_w sum_i w_i pi_i (r_i - lambda)` is linear over
/// a box and solved at its vertices.
pub fn nips_bound_exact_with_guard<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    guard: usize,
) -> Result<T> {
    check_policy(ds, policy)?;
    let size = ds.n() * ds.k();
    if size > guard {
        return Err(Error::GuardViolation { size, limit: guard });
    }
    let mut boxes = Vec::with_capacity(ds.n());
    for i in 0..ds.n() {
        let iv = feasible_interval_subnormalized(ds.propensities.row(i), ds.actions[i], budget)?;
        boxes.push((T::one() / iv.hi, T::one() / iv.lo));
    }
    let pis: Vec<T> = (0..ds.n()).map(|i| policy.probs[[i, ds.actions[i]]]).collect();
    if pis.iter().all(|p| *p <= T::zero()) {
        return Err(Error::DegenerateWeights);
    }
    let eval = |w: &[T]| {
        let num = ordered_sum((0..ds.n()).map(|i| w[i] * pis[i] * ds.rewards[i]));
        let den = ordered_sum((0..ds.n()).map(|i| w[i] * pis[i]));
        (num, den)
    };

    // Start from the logging policy, which is feasible.
    let w0: Vec<T> = (0..ds.n()).map(|i| T::one() / ds.logged_propensity(i)).collect();
    let (num, den) = eval(&w0);
    let mut lambda = num / den;
    let mut prev: Option<Vec<T>> = None;
    let tol = T::lit(DINKELBACH_TOL);
    for _ in 0..DINKELBACH_MAX_ITER {
        let w: Vec<T> = (0..ds.n())
            .map(|i| {
                let coef = pis[i] * (ds.rewards[i] - lambda);
                if coef >= T::zero() {
                    boxes[i].0
                } else {
                    boxes[i].1
                }
            })
            .collect();
        let (num, den) = eval(&w);
        let gap = num - lambda * den;
        if gap.abs() <= tol || prev.as_deref() == Some(&w[..]) {
            return Ok(lambda.min(num / den));
        }
        lambda = num / den;
        prev = Some(w);
    }
    Err(Error::NonConvergence { solver: "dinkelbach", iterations: DINKELBACH_MAX_ITER })
}

/// Robust reward-model value. For each `(i, a)` the action potential value
/// `(1 - u) f + u mu` is minimized over `u` in `[e^-a pi0, min(e^a pi0, 1)]`
/// (lower, with `f` the lower surrogate) or maximized with the upper surrogate.
/// No joint simplex constraint couples the actions, so the bound is
/// conservative.
pub fn rm_bound<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    bounds: &RewardBoundsTable<T>,
    point_preds: &Array2<T>,
    dir: Direction,
) -> Result<T> {
    check_policy(ds, policy)?;
    check_preds(ds, point_preds, "point predictions")?;
    bounds.check_shape(ds.n(), ds.k())?;
    let surrogate = match dir {
        Direction::Lower => &bounds.lower,
        Direction::Upper => &bounds.upper,
    };
    let total = ordered_sum((0..ds.n()).map(|i| {
        ordered_sum((0..ds.k()).map(|a| {
            let p0 = ds.propensities[[i, a]];
            let (u_lo, u_hi) = (budget.ratio_lo * p0, (budget.ratio_hi * p0).min(T::one()));
            let s = surrogate[[i, a]];
            let coef = point_preds[[i, a]] - s;
            let u = match dir {
                Direction::Lower => {
                    if coef >= T::zero() {
                        u_lo
                    } else {
                        u_hi
                    }
                }
                Direction::Upper => {
                    if coef >= T::zero() {
                        u_hi
                    } else {
                        u_lo
                    }
                }
            };
            policy.probs[[i, a]] * (s + u * coef)
        }))
    }));
    Ok(total / T::from_usize_lossy(ds.n()))
}

/// Robust DR bound. Per sample the program
///
/// `sum_{a != a_i} pi(a) r(a) + pi(a_i) [ r(a_i) (1 - 1/p) + r_i / p ]`
///
/// is minimized over `r(a)` in `[f_a, g_a]` and `p` in the normalized feasible
/// interval. The coefficient of `r(a_i)` is nonpositive for every feasible
/// `p`, so the lower direction takes `g` there and `f` elsewhere, then the
/// endpoint of `p` by the sign of `r_i - g`. The upper direction mirrors each
/// choice. Zero coefficients pick `g` for rewards and `hi` for `p`.
pub fn dr_bound<T: Scalar>(
    ds: &LoggedDataset<T>,
    policy: &PolicyProbs<T>,
    budget: &UncertaintyBudget<T>,
    bounds: &RewardBoundsTable<T>,
    dir: Direction,
) -> Result<BoundCertificate<T>> {
    check_policy(ds, policy)?;
    bounds.check_shape(ds.n(), ds.k())?;
    let (n, k) = (ds.n(), ds.k());
    let mut r_star = Array2::zeros((n, k));
    let mut p_star = Vec::with_capacity(n);
    let mut total = T::zero();
    for i in 0..n {
        let ai = ds.actions[i];
        let iv = feasible_interval(ds.propensities.row(i), ai, budget)?;
        let mut direct = T::zero();
        for a in 0..k {
            let (f, g) = (bounds.lower[[i, a]], bounds.upper[[i, a]]);
            let pi = policy.probs[[i, a]];
            let r = if a == ai {
                // coefficient pi (1 - 1/p) <= 0
                match dir {
                    Direction::Lower => g,
                    Direction::Upper => {
                        if pi > T::zero() && iv.lo < T::one() {
                            f
                        } else {
                            g
                        }
                    }
                }
            } else {
                match dir {
                    Direction::Lower => {
                        if pi > T::zero() {
                            f
                        } else {
                            g
                        }
                    }
                    Direction::Upper => g,
                }
            };
            r_star[[i, a]] = r;
            direct += pi * r;
        }
        let pi = policy.probs[[i, ai]];
        let c = pi * (ds.rewards[i] - r_star[[i, ai]]);
        let p = ratio_endpoint(c, &iv, dir);
        p_star.push(p);
        total += direct + c / p;
    }
    Ok(BoundCertificate {
        value: total / T::from_usize_lossy(n),
        p_star,
        r_star: Some(r_star),
        direction: dir,
    })
}
