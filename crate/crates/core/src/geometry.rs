//! The l-infinity uncertainty ball around the logging policy and the
//! per-sample intervals it induces on the optimization-policy mass.

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::data::check_simplex_row;
use crate::error::{invalid, Error, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Uncertainty degree `alpha` with its ratio limits `e^{-alpha}`, `e^{alpha}`
/// and an optional propensity cutoff `q` (0 means inactive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyBudget<T> {
    pub alpha: T,
    pub ratio_hi: T,
    pub ratio_lo: T,
    pub cutoff_q: T,
}

impl<T: Scalar> UncertaintyBudget<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !alpha.is_finite() || alpha < T::zero() {
            return invalid(format!("alpha must be a nonnegative finite number, got {alpha}"));
        }
        let (ratio_hi, ratio_lo) = if alpha == T::zero() {
            (T::one(), T::one())
        } else {
            (alpha.exp(), (-alpha).exp())
        };
        Ok(Self { alpha, ratio_hi, ratio_lo, cutoff_q: T::zero() })
    }

    pub fn with_cutoff(mut self, q: T) -> Result<Self> {
        if !(q >= T::zero() && q < T::one()) {
            return invalid(format!("cutoff q must lie in [0,1), got {q}"));
        }
        self.cutoff_q = q;
        Ok(self)
    }
}

/// Range `[lo, hi]` of the optimization-policy mass `p(a_i|x_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleInterval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> FeasibleInterval<T> {
    pub fn contains(&self, p: T, tol: T) -> bool {
        p >= self.lo - tol && p <= self.hi + tol
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }
}

fn check_action<T: Scalar>(row: ArrayView1<'_, T>, action: usize) -> Result<()> {
    if action >= row.len() {
        return invalid(format!("action {action} out of range for {} actions", row.len()));
    }
    Ok(())
}

/// Interval for `p(a_i|x_i)` when the whole row `p(.|x_i)` must stay a
/// probability vector inside the ratio ball:
///
/// `lo = max(e^-a pi0(a_i), 1 - sum_{b != a_i} min(e^a pi0(b), 1))`
/// `hi = min(e^a pi0(a_i), 1 - sum_{b != a_i} e^-a pi0(b))`
///
/// The logging mass `pi0(a_i)` is always feasible; the interval is widened to
/// contain it exactly so rounding in the normalization terms cannot exclude it.
pub fn feasible_interval<T: Scalar>(
    prop_row: ArrayView1<'_, T>,
    observed_action: usize,
    budget: &UncertaintyBudget<T>,
) -> Result<FeasibleInterval<T>> {
    check_action(prop_row, observed_action)?;
    check_simplex_row(prop_row)?;
    let p0 = prop_row[observed_action];
    let others = || prop_row.iter().enumerate().filter(|(b, _)| *b != observed_action);
    let others_hi = ordered_sum(others().map(|(_, &p)| (budget.ratio_hi * p).min(T::one())));
    let others_lo = ordered_sum(others().map(|(_, &p)| budget.ratio_lo * p));

    let lo = (budget.ratio_lo * p0).max(T::one() - others_hi).min(p0);
    let hi = (budget.ratio_hi * p0).min(T::one() - others_lo).max(p0);
    Ok(FeasibleInterval { lo: lo.max(T::min_positive_value()), hi: hi.min(T::one()) })
}

/// Interval for the truncated estimator: the normalization coupling is dropped
/// and the lower end is floored at the cutoff.
///
/// `lo = e^-a max(q, pi0(a_i))`, `hi = min(e^a pi0(a_i), 1)`.
pub fn feasible_interval_truncated<T: Scalar>(
    prop_row: ArrayView1<'_, T>,
    observed_action: usize,
    budget: &UncertaintyBudget<T>,
) -> Result<FeasibleInterval<T>> {
    check_action(prop_row, observed_action)?;
    check_simplex_row(prop_row)?;
    let p0 = prop_row[observed_action];
    let lo = budget.ratio_lo * budget.cutoff_q.max(p0);
    let hi = (budget.ratio_hi * p0).min(T::one());
    if lo > hi {
        return Err(Error::Infeasible { row: 0, lo: lo.to_f64_lossy(), hi: hi.to_f64_lossy() });
    }
    Ok(FeasibleInterval { lo, hi })
}

/// Interval used by the normalized estimator, whose program only asks for
/// `sum_a p(a|x_i) <= 1`: the lower end is the plain ratio limit and the upper
/// end leaves room for the other actions at their smallest admissible mass.
pub fn feasible_interval_subnormalized<T: Scalar>(
    prop_row: ArrayView1<'_, T>,
    observed_action: usize,
    budget: &UncertaintyBudget<T>,
) -> Result<FeasibleInterval<T>> {
    check_action(prop_row, observed_action)?;
    check_simplex_row(prop_row)?;
    let p0 = prop_row[observed_action];
    let others_lo = ordered_sum(
        prop_row
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != observed_action)
            .map(|(_, &p)| budget.ratio_lo * p),
    );
    let lo = (budget.ratio_lo * p0).min(p0);
    let hi = (budget.ratio_hi * p0).min(T::one() - others_lo).max(p0);
    Ok(FeasibleInterval { lo, hi: hi.min(T::one()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    /// Grid oracle: sweep `p(a_i)` and, for k <= 3, the remaining free mass,
    /// keeping every grid point whose full row is feasible.
    fn grid_interval(pi0: &[f64], a: usize, alpha: f64, step: f64) -> (f64, f64) {
        let (lo_r, hi_r) = ((-alpha).exp(), alpha.exp());
        let inb = |p: f64, p0: f64| p >= lo_r * p0 - 1e-12 && p <= hi_r * p0 + 1e-12 && p <= 1.0;
        let others: Vec<f64> = pi0.iter().enumerate().filter(|(b, _)| *b != a).map(|(_, &p)| p).collect();
        let m = (1.0 / step).round() as usize;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..=m {
            let p = s as f64 * step;
            if !inb(p, pi0[a]) {
                continue;
            }
            let rest = 1.0 - p;
            let feasible = match others.len() {
                1 => inb(rest, others[0]),
                2 => (0..=m).any(|t| {
                    let q = t as f64 * step;
                    q <= rest + 1e-12 && inb(q, others[0]) && inb(rest - q, others[1])
                }),
                _ => unreachable!(),
            };
            if feasible {
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        (lo, hi)
    }

    #[test]
    fn uniform_two_actions_ln2() {
        let b = UncertaintyBudget::new(LN2).unwrap();
        let iv = feasible_interval(arr1(&[0.5, 0.5]).view(), 0, &b).unwrap();
        assert!((iv.lo - 0.25).abs() < 1e-12 && (iv.hi - 0.75).abs() < 1e-12);
        let (glo, ghi) = grid_interval(&[0.5, 0.5], 0, LN2, 1e-3);
        assert!((glo - 0.25).abs() < 2e-3 && (ghi - 0.75).abs() < 2e-3);
    }

    #[test]
    fn three_actions_ln2() {
        let b = UncertaintyBudget::new(LN2).unwrap();
        let iv = feasible_interval(arr1(&[0.8, 0.1, 0.1]).view(), 0, &b).unwrap();
        assert!((iv.lo - 0.6).abs() < 1e-12, "{iv:?}");
        assert!((iv.hi - 0.9).abs() < 1e-12, "{iv:?}");
        let (glo, ghi) = grid_interval(&[0.8, 0.1, 0.1], 0, LN2, 5e-3);
        assert!((glo - 0.6).abs() < 1e-2 && (ghi - 0.9).abs() < 1e-2, "{glo} {ghi}");
    }

    #[test]
    fn zero_alpha_collapses() {
        let b = UncertaintyBudget::new(0.0).unwrap();
        assert_eq!((b.ratio_lo, b.ratio_hi), (1.0, 1.0));
        let row = arr1(&[0.2, 0.3, 0.5]);
        for a in 0..3 {
            let iv = feasible_interval(row.view(), a, &b).unwrap();
            assert_eq!((iv.lo, iv.hi), (row[a], row[a]));
        }
    }

    #[test]
    fn truncated_examples() {
        let b = UncertaintyBudget::new(LN2).unwrap().with_cutoff(0.1).unwrap();
        let iv = feasible_interval_truncated(arr1(&[0.05, 0.95]).view(), 0, &b).unwrap();
        assert!((iv.lo - 0.05).abs() < 1e-12 && (iv.hi - 0.1).abs() < 1e-12);

        let b = UncertaintyBudget::new(0.0).unwrap().with_cutoff(0.1).unwrap();
        let iv = feasible_interval_truncated(arr1(&[0.5, 0.5]).view(), 0, &b).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.5, 0.5));

        let b = UncertaintyBudget::new(0.1).unwrap().with_cutoff(0.5).unwrap();
        let err = feasible_interval_truncated(arr1(&[0.01, 0.99]).view(), 0, &b).unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn rejects_bad_rows_and_budgets() {
        let b = UncertaintyBudget::new(0.3).unwrap();
        assert!(feasible_interval(arr1(&[0.6, 0.6]).view(), 0, &b).is_err());
        assert!(feasible_interval(arr1(&[0.5, 0.5]).view(), 2, &b).is_err());
        assert!(UncertaintyBudget::<f64>::new(-0.1).is_err());
        assert!(UncertaintyBudget::new(0.1).unwrap().with_cutoff(1.0).is_err());
    }

    fn simplex_row(k: usize) -> impl Strategy<Value = Array1<f64>> {
        prop::collection::vec(0.05f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum();
            let mut row = Array1::from_vec(v.into_iter().map(|x| x / s).collect());
            let tail: f64 = row.iter().skip(1).sum();
            row[0] = 1.0 - tail;
            row
        })
    }

    proptest! {
        #[test]
        fn logging_mass_feasible_and_monotone(
            row in (2usize..6).prop_flat_map(simplex_row),
            a1 in 0.0f64..1.5,
            a2 in 0.0f64..1.5,
        ) {
            let (small, large) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            for a in 0..row.len() {
                let i1 = feasible_interval(row.view(), a, &UncertaintyBudget::new(small).unwrap()).unwrap();
                let i2 = feasible_interval(row.view(), a, &UncertaintyBudget::new(large).unwrap()).unwrap();
                prop_assert!(i1.lo <= row[a] && row[a] <= i1.hi);
                prop_assert!(i2.lo <= i1.lo && i1.hi <= i2.hi);
                prop_assert!(0.0 < i1.lo && i1.hi <= 1.0);
                let s = feasible_interval_subnormalized(row.view(), a, &UncertaintyBudget::new(small).unwrap()).unwrap();
                prop_assert!(s.lo <= i1.lo && i1.hi <= s.hi);
            }
        }

        #[test]
        fn zero_alpha_point(row in (2usize..6).prop_flat_map(simplex_row)) {
            let b = UncertaintyBudget::new(0.0).unwrap();
            for a in 0..row.len() {
                let iv = feasible_interval(row.view(), a, &b).unwrap();
                prop_assert!((iv.lo - row[a]).abs() <= 1e-12 && (iv.hi - row[a]).abs() <= 1e-12);
            }
        }
    }
}
