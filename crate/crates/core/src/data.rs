//! Logged bandit feedback and its validation.

use ndarray::{Array2, ArrayView1, Axis};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Row-sum tolerance for propensity rows in double precision.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// [`ROW_SUM_TOL`], or a few hundred ulps for scalars coarser than `f64`.
pub fn row_sum_tol<T: Scalar>() -> T {
    T::lit(ROW_SUM_TOL).max(T::epsilon() * T::lit(256.0))
}

/// Feedback tuples `(x_i, a_i, r_i)` together with the full logging
/// propensity matrix `pi0(.|x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset<T> {
    /// `n x d` contexts.
    pub contexts: Array2<T>,
    /// Observed actions, each in `0..k`.
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    /// `n x k`; row `i` is `pi0(.|x_i)`.
    pub propensities: Array2<T>,
    /// Simulation-only ground truth `r(a)` per context, `n x k`.
    pub full_rewards: Option<Array2<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    Empty,
    TooFewActions { k: usize },
    Shape { what: String },
    ActionOutOfRange { row: usize, action: usize },
    NonFinite { row: usize, column: String },
    Range { row: usize, action: usize },
    RowSum { row: usize },
}

impl Violation {
    pub fn label(&self) -> &'static str {
        match self {
            Violation::Empty => "empty",
            Violation::TooFewActions { .. } => "too-few-actions",
            Violation::Shape { .. } => "shape",
            Violation::ActionOutOfRange { .. } => "action-range",
            Violation::NonFinite { .. } => "non-finite",
            Violation::Range { .. } => "range",
            Violation::RowSum { .. } => "row-sum",
        }
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::Empty => write!(f, "dataset has no rows"),
            Violation::TooFewActions { k } => write!(f, "need at least 2 actions, got {k}"),
            Violation::Shape { what } => write!(f, "shape: {what}"),
            Violation::ActionOutOfRange { row, action } => {
                write!(f, "row {row}: action {action} out of range")
            }
            Violation::NonFinite { row, column } => write!(f, "row {row}: non-finite {column}"),
            Violation::Range { row, action } => {
                write!(f, "row {row}: propensity of action {action} outside (0,1)")
            }
            Violation::RowSum { row } => write!(f, "row {row}: propensities do not sum to 1"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, label: &str) -> bool {
        self.violations.iter().any(|v| v.label() == label)
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.first() {
            None => Ok(()),
            Some(first) => invalid(format!(
                "{} violation(s); first: {first}",
                self.violations.len()
            )),
        }
    }
}

/// Checks a single propensity row: entries in the open unit interval and a
/// row sum of one within [`row_sum_tol`].
pub fn check_simplex_row<T: Scalar>(row: ArrayView1<'_, T>) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p <= T::zero() || *p >= T::one()) {
        return invalid("propensity row entries must lie in (0,1)");
    }
    let s = ordered_sum(row.iter().copied());
    if (s - T::one()).abs() > row_sum_tol::<T>() {
        return invalid(format!("propensity row sums to {s}, not 1"));
    }
    Ok(())
}

/// Report-style validation: collects every violation rather than stopping at
/// the first.
pub fn validate_dataset<T: Scalar>(ds: &LoggedDataset<T>) -> ValidationReport {
    let mut out = Vec::new();
    let n = ds.actions.len();
    let k = ds.propensities.ncols();
    if n == 0 {
        out.push(Violation::Empty);
    }
    if k < 2 {
        out.push(Violation::TooFewActions { k });
    }
    if ds.rewards.len() != n || ds.contexts.nrows() != n || ds.propensities.nrows() != n {
        out.push(Violation::Shape {
            what: format!(
                "rows: actions {n}, rewards {}, contexts {}, propensities {}",
                ds.rewards.len(),
                ds.contexts.nrows(),
                ds.propensities.nrows()
            ),
        });
        return ValidationReport { violations: out };
    }
    if let Some(full) = &ds.full_rewards {
        if full.dim() != (n, k) {
            out.push(Violation::Shape {
                what: format!("full reward matrix {:?}, expected ({n}, {k})", full.dim()),
            });
        }
    }
    for i in 0..n {
        if ds.actions[i] >= k {
            out.push(Violation::ActionOutOfRange { row: i, action: ds.actions[i] });
        }
        if !ds.rewards[i].is_finite() {
            out.push(Violation::NonFinite { row: i, column: "reward".into() });
        }
        if ds.contexts.row(i).iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite { row: i, column: "context".into() });
        }
        let row = ds.propensities.row(i);
        let mut finite = true;
        for (a, p) in row.iter().enumerate() {
            if !p.is_finite() {
                out.push(Violation::NonFinite { row: i, column: format!("prop_{a}") });
                finite = false;
            } else if *p <= T::zero() || *p >= T::one() {
                out.push(Violation::Range { row: i, action: a });
            }
        }
        if finite {
            let s = ordered_sum(row.iter().copied());
            if (s - T::one()).abs() > row_sum_tol::<T>() {
                out.push(Violation::RowSum { row: i });
            }
        }
    }
    ValidationReport { violations: out }
}

impl<T: Scalar> LoggedDataset<T> {
    /// Builds a dataset and rejects it if any invariant fails. Off-simplex rows
    /// are rejected, never renormalized.
    pub fn new(
        contexts: Array2<T>,
        actions: Vec<usize>,
        rewards: Vec<T>,
        propensities: Array2<T>,
        full_rewards: Option<Array2<T>>,
    ) -> Result<Self> {
        let ds = Self { contexts, actions, rewards, propensities, full_rewards };
        validate_dataset(&ds).into_result()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    pub fn k(&self) -> usize {
        self.propensities.ncols()
    }

    pub fn d(&self) -> usize {
        self.contexts.ncols()
    }

    /// `pi0(a_i|x_i)`.
    pub fn logged_propensity(&self, i: usize) -> T {
        self.propensities[[i, self.actions[i]]]
    }

    /// Rows selected by `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            contexts: self.contexts.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            propensities: self.propensities.select(Axis(0), idx),
            full_rewards: self.full_rewards.as_ref().map(|m| m.select(Axis(0), idx)),
        }
    }

    pub fn with_propensities(&self, propensities: Array2<T>) -> Result<Self> {
        if propensities.dim() != self.propensities.dim() {
            return Err(Error::Shape(format!(
                "propensities {:?} vs {:?}",
                propensities.dim(),
                self.propensities.dim()
            )));
        }
        Ok(Self { propensities, ..self.clone() })
    }
}
