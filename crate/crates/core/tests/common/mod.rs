//! Brute-force reference solutions and random tiny instances.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_ope::{BoundsTable, Dataset, Probs};

pub const GRID: usize = 1000;

/// Whether some row `u` with `e^-alpha row <= u <= e^alpha row` entrywise and
/// `sum u = 1` puts mass `p` on action `a`.
pub fn row_feasible(row: &[f64], a: usize, p: f64, alpha: f64) -> bool {
    let (rl, rh) = ((-alpha).exp(), alpha.exp());
    let tol = 1e-13;
    if p < rl * row[a] - tol || p > (rh * row[a]).min(1.0) + tol {
        return false;
    }
    let mut lo = 0.0;
    let mut hi = 0.0;
    for (b, &q) in row.iter().enumerate() {
        if b != a {
            lo += rl * q;
            hi += (rh * q).min(1.0);
        }
    }
    let rest = 1.0 - p;
    rest >= lo - tol && rest <= hi + tol
}

fn bisect(mut inside: f64, mut outside: f64, feasible: &impl Fn(f64) -> bool) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (inside + outside);
        if feasible(mid) {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    inside
}

/// Minimum of `obj` over the feasible masses: every grid point `j / GRID`
/// plus `seed`, with the two extreme feasible points pushed out to the
/// boundary by bisection.
pub fn grid_min_1d(seed: f64, feasible: impl Fn(f64) -> bool, obj: impl Fn(f64) -> f64) -> f64 {
    let step = 1.0 / GRID as f64;
    let mut pts: Vec<f64> = (1..=GRID).map(|j| j as f64 * step).filter(|&p| feasible(p)).collect();
    pts.push(seed);
    let lo = pts.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    pts.push(bisect(lo, (lo - step).max(0.0), &feasible));
    if hi < 1.0 {
        pts.push(bisect(hi, (hi + step).min(1.0), &feasible));
    }
    pts.into_iter().map(obj).fold(f64::INFINITY, f64::min)
}

fn row(ds: &Dataset, i: usize) -> Vec<f64> {
    ds.propensities.row(i).to_vec()
}

/// IPS bound by per-sample search; `sign = 1` for the lower bound and `-1`
/// for the upper one (returned with its natural sign).
pub fn ips_oracle(ds: &Dataset, pi: &Probs, alpha: f64, sign: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.n() {
        let (a, r0) = (ds.actions[i], row(ds, i));
        let c = pi.probs[[i, a]] * ds.rewards[i];
        total += sign * grid_min_1d(r0[a], |p| row_feasible(&r0, a, p, alpha), |p| sign * c / p);
    }
    total / ds.n() as f64
}

/// DR bound over `r` on an 11-point grid of `[f, g]` per entry and `p` as in
/// [`ips_oracle`].
pub fn dr_oracle(ds: &Dataset, pi: &Probs, table: &BoundsTable, alpha: f64, sign: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..ds.n() {
        let (ai, r0) = (ds.actions[i], row(ds, i));
        let rgrid = |a: usize| {
            let (f, g) = (table.lower[[i, a]], table.upper[[i, a]]);
            (0..=10).map(move |j| f + (g - f) * j as f64 / 10.0)
        };
        for a in 0..ds.k() {
            if a != ai {
                let w = pi.probs[[i, a]];
                total += sign * rgrid(a).map(|r| sign * w * r).fold(f64::INFINITY, f64::min);
            }
        }
        let w = pi.probs[[i, ai]];
        let best = rgrid(ai)
            .map(|r| {
                grid_min_1d(
                    r0[ai],
                    |p| row_feasible(&r0, ai, p, alpha),
                    |p| sign * (w * r + w * (ds.rewards[i] - r) / p),
                )
            })
            .fold(f64::INFINITY, f64::min);
        total += sign * best;
    }
    total / ds.n() as f64
}

/// Normalized IPS lower bound over an 11-point grid per weight
/// `w_i in [1/hi, 1/lo]`, where `p_i` may move within the ratio limits as long
/// as the other actions at their smallest mass still fit.
pub fn nips_oracle(ds: &Dataset, pi: &Probs, alpha: f64) -> f64 {
    let (rl, rh) = ((-alpha).exp(), alpha.exp());
    let n = ds.n();
    let grids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = ds.actions[i];
            let p0 = ds.propensities[[i, a]];
            let others: f64 = (0..ds.k()).filter(|&b| b != a).map(|b| rl * ds.propensities[[i, b]]).sum();
            let (lo, hi) = (rl * p0, (rh * p0).min(1.0 - others).max(p0));
            let (wl, wh) = (1.0 / hi, 1.0 / lo);
            (0..=10).map(|j| wl + (wh - wl) * j as f64 / 10.0).collect()
        })
        .collect();
    let pis: Vec<f64> = (0..n).map(|i| pi.probs[[i, ds.actions[i]]]).collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; n];
    loop {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let w = grids[i][idx[i]];
            num += w * pis[i] * ds.rewards[i];
            den += w * pis[i];
        }
        best = best.min(num / den);
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < grids[j].len() {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            return best;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn simplex_row(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Random tiny instance: dataset, candidate policy, reward-bounds table and
/// point predictions inside it.
pub struct Instance {
    pub ds: Dataset,
    pub pi: Probs,
    pub table: BoundsTable,
    pub point: Array2<f64>,
}

pub fn tiny_instance(seed: u64, max_n: usize, max_k: usize) -> Instance {
    let mut g = rng(seed);
    let n = g.random_range(1..=max_n);
    let k = g.random_range(2..=max_k);
    let mut props = Array2::zeros((n, k));
    let mut probs = Array2::zeros((n, k));
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    for i in 0..n {
        for (a, v) in simplex_row(&mut g, k, 0.05).into_iter().enumerate() {
            props[[i, a]] = v;
        }
        for (a, v) in simplex_row(&mut g, k, 0.0).into_iter().enumerate() {
            probs[[i, a]] = v;
        }
        actions.push(g.random_range(0..k));
        rewards.push(g.random_range(-1.0..1.0));
    }
    let ctx = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
    let ds = Dataset::new(ctx, actions, rewards, props, None).unwrap();
    let point = Array2::from_shape_fn((n, k), |_| g.random_range(-1.0..1.0));
    let lower = Array2::from_shape_fn((n, k), |ix| point[ix] - g.random_range(0.0..0.5));
    let upper = Array2::from_shape_fn((n, k), |ix| point[ix] + g.random_range(0.0..0.5));
    Instance { ds, pi: Probs::new(probs).unwrap(), table: BoundsTable::new(lower, upper).unwrap(), point }
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1e-9)
}
