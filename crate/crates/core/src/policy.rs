//! Parametric softmax policies and the surrogate objective they are trained on.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::BoundCertificate;
use crate::data::LoggedDataset;
use crate::error::{invalid, Error, Result};
use crate::estimators::PolicyProbs;
use crate::scalar::{ordered_sum, Scalar};

mod dense {
    //! `{ "shape": [rows, cols], "values": [...] }` with row-major values.
    use ndarray::Array2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize)]
    struct DenseRef<'a, T> {
        shape: [usize; 2],
        values: Vec<&'a T>,
    }

    #[derive(Deserialize)]
    struct Dense<T> {
        shape: [usize; 2],
        values: Vec<T>,
    }

    pub fn serialize<T: Serialize, S: Serializer>(m: &Array2<T>, s: S) -> Result<S::Ok, S::Error> {
        let (r, c) = m.dim();
        DenseRef { shape: [r, c], values: m.iter().collect() }.serialize(s)
    }

    pub fn deserialize<'de, T: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<Array2<T>, D::Error> {
        let m = Dense::<T>::deserialize(d)?;
        Array2::from_shape_vec((m.shape[0], m.shape[1]), m.values).map_err(serde::de::Error::custom)
    }
}

/// `pi(.|x) = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxLinearPolicy<T> {
    /// `k x d`.
    #[serde(with = "dense")]
    pub weights: Array2<T>,
    pub bias: Vec<T>,
}

/// `pi(.|x) = softmax(W2 relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoLayerMlpPolicy<T> {
    /// `h x d`.
    #[serde(with = "dense")]
    pub w1: Array2<T>,
    pub b1: Vec<T>,
    /// `k x h`.
    #[serde(with = "dense")]
    pub w2: Array2<T>,
    pub b2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case")]
pub enum PolicyModel<T> {
    SoftmaxLinear(SoftmaxLinearPolicy<T>),
    TwoLayerMlp(TwoLayerMlpPolicy<T>),
}

/// Policy family plus its size, used to initialize a [`PolicyModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PolicyClass {
    SoftmaxLinear,
    TwoLayerMlp { hidden: usize },
}

impl PolicyClass {
    pub fn init<T: Scalar>(&self, d: usize, k: usize, seed: u64) -> Result<PolicyModel<T>> {
        match *self {
            PolicyClass::SoftmaxLinear => PolicyModel::softmax_linear(d, k),
            PolicyClass::TwoLayerMlp { hidden } => PolicyModel::mlp(d, k, hidden, seed),
        }
    }
}

fn softmax_in_place<T: Scalar>(z: &mut [T]) {
    let m = z.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    for v in z.iter_mut() {
        *v = (*v - m).exp();
    }
    let s = ordered_sum(z.iter().copied());
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    out
}

impl<T: Scalar> PolicyModel<T> {
    /// Zero parameters, so the policy starts uniform.
    pub fn softmax_linear(d: usize, k: usize) -> Result<Self> {
        if d == 0 || k < 2 {
            return invalid(format!("softmax policy needs d >= 1 and k >= 2, got d={d}, k={k}"));
        }
        Ok(Self::SoftmaxLinear(SoftmaxLinearPolicy { weights: Array2::zeros((k, d)), bias: vec![T::zero(); k] }))
    }

    /// Kaiming-uniform first layer, zero output layer (uniform at start).
    pub fn mlp(d: usize, k: usize, hidden: usize, seed: u64) -> Result<Self> {
        if d == 0 || k < 2 || hidden == 0 {
            return invalid(format!("mlp policy needs d, hidden >= 1 and k >= 2, got d={d}, k={k}, h={hidden}"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (6.0 / d as f64).sqrt();
        let w1 = Array2::from_shape_simple_fn((hidden, d), || T::lit(rng.random_range(-bound..=bound)));
        Ok(Self::TwoLayerMlp(TwoLayerMlpPolicy {
            w1,
            b1: vec![T::zero(); hidden],
            w2: Array2::zeros((k, hidden)),
            b2: vec![T::zero(); k],
        }))
    }

    pub fn k(&self) -> usize {
        match self {
            Self::SoftmaxLinear(p) => p.weights.nrows(),
            Self::TwoLayerMlp(p) => p.w2.nrows(),
        }
    }

    pub fn d(&self) -> usize {
        match self {
            Self::SoftmaxLinear(p) => p.weights.ncols(),
            Self::TwoLayerMlp(p) => p.w1.ncols(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Self::SoftmaxLinear(p) => p.weights.len() + p.bias.len(),
            Self::TwoLayerMlp(p) => p.w1.len() + p.b1.len() + p.w2.len() + p.b2.len(),
        }
    }

    /// Flat parameter vector; matrices row-major, in declaration order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        match self {
            Self::SoftmaxLinear(p) => {
                out.extend(p.weights.iter());
                out.extend(&p.bias);
            }
            Self::TwoLayerMlp(p) => {
                out.extend(p.w1.iter());
                out.extend(&p.b1);
                out.extend(p.w2.iter());
                out.extend(&p.b2);
            }
        }
        out
    }

    pub fn set_params(&mut self, theta: &[T]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::Shape(format!("{} parameters, expected {}", theta.len(), self.n_params())));
        }
        let mut it = theta.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut T>| {
            for v in dst {
                *v = it.next().expect("length checked");
            }
        };
        match self {
            Self::SoftmaxLinear(p) => {
                fill(&mut p.weights.iter_mut());
                fill(&mut p.bias.iter_mut());
            }
            Self::TwoLayerMlp(p) => {
                fill(&mut p.w1.iter_mut());
                fill(&mut p.b1.iter_mut());
                fill(&mut p.w2.iter_mut());
                fill(&mut p.b2.iter_mut());
            }
        }
        Ok(())
    }

    fn hidden_pre(p: &TwoLayerMlpPolicy<T>, x: ArrayView1<'_, T>) -> Array1<T> {
        Array1::from_shape_fn(p.w1.nrows(), |j| {
            p.b1[j] + ordered_sum(p.w1.row(j).iter().zip(x.iter()).map(|(&w, &v)| w * v))
        })
    }

    fn logits_row(&self, x: ArrayView1<'_, T>) -> Vec<T> {
        match self {
            Self::SoftmaxLinear(p) => (0..p.weights.nrows())
                .map(|a| p.bias[a] + ordered_sum(p.weights.row(a).iter().zip(x.iter()).map(|(&w, &v)| w * v)))
                .collect(),
            Self::TwoLayerMlp(p) => {
                let h = Self::hidden_pre(p, x).mapv(|v| v.max(T::zero()));
                (0..p.w2.nrows())
                    .map(|a| p.b2[a] + ordered_sum(p.w2.row(a).iter().zip(h.iter()).map(|(&w, &v)| w * v)))
                    .collect()
            }
        }
    }

    pub fn logits(&self, contexts: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_contexts(contexts)?;
        let mut out = Array2::zeros((contexts.nrows(), self.k()));
        for (i, x) in contexts.rows().into_iter().enumerate() {
            for (a, z) in self.logits_row(x).into_iter().enumerate() {
                out[[i, a]] = z;
            }
        }
        Ok(out)
    }

    fn check_contexts(&self, contexts: ArrayView2<'_, T>) -> Result<()> {
        if contexts.ncols() != self.d() {
            return Err(Error::Shape(format!("contexts have {} features, policy expects {}", contexts.ncols(), self.d())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Forward pass to probability rows.
pub fn policy_probs<T: Scalar>(policy: &PolicyModel<T>, contexts: ArrayView2<'_, T>) -> Result<PolicyProbs<T>> {
    let probs = softmax_rows(&policy.logits(contexts)?);
    if probs.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("policy produced non-finite probabilities".into()));
    }
    Ok(PolicyProbs { probs })
}

/// `c[i][a] = r*(a, x_i) + I(a = a_i) (r_i - r*(a_i, x_i)) / p*(a_i|x_i)`, with
/// `r* = 0` when the certificate carries none.
pub fn surrogate_coefficients<T: Scalar>(ds: &LoggedDataset<T>, cert: &BoundCertificate<T>) -> Result<Array2<T>> {
    let (n, k) = (ds.n(), ds.k());
    if cert.p_star.len() != n {
        return Err(Error::Shape(format!("certificate has {} entries for {n} samples", cert.p_star.len())));
    }
    let mut c = match &cert.r_star {
        Some(r) if r.dim() == (n, k) => r.clone(),
        Some(r) => return Err(Error::Shape(format!("r_star {:?}, expected ({n}, {k})", r.dim()))),
        None => Array2::zeros((n, k)),
    };
    for i in 0..n {
        let ai = ds.actions[i];
        let r = c[[i, ai]];
        c[[i, ai]] = r + (ds.rewards[i] - r) / cert.p_star[i];
    }
    Ok(c)
}

/// `(1/n) sum_i sum_a c[i][a] pi(a|x_i)` and its gradient in the flat
/// parameter layout of [`PolicyModel::params`].
pub fn objective_and_gradient<T: Scalar>(
    policy: &PolicyModel<T>,
    contexts: ArrayView2<'_, T>,
    coefs: &Array2<T>,
) -> Result<(T, Vec<T>)> {
    policy.check_contexts(contexts)?;
    let (n, k) = (contexts.nrows(), policy.k());
    if coefs.dim() != (n, k) {
        return Err(Error::Shape(format!("coefficients {:?}, expected ({n}, {k})", coefs.dim())));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut grad = vec![T::zero(); policy.n_params()];
    let mut value = T::zero();
    for (i, x) in contexts.rows().into_iter().enumerate() {
        let mut p = policy.logits_row(x);
        softmax_in_place(&mut p);
        let c = coefs.row(i);
        let mean = ordered_sum(p.iter().zip(c.iter()).map(|(&pa, &ca)| pa * ca));
        value += mean;
        // d value / d logit_b
        let dz: Vec<T> = (0..k).map(|b| inv_n * p[b] * (c[b] - mean)).collect();
        match policy {
            PolicyModel::SoftmaxLinear(pl) => {
                let d = pl.weights.ncols();
                for b in 0..k {
                    for j in 0..d {
                        grad[b * d + j] += dz[b] * x[j];
                    }
                    grad[k * d + b] += dz[b];
                }
            }
            PolicyModel::TwoLayerMlp(pl) => {
                let (h, d) = pl.w1.dim();
                let pre = PolicyModel::hidden_pre(pl, x);
                let (o_b1, o_w2) = (h * d, h * d + h);
                let o_b2 = o_w2 + k * h;
                for b in 0..k {
                    for j in 0..h {
                        grad[o_w2 + b * h + j] += dz[b] * pre[j].max(T::zero());
                    }
                    grad[o_b2 + b] += dz[b];
                }
                for j in 0..h {
                    if pre[j] <= T::zero() {
                        continue;
                    }
                    let dh = ordered_sum((0..k).map(|b| pl.w2[[b, j]] * dz[b]));
                    for l in 0..d {
                        grad[j * d + l] += dh * x[l];
                    }
                    grad[o_b1 + j] += dh;
                }
            }
        }
    }
    Ok((value * inv_n, grad))
}

/// Surrogate DR objective at the certificate's `(p*, r*)`.
pub fn surrogate_objective_and_gradient<T: Scalar>(
    policy: &PolicyModel<T>,
    ds: &LoggedDataset<T>,
    cert: &BoundCertificate<T>,
) -> Result<(T, Vec<T>)> {
    let coefs = surrogate_coefficients(ds, cert)?;
    objective_and_gradient(policy, ds.contexts.view(), &coefs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        Self::with_lr(T::lit(0.05))
    }
}

/// Adam ascent on a fixed coefficient matrix. Returns the final policy and
/// `steps + 1` objective values (before each step and after the last).
pub fn adam_maximize_coefs<T: Scalar>(
    policy: &PolicyModel<T>,
    contexts: ArrayView2<'_, T>,
    coefs: &Array2<T>,
    steps: usize,
    adam: &AdamConfig<T>,
) -> Result<(PolicyModel<T>, Vec<T>)> {
    if !(adam.lr >= T::zero()) {
        return invalid("Adam learning rate must be nonnegative");
    }
    let mut out = policy.clone();
    let mut theta = out.params();
    let mut m = vec![T::zero(); theta.len()];
    let mut v = vec![T::zero(); theta.len()];
    let mut values = Vec::with_capacity(steps + 1);
    let (mut b1t, mut b2t) = (T::one(), T::one());
    for _ in 0..steps {
        let (val, g) = objective_and_gradient(&out, contexts, coefs)?;
        values.push(val);
        b1t *= adam.beta1;
        b2t *= adam.beta2;
        for j in 0..theta.len() {
            m[j] = adam.beta1 * m[j] + (T::one() - adam.beta1) * g[j];
            v[j] = adam.beta2 * v[j] + (T::one() - adam.beta2) * g[j] * g[j];
            let mh = m[j] / (T::one() - b1t);
            let vh = v[j] / (T::one() - b2t);
            theta[j] += adam.lr * mh / (vh.sqrt() + adam.eps);
        }
        out.set_params(&theta)?;
    }
    values.push(objective_and_gradient(&out, contexts, coefs)?.0);
    Ok((out, values))
}

/// Adam ascent on the surrogate built from `cert`.
pub fn adam_maximize<T: Scalar>(
    policy: &PolicyModel<T>,
    ds: &LoggedDataset<T>,
    cert: &BoundCertificate<T>,
    steps: usize,
    lr: T,
) -> Result<(PolicyModel<T>, Vec<T>)> {
    let coefs = surrogate_coefficients(ds, cert)?;
    adam_maximize_coefs(policy, ds.contexts.view(), &coefs, steps, &AdamConfig::with_lr(lr))
}
