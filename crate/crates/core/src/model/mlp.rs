use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{clamp_prob, LogLossTerms};
use crate::synthgen::sigmoid;
use crate::types::Features;

pub const LEAKY_SLOPE: f64 = 0.01;

pub(crate) fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

pub(crate) fn leaky_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Sparse-input MLP shape. No hidden layers means logistic regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn logistic(input_dim: usize) -> Self {
        Architecture { input_dim, hidden: Vec::new() }
    }

    /// `(fan_in, fan_out)` of every dense layer including the output layer.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Per-sample activations kept for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

/// Multi-layer perceptron over hashed sparse features with leaky-rectifier
/// hidden units and a sigmoid output. Parameters are one flat vector, layer by
/// layer: row-major weights (`out x in`) followed by biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl Mlp {
    pub fn zeros(arch: Architecture) -> Self {
        let params = vec![0.0; arch.n_params()];
        Mlp { arch, params }
    }

    /// Uniform Glorot initialization for hidden layers; the output layer and
    /// all biases start at zero, so the initial prediction is 0.5.
    pub fn init(arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.n_params());
        let layers = arch.layers();
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let output_layer = l + 1 == layers.len();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(if output_layer { 0.0 } else { rng.random_range(-limit..limit) });
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(Error::Config(format!(
                "{} parameters for an architecture needing {}",
                params.len(),
                arch.n_params()
            )));
        }
        Ok(Mlp { arch, params })
    }

    fn check_input(&self, x: &Features) -> Result<()> {
        match x.max_index() {
            Some(i) if i as usize >= self.arch.input_dim => Err(Error::Config(format!(
                "feature index {i} outside input dimension {}",
                self.arch.input_dim
            ))),
            _ => Ok(()),
        }
    }

    /// Logit plus the activations needed by [`Mlp::accumulate_gradient`].
    pub fn forward_trace(&self, x: &Features) -> Result<(f64, Trace)> {
        self.check_input(x)?;
        let mut trace = Trace::default();
        let mut offset = 0;
        let layers = self.arch.layers();
        let mut logit = 0.0;
        for (l, &(fan_in, fan_out)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + fan_in * fan_out];
            let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let mut z = b.to_vec();
            if l == 0 {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += x.dot(&w[j * fan_in..(j + 1) * fan_in]);
                }
            } else {
                let input = &trace.post[l - 1];
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj += w[j * fan_in..(j + 1) * fan_in].iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            offset += fan_in * fan_out + fan_out;
            if l + 1 == layers.len() {
                logit = z[0];
            } else {
                trace.post.push(z.iter().map(|&v| leaky(v)).collect());
                trace.pre.push(z);
            }
        }
        if !logit.is_finite() {
            return Err(Error::Fault(format!("non-finite logit {logit}")));
        }
        Ok((logit, trace))
    }

    pub fn logit(&self, x: &Features) -> Result<f64> {
        Ok(self.forward_trace(x)?.0)
    }

    /// Clamped output probability.
    pub fn forward(&self, x: &Features) -> Result<f64> {
        Ok(clamp_prob(sigmoid(self.logit(x)?)))
    }

    /// Adds `dlogit * d(logit)/d(params)` to `grad`.
    pub fn accumulate_gradient(&self, x: &Features, trace: &Trace, dlogit: f64, grad: &mut [f64]) {
        let layers = self.arch.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(i, o) in &layers {
            offsets.push(offset);
            offset += i * o + o;
        }
        // delta holds dL/dz for the current layer.
        let mut delta = vec![dlogit];
        for l in (0..layers.len()).rev() {
            let (fan_in, fan_out) = layers[l];
            let base = offsets[l];
            for (j, &d) in delta.iter().enumerate() {
                grad[base + fan_in * fan_out + j] += d;
            }
            if l == 0 {
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = base + j * fan_in;
                    for (i, v) in x.iter() {
                        grad[row + i] += d * v;
                    }
                }
                break;
            }
            let input = &trace.post[l - 1];
            let mut next = vec![0.0; fan_in];
            for (j, &d) in delta.iter().enumerate() {
                let row = base + j * fan_in;
                for i in 0..fan_in {
                    grad[row + i] += d * input[i];
                    next[i] += d * self.params[row + i];
                }
            }
            for (i, n) in next.iter_mut().enumerate() {
                *n *= leaky_grad(trace.pre[l - 1][i]);
            }
            delta = next;
        }
    }

    /// Mean loss and mean gradient of `-pos ln p - neg ln(1-p)` over a batch of
    /// `(sample id, features, terms)`.
    pub fn batch_gradient<'a, I>(&self, batch: I) -> Result<(f64, Vec<f64>)>
    where
        I: IntoIterator<Item = (u64, &'a Features, LogLossTerms)>,
    {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let mut n = 0usize;
        for (id, x, terms) in batch {
            let (logit, trace) = self.forward_trace(x)?;
            let p = sigmoid(logit);
            let loss = terms.value(p);
            if !loss.is_finite() {
                return Err(Error::Fault(format!("non-finite loss for sample {id}")));
            }
            total += loss;
            self.accumulate_gradient(x, &trace, terms.logit_gradient(p), &mut grad);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grad))
    }

    /// Mean batch loss, evaluated without the backward pass.
    pub fn batch_loss<'a, I>(&self, batch: I) -> Result<f64>
    where
        I: IntoIterator<Item = (u64, &'a Features, LogLossTerms)>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for (_, x, terms) in batch {
            total += terms.value(sigmoid(self.logit(x)?));
            n += 1;
        }
        Ok(total / n.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::logit;

    /// Independent dense re-implementation used as a forward oracle.
    #[allow(clippy::needless_range_loop)]
    fn dense_forward(m: &Mlp, x: &[f64]) -> f64 {
        let mut act = x.to_vec();
        let mut offset = 0;
        let dims: Vec<usize> =
            std::iter::once(m.arch.input_dim).chain(m.arch.hidden.iter().copied()).chain([1]).collect();
        for l in 0..dims.len() - 1 {
            let (n_in, n_out) = (dims[l], dims[l + 1]);
            let mut out = vec![0.0; n_out];
            for j in 0..n_out {
                let mut s = m.params[offset + n_in * n_out + j];
                for i in 0..n_in {
                    s += m.params[offset + j * n_in + i] * act[i];
                }
                out[j] = if l + 2 == dims.len() || s > 0.0 { s } else { 0.01 * s };
            }
            offset += n_in * n_out + n_out;
            act = out;
        }
        1.0 / (1.0 + (-act[0]).exp())
    }

    #[test]
    fn zero_logistic_predicts_half() {
        let m = Mlp::zeros(Architecture::logistic(4));
        assert_eq!(m.forward(&Features::one_hot(2)).unwrap(), 0.5);
    }

    #[test]
    fn logistic_inversion() {
        let mut m = Mlp::zeros(Architecture::logistic(2));
        m.params[1] = 3f64.ln();
        assert!((m.forward(&Features::one_hot(1)).unwrap() - 0.75).abs() < 1e-15);
        m.params[0] = logit(0.2);
        assert!((m.forward(&Features::one_hot(0)).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn mlp_matches_dense_oracle() {
        let arch = Architecture { input_dim: 6, hidden: vec![5, 3] };
        let mut m = Mlp::init(arch, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        m.params.iter_mut().for_each(|p| *p += rng.random_range(-0.5..0.5));
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = sigmoid(m.logit(&Features::dense(&x)).unwrap());
            assert!((got - dense_forward(&m, &x)).abs() < 1e-10);
        }
    }

    #[test]
    fn nan_parameters_fault() {
        let mut m = Mlp::zeros(Architecture::logistic(2));
        m.params[0] = f64::NAN;
        assert!(matches!(m.forward(&Features::one_hot(0)), Err(Error::Fault(_))));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut m = Mlp::init(Architecture { input_dim: 4, hidden: vec![3] }, 1);
        m.params.iter_mut().enumerate().for_each(|(i, p)| *p += 0.1 * (i as f64).sin());
        let a = Features::dense(&[0.3, -1.0, 0.0, 2.0]);
        let b = Features::one_hot(2);
        let ta = LogLossTerms { pos: 1.3, neg: 0.2 };
        let tb = LogLossTerms::label(false);
        let (_, ga) = m.batch_gradient([(0, &a, ta)]).unwrap();
        let (_, gb) = m.batch_gradient([(1, &b, tb)]).unwrap();
        let (_, g) = m.batch_gradient([(0, &a, ta), (1, &b, tb)]).unwrap();
        for i in 0..g.len() {
            assert!((g[i] - 0.5 * (ga[i] + gb[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn fitted_point_is_stationary() {
        // Two contexts with empirical rates 1/4 and 2/3, logistic set to match.
        let mut m = Mlp::zeros(Architecture::logistic(2));
        m.params[0] = logit(0.25);
        m.params[1] = logit(2.0 / 3.0);
        let x0 = Features::one_hot(0);
        let x1 = Features::one_hot(1);
        let mut batch = Vec::new();
        for y in [true, false, false, false] {
            batch.push((0, &x0, LogLossTerms::label(y)));
        }
        // Bias is shared, so balance the second context's residual too.
        for y in [true, true, false] {
            batch.push((1, &x1, LogLossTerms::label(y)));
        }
        let (_, g) = m.batch_gradient(batch).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = Mlp::zeros(Architecture::logistic(2));
        assert!(m.batch_gradient(std::iter::empty()).is_err());
    }
}
