use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{leaky, leaky_grad};
use crate::error::{Error, Result};
use crate::losses::{bidefuse_cvr, clamp_prob, BiDefuseTerms};
use crate::synthgen::sigmoid;
use crate::types::Features;

/// Shape of the two-head network: three single-layer experts of width
/// `expert_dim` over a sparse input of size `input_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiDefuseArch {
    pub input_dim: usize,
    pub expert_dim: usize,
}

impl BiDefuseArch {
    fn expert_len(&self) -> usize {
        self.expert_dim * self.input_dim + self.expert_dim
    }

    fn gate_len(&self) -> usize {
        2 * self.input_dim + 2
    }

    fn head_len(&self) -> usize {
        self.expert_dim + 1
    }

    pub fn n_params(&self) -> usize {
        3 * self.expert_len() + 2 * self.gate_len() + 2 * self.head_len()
    }

    fn expert_offset(&self, e: usize) -> usize {
        e * self.expert_len()
    }

    fn gate_offset(&self, g: usize) -> usize {
        3 * self.expert_len() + g * self.gate_len()
    }

    fn head_offset(&self, h: usize) -> usize {
        3 * self.expert_len() + 2 * self.gate_len() + h * self.head_len()
    }
}

const IN_EXPERT: usize = 0;
const SHARED_EXPERT: usize = 1;
const OUT_EXPERT: usize = 2;
const IN_GATE: usize = 0;
const OUT_GATE: usize = 1;
const IP_HEAD: usize = 0;
const DP_HEAD: usize = 1;

/// Activations of one forward pass.
#[derive(Debug, Clone)]
pub struct BiDefuseTrace {
    pre: [Vec<f64>; 3],
    expert: [Vec<f64>; 3],
    /// Softmax weights; index 0 is the dedicated expert, index 1 the shared one.
    pub gates: [[f64; 2]; 2],
    hidden: [Vec<f64>; 2],
    pub logits: [f64; 2],
}

/// In-window and out-window heads over gated mixtures of a dedicated and a
/// shared expert. Flat parameter layout: the in, shared and out experts
/// (weights `expert_dim x input_dim`, then bias), the in and out gates
/// (weights `2 x input_dim`, then bias), then the in and out heads (weights,
/// then bias).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiDefuseNet {
    pub arch: BiDefuseArch,
    pub params: Vec<f64>,
}

fn softmax2(a: f64, b: f64) -> [f64; 2] {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    [ea / (ea + eb), eb / (ea + eb)]
}

impl BiDefuseNet {
    /// Experts and heads get uniform Glorot weights, gates start balanced.
    pub fn init(arch: BiDefuseArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; arch.n_params()];
        let limit = (6.0 / (arch.input_dim + arch.expert_dim) as f64).sqrt();
        for e in 0..3 {
            let off = arch.expert_offset(e);
            for p in &mut params[off..off + arch.expert_dim * arch.input_dim] {
                *p = rng.random_range(-limit..limit);
            }
        }
        let head_limit = (6.0 / (arch.expert_dim + 1) as f64).sqrt();
        for h in 0..2 {
            let off = arch.head_offset(h);
            for p in &mut params[off..off + arch.expert_dim] {
                *p = rng.random_range(-head_limit..head_limit);
            }
        }
        BiDefuseNet { arch, params }
    }

    pub fn from_params(arch: BiDefuseArch, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(Error::Config(format!(
                "{} parameters for a two-head network needing {}",
                params.len(),
                arch.n_params()
            )));
        }
        Ok(BiDefuseNet { arch, params })
    }

    pub fn forward_trace(&self, x: &Features) -> Result<BiDefuseTrace> {
        let a = &self.arch;
        if let Some(i) = x.max_index() {
            if i as usize >= a.input_dim {
                return Err(Error::Config(format!("feature index {i} outside input dimension {}", a.input_dim)));
            }
        }
        let d = a.input_dim;
        let expert_pre = |e: usize| -> Vec<f64> {
            let off = a.expert_offset(e);
            (0..a.expert_dim)
                .map(|j| self.params[off + a.expert_dim * d + j] + x.dot(&self.params[off + j * d..off + (j + 1) * d]))
                .collect()
        };
        let pre = [expert_pre(0), expert_pre(1), expert_pre(2)];
        let expert = pre.clone().map(|v| v.into_iter().map(leaky).collect::<Vec<_>>());
        let gate = |g: usize| -> [f64; 2] {
            let off = a.gate_offset(g);
            let s0 = self.params[off + 2 * d] + x.dot(&self.params[off..off + d]);
            let s1 = self.params[off + 2 * d + 1] + x.dot(&self.params[off + d..off + 2 * d]);
            softmax2(s0, s1)
        };
        let gates = [gate(IN_GATE), gate(OUT_GATE)];
        let mix = |g: [f64; 2], dedicated: &[f64]| -> Vec<f64> {
            dedicated.iter().zip(&expert[SHARED_EXPERT]).map(|(e, s)| g[0] * e + g[1] * s).collect()
        };
        let hidden = [mix(gates[IN_GATE], &expert[IN_EXPERT]), mix(gates[OUT_GATE], &expert[OUT_EXPERT])];
        let head = |h: usize| -> f64 {
            let off = a.head_offset(h);
            self.params[off + a.expert_dim]
                + hidden[h].iter().zip(&self.params[off..off + a.expert_dim]).map(|(u, v)| u * v).sum::<f64>()
        };
        let logits = [head(IP_HEAD), head(DP_HEAD)];
        if !logits.iter().all(|l| l.is_finite()) {
            return Err(Error::Fault(format!("non-finite head logits {logits:?}")));
        }
        Ok(BiDefuseTrace { pre, expert, gates, hidden, logits })
    }

    /// `(F_IP, F_DP)`, each clamped to `[EPS, 1 - EPS]`.
    pub fn forward(&self, x: &Features) -> Result<(f64, f64)> {
        let t = self.forward_trace(x)?;
        Ok((clamp_prob(sigmoid(t.logits[0])), clamp_prob(sigmoid(t.logits[1]))))
    }

    /// Overall conversion rate `F_IP + F_DP`, clamped.
    pub fn cvr(&self, x: &Features) -> Result<f64> {
        let (ip, dp) = self.forward(x)?;
        Ok(bidefuse_cvr(ip, dp))
    }

    /// Adds the gradient of a loss whose logit derivatives are `dlogits` to `grad`.
    pub fn accumulate_gradient(&self, x: &Features, t: &BiDefuseTrace, dlogits: [f64; 2], grad: &mut [f64]) {
        let a = &self.arch;
        let d = a.input_dim;
        let h = a.expert_dim;
        let mut d_expert = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
        for (head, dedicated, gate) in [(IP_HEAD, IN_EXPERT, IN_GATE), (DP_HEAD, OUT_EXPERT, OUT_GATE)] {
            let delta = dlogits[head];
            if delta == 0.0 {
                continue;
            }
            let off = a.head_offset(head);
            for j in 0..h {
                grad[off + j] += delta * t.hidden[head][j];
            }
            grad[off + h] += delta;
            let d_hidden: Vec<f64> = self.params[off..off + h].iter().map(|v| delta * v).collect();
            let g = t.gates[gate];
            let d_pi = [
                d_hidden.iter().zip(&t.expert[dedicated]).map(|(u, e)| u * e).sum::<f64>(),
                d_hidden.iter().zip(&t.expert[SHARED_EXPERT]).map(|(u, e)| u * e).sum::<f64>(),
            ];
            let mean = g[0] * d_pi[0] + g[1] * d_pi[1];
            let goff = a.gate_offset(gate);
            for k in 0..2 {
                let ds = g[k] * (d_pi[k] - mean);
                grad[goff + 2 * d + k] += ds;
                for (i, v) in x.iter() {
                    grad[goff + k * d + i] += ds * v;
                }
            }
            for j in 0..h {
                d_expert[dedicated][j] += g[0] * d_hidden[j];
                d_expert[SHARED_EXPERT][j] += g[1] * d_hidden[j];
            }
        }
        for (e, de) in d_expert.iter().enumerate() {
            let off = a.expert_offset(e);
            for j in 0..h {
                let da = de[j] * leaky_grad(t.pre[e][j]);
                if da == 0.0 {
                    continue;
                }
                grad[off + h * d + j] += da;
                for (i, v) in x.iter() {
                    grad[off + j * d + i] += da * v;
                }
            }
        }
    }

    /// Mean `L_IP + L_DP` and its mean gradient over a batch.
    pub fn batch_gradient<'a, I>(&self, batch: I) -> Result<(f64, Vec<f64>)>
    where
        I: IntoIterator<Item = (u64, &'a Features, BiDefuseTerms)>,
    {
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let mut n = 0usize;
        for (id, x, terms) in batch {
            let t = self.forward_trace(x)?;
            let (p_ip, p_dp) = (sigmoid(t.logits[0]), sigmoid(t.logits[1]));
            let loss = terms.ip.map_or(0.0, |ip| ip.value(p_ip)) + terms.dp.value(p_dp);
            if !loss.is_finite() {
                return Err(Error::Fault(format!("non-finite loss for sample {id}")));
            }
            total += loss;
            let dlogits = [terms.ip.map_or(0.0, |ip| ip.logit_gradient(p_ip)), terms.dp.logit_gradient(p_dp)];
            self.accumulate_gradient(x, &t, dlogits, &mut grad);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let scale = 1.0 / n as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((total * scale, grad))
    }

    pub fn batch_loss<'a, I>(&self, batch: I) -> Result<f64>
    where
        I: IntoIterator<Item = (u64, &'a Features, BiDefuseTerms)>,
    {
        let mut total = 0.0;
        let mut n = 0usize;
        for (_, x, terms) in batch {
            let t = self.forward_trace(x)?;
            total += terms.ip.map_or(0.0, |ip| ip.value(sigmoid(t.logits[0]))) + terms.dp.value(sigmoid(t.logits[1]));
            n += 1;
        }
        Ok(total / n.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LogLossTerms;

    fn net() -> BiDefuseNet {
        let mut n = BiDefuseNet::init(BiDefuseArch { input_dim: 3, expert_dim: 2 }, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        n.params.iter_mut().for_each(|p| *p += rng.random_range(-0.7..0.7));
        n
    }

    #[test]
    fn parameter_count() {
        assert_eq!(BiDefuseArch { input_dim: 3, expert_dim: 2 }.n_params(), 46);
    }

    #[test]
    fn gates_are_probability_vectors() {
        let n = net();
        for x in [Features::one_hot(0), Features::dense(&[3.0, -2.0, 0.5])] {
            let t = n.forward_trace(&x).unwrap();
            for g in t.gates {
                assert!((g[0] + g[1] - 1.0).abs() < 1e-15);
                assert!(g.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn saturated_gates_share_representation() {
        let mut n = net();
        let a = n.arch;
        for g in 0..2 {
            let off = a.gate_offset(g);
            n.params[off + 2 * a.input_dim] = -800.0;
            n.params[off + 2 * a.input_dim + 1] = 800.0;
        }
        let t = n.forward_trace(&Features::one_hot(1)).unwrap();
        assert_eq!(t.hidden[0], t.hidden[1]);
        assert_eq!(t.hidden[0], t.expert[SHARED_EXPERT]);
    }

    #[test]
    fn reported_cvr_is_clamped_head_sum() {
        let mut n = net();
        let off = n.arch.head_offset(IP_HEAD);
        n.params[off..off + 3].copy_from_slice(&[0.0, 0.0, 500.0]);
        let off = n.arch.head_offset(DP_HEAD);
        n.params[off..off + 3].copy_from_slice(&[0.0, 0.0, 500.0]);
        assert_eq!(n.cvr(&Features::one_hot(0)).unwrap(), 1.0 - crate::losses::EPS);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let n = net();
        let x = Features::dense(&[0.4, -1.1, 0.8]);
        let terms = BiDefuseTerms { ip: Some(LogLossTerms::label(true)), dp: LogLossTerms { pos: 0.3, neg: 0.9 } };
        let (_, g) = n.batch_gradient([(0, &x, terms)]).unwrap();
        let h = 1e-5;
        for (i, &gi) in g.iter().enumerate() {
            let mut hi = n.clone();
            hi.params[i] += h;
            let mut lo = n.clone();
            lo.params[i] -= h;
            let fd = (hi.batch_loss([(0, &x, terms)]).unwrap() - lo.batch_loss([(0, &x, terms)]).unwrap()) / (2.0 * h);
            assert!((fd - gi).abs() < 1e-7 * (1.0 + fd.abs()), "param {i}: {fd} vs {gi}");
        }
    }

    #[test]
    fn missing_ip_term_leaves_in_head_untouched() {
        let n = net();
        let x = Features::one_hot(2);
        let terms = BiDefuseTerms { ip: None, dp: LogLossTerms::label(true) };
        let (_, g) = n.batch_gradient([(0, &x, terms)]).unwrap();
        let off = n.arch.head_offset(IP_HEAD);
        assert!(g[off..off + n.arch.head_len()].iter().all(|&v| v == 0.0));
        let goff = n.arch.gate_offset(IN_GATE);
        assert!(g[goff..goff + n.arch.gate_len()].iter().all(|&v| v == 0.0));
    }
}
