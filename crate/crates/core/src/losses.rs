//! Loss and importance-weight calculus.
//!
//! Every loss here is a weighted binary cross-entropy on one output
//! probability `p`: `-pos * ln p - neg * ln(1 - p)`. The weights depend on
//! auxiliary predictions (`f_dp`, `z`, and for some estimators `f_theta`
//! itself) that are treated as constants when differentiating, so a loss is
//! fully described by its [`LogLossTerms`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipelines::Mechanism;
use crate::types::Observation;

/// Probability clamp used wherever a logarithm is taken.
pub const EPS: f64 = 1e-7;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Coefficients of `-pos * ln p - neg * ln(1 - p)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LogLossTerms {
    pub pos: f64,
    pub neg: f64,
}

impl LogLossTerms {
    pub fn label(y: bool) -> Self {
        if y {
            LogLossTerms { pos: 1.0, neg: 0.0 }
        } else {
            LogLossTerms { pos: 0.0, neg: 1.0 }
        }
    }

    pub fn value(&self, p: f64) -> f64 {
        let p = clamp_prob(p);
        let mut loss = 0.0;
        if self.pos != 0.0 {
            loss -= self.pos * p.ln();
        }
        if self.neg != 0.0 {
            loss -= self.neg * (-p).ln_1p();
        }
        loss
    }

    /// Derivative with respect to the logit of `p`; zero where the clamp is active.
    pub fn logit_gradient(&self, p: f64) -> f64 {
        if !(EPS..=1.0 - EPS).contains(&p) {
            return 0.0;
        }
        -self.pos * (1.0 - p) + self.neg * p
    }

    pub fn is_finite(&self) -> bool {
        self.pos.is_finite() && self.neg.is_finite()
    }
}

pub fn ideal_loss(y: bool, p: f64) -> f64 {
    LogLossTerms::label(y).value(p)
}

/// Importance weights of the four sample types.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceWeights {
    pub w_ip: f64,
    pub w_fn: f64,
    pub w_rn: f64,
    pub w_dp: f64,
}

impl ImportanceWeights {
    /// ES-DFM duplication: `w_ip = w_rn = 1 + f_dp`, `w_dp = 1`, `w_fn = f_dp`.
    pub fn esdfm(f_dp: f64) -> Self {
        let w = ImportanceWeights { w_ip: 1.0 + f_dp, w_fn: f_dp, w_rn: 1.0 + f_dp, w_dp: 1.0 };
        debug_assert!(w.satisfies(Mechanism::Esdfm, f_dp));
        w
    }

    /// FNW duplication, where the delayed mass is the whole conversion mass
    /// and is estimated by `f_theta` itself.
    pub fn fnw(f_theta: f64) -> Self {
        let w = ImportanceWeights { w_ip: 0.0, w_fn: f_theta, w_rn: 1.0 + f_theta, w_dp: 1.0 };
        debug_assert!(w.satisfies(Mechanism::Fnw, f_theta));
        w
    }

    /// DEFER duplication: IP and RN are ingested twice.
    pub fn defer() -> Self {
        let w = ImportanceWeights { w_ip: 2.0, w_fn: 1.0, w_rn: 2.0, w_dp: 1.0 };
        debug_assert!(w.satisfies(Mechanism::Defer, 0.0));
        w
    }

    /// Checks the constraint set of `mechanism`; `mass` is `f_dp` for ES-DFM
    /// and `f_theta` for FNW, ignored for DEFER.
    pub fn satisfies(&self, mechanism: Mechanism, mass: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
        let nonneg = [self.w_ip, self.w_fn, self.w_rn, self.w_dp].iter().all(|&w| w >= 0.0);
        nonneg
            && match mechanism {
                Mechanism::Esdfm | Mechanism::VanillaWin => {
                    close(self.w_ip, 1.0 + mass)
                        && close(self.w_rn, 1.0 + mass)
                        && close(self.w_dp + self.w_fn, 1.0 + mass)
                }
                Mechanism::Fnw => close(self.w_rn, 1.0 + mass) && close(self.w_dp + self.w_fn, 1.0 + mass),
                Mechanism::Defer => {
                    close(self.w_ip, 2.0) && close(self.w_rn, 2.0) && close(self.w_dp + self.w_fn, 2.0)
                }
                Mechanism::Oracle | Mechanism::Vanilla => false,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZSource {
    Z1,
    Z2,
    Oracle,
}

impl ZSource {
    pub const ALL: [ZSource; 3] = [ZSource::Z1, ZSource::Z2, ZSource::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            ZSource::Z1 => "z1",
            ZSource::Z2 => "z2",
            ZSource::Oracle => "oracle",
        }
    }
}

impl fmt::Display for ZSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ZSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ZSource::ALL
            .into_iter()
            .find(|z| z.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown z source {s:?}")))
    }
}

/// Probability that an observed negative is a fake negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZEstimate {
    pub z: f64,
    pub source: ZSource,
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} is not a probability")))
    }
}

/// `z = p(y=1, d>w_o | x) / (p(y=0 | x) + p(y=1, d>w_o | x))` from ground truth.
pub fn z_oracle(p_fn_mass: f64, p0: f64) -> Result<ZEstimate> {
    check_unit("fake-negative mass", p_fn_mass)?;
    check_unit("p0", p0)?;
    let denom = p0 + p_fn_mass;
    if denom <= 0.0 {
        return Err(Error::Domain("z undefined: no observed-negative mass".into()));
    }
    Ok(ZEstimate { z: (p_fn_mass / denom).clamp(0.0, 1.0), source: ZSource::Oracle })
}

/// `z1 = 1 - f_rn`.
pub fn z1(f_rn: f64) -> ZEstimate {
    ZEstimate { z: (1.0 - f_rn).clamp(0.0, 1.0), source: ZSource::Z1 }
}

/// `z2 = f_dp / (f_dp + 1 - f_theta)`, denominator clamped below at `EPS`.
pub fn z2(f_dp: f64, f_theta: f64) -> ZEstimate {
    let denom = (f_dp + 1.0 - f_theta).max(EPS);
    ZEstimate { z: (f_dp / denom).clamp(0.0, 1.0), source: ZSource::Z2 }
}

fn q_negative_raw(mechanism: Mechanism, p1: f64, f_dp: f64) -> Option<f64> {
    let p0 = 1.0 - p1;
    match mechanism {
        Mechanism::Fnw => Some(1.0 / (1.0 + p1)),
        Mechanism::Esdfm | Mechanism::VanillaWin => Some((p0 + f_dp) / (1.0 + f_dp)),
        Mechanism::Defer => Some(p0 + 0.5 * f_dp),
        Mechanism::Oracle | Mechanism::Vanilla => None,
    }
}

/// Observed-negative rate `q(y=0 | x)` of a duplication mechanism.
pub fn q_negative(mechanism: Mechanism, p0: f64, p1: f64, f_dp: f64) -> Result<f64> {
    check_unit("p0", p0)?;
    check_unit("p1", p1)?;
    check_unit("f_dp", f_dp)?;
    if (p0 + p1 - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("p0 + p1 = {} != 1", p0 + p1)));
    }
    if f_dp > p1 + 1e-12 {
        return Err(Error::Domain(format!("f_dp = {f_dp} exceeds p1 = {p1}")));
    }
    q_negative_raw(mechanism, p1, f_dp)
        .ok_or_else(|| Error::Domain(format!("{mechanism} has no importance-sampling correction")))
}

/// `(p(y=1|x)/q(y=1|x), p(y=0|x)/q(y=0|x))` with `p(y=1|x)` estimated by the
/// model output `p`.
pub fn baseline_weights(mechanism: Mechanism, p: f64, f_dp: f64) -> Result<(f64, f64)> {
    let p1 = p.clamp(0.0, 1.0);
    let q0 = q_negative_raw(mechanism, p1, f_dp.clamp(0.0, 1.0))
        .ok_or_else(|| Error::Domain(format!("{mechanism} has no importance-sampling correction")))?;
    let q1 = 1.0 - q0;
    Ok((p1 / q1.max(EPS), (1.0 - p1) / q0.max(EPS)))
}

pub fn baseline_terms(mechanism: Mechanism, v: bool, p: f64, f_dp: f64) -> Result<LogLossTerms> {
    let (w_pos, w_neg) = baseline_weights(mechanism, p, f_dp)?;
    Ok(if v { LogLossTerms { pos: w_pos, neg: 0.0 } } else { LogLossTerms { pos: 0.0, neg: w_neg } })
}

/// Importance-weighted cross-entropy of the earlier methods: observed
/// negatives are weighted as if they were all real negatives.
pub fn baseline_is_loss(mechanism: Mechanism, v: bool, p: f64, f_dp: f64) -> Result<f64> {
    Ok(baseline_terms(mechanism, v, p, f_dp)?.value(p))
}

/// Four-type weighted loss with the latent fake-negative indicator replaced
/// by `z` on observed negatives.
pub fn defuse_terms(obs: Observation, z: ZEstimate, weights: &ImportanceWeights) -> LogLossTerms {
    match (obs.label, obs.immediate) {
        (true, true) => LogLossTerms { pos: weights.w_ip, neg: 0.0 },
        (true, false) => LogLossTerms { pos: weights.w_dp, neg: 0.0 },
        (false, _) => LogLossTerms { pos: z.z * weights.w_fn, neg: (1.0 - z.z) * weights.w_rn },
    }
}

pub fn defuse_loss(obs: Observation, f_theta: f64, z: ZEstimate, weights: &ImportanceWeights) -> f64 {
    defuse_terms(obs, z, weights).value(f_theta)
}

/// DEFUSE on the FNW stream: no immediate positives exist, `f_theta` stands
/// in for the delayed mass.
pub fn defuse_fnw_terms(obs: Observation, f_theta: f64, z: ZEstimate) -> Result<LogLossTerms> {
    if obs.immediate {
        return Err(Error::InvalidSample("immediate positive in an FNW stream".into()));
    }
    Ok(defuse_terms(obs, z, &ImportanceWeights::fnw(f_theta)))
}

pub fn defuse_fnw_loss(obs: Observation, f_theta: f64, z: ZEstimate) -> Result<f64> {
    Ok(defuse_fnw_terms(obs, f_theta, z)?.value(f_theta))
}

pub fn defuse_defer_terms(obs: Observation, z: ZEstimate) -> LogLossTerms {
    defuse_terms(obs, z, &ImportanceWeights::defer())
}

pub fn defuse_defer_loss(obs: Observation, f_theta: f64, z: ZEstimate) -> f64 {
    defuse_defer_terms(obs, z).value(f_theta)
}

/// Per-head terms of the two-head model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiDefuseTerms {
    /// In-window head; `None` for delayed-positive replays, which are not part
    /// of the non-duplicated in-window stream.
    pub ip: Option<LogLossTerms>,
    /// Out-window head, trained on the zero-window stream in which every click
    /// is first a negative and out-window converters are replayed.
    pub dp: LogLossTerms,
}

/// `w'_dp = 1`, `w'_fn = f_dp`, `w'_rn = 1 + f_dp`.
pub fn bidefuse_terms(obs: Observation, f_dp: f64, z_prime: ZEstimate) -> BiDefuseTerms {
    if obs.label && !obs.immediate {
        return BiDefuseTerms { ip: None, dp: LogLossTerms { pos: 1.0, neg: 0.0 } };
    }
    let z = z_prime.z;
    BiDefuseTerms {
        ip: Some(LogLossTerms::label(obs.label)),
        dp: LogLossTerms { pos: z * f_dp, neg: (1.0 - z) * (1.0 + f_dp) },
    }
}

/// `(L_IP, L_DP)` contributions of one sample.
pub fn bidefuse_loss(obs: Observation, f_ip: f64, f_dp_head: f64, f_dp: f64, z_prime: ZEstimate) -> (f64, f64) {
    let t = bidefuse_terms(obs, f_dp, z_prime);
    (t.ip.map_or(0.0, |ip| ip.value(f_ip)), t.dp.value(f_dp_head))
}

/// Reported conversion rate of the two-head model.
pub fn bidefuse_cvr(f_ip: f64, f_dp_head: f64) -> f64 {
    clamp_prob(f_ip + f_dp_head)
}

/// FNC: the model is trained with plain cross-entropy on the FNW stream,
/// where it learns `q = p / (1 + p)`; serving inverts that.
pub fn fnc_calibrate(q: f64) -> f64 {
    clamp_prob(q / (1.0 - q).max(EPS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Ideal,
    Vanilla,
    Fnw,
    Fnc,
    Esdfm,
    Defer,
    Defuse,
    BiDefuse,
    FnwDefuse,
    DeferDefuse,
}

impl LossKind {
    pub const ALL: [LossKind; 10] = [
        LossKind::Ideal,
        LossKind::Vanilla,
        LossKind::Fnw,
        LossKind::Fnc,
        LossKind::Esdfm,
        LossKind::Defer,
        LossKind::Defuse,
        LossKind::BiDefuse,
        LossKind::FnwDefuse,
        LossKind::DeferDefuse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ideal => "ideal",
            LossKind::Vanilla => "vanilla",
            LossKind::Fnw => "fnw",
            LossKind::Fnc => "fnc",
            LossKind::Esdfm => "esdfm",
            LossKind::Defer => "defer",
            LossKind::Defuse => "defuse",
            LossKind::BiDefuse => "bi-defuse",
            LossKind::FnwDefuse => "fnw-defuse",
            LossKind::DeferDefuse => "defer-defuse",
        }
    }

    /// Pipelines whose stream this loss is derived for.
    pub fn compatible(self, m: Mechanism) -> bool {
        use Mechanism::*;
        match self {
            LossKind::Ideal | LossKind::Vanilla => true,
            LossKind::Fnw | LossKind::Fnc | LossKind::FnwDefuse => m == Fnw,
            LossKind::Esdfm | LossKind::Defuse | LossKind::BiDefuse => matches!(m, Esdfm | VanillaWin),
            LossKind::Defer | LossKind::DeferDefuse => m == Defer,
        }
    }

    /// Whether training needs the delayed-mass model.
    pub fn uses_dp_model(self) -> bool {
        matches!(self, LossKind::Esdfm | LossKind::Defer | LossKind::Defuse | LossKind::BiDefuse | LossKind::DeferDefuse)
    }

    /// Whether the loss consumes a fake-negative estimate.
    pub fn uses_z(self) -> bool {
        matches!(self, LossKind::Defuse | LossKind::BiDefuse | LossKind::FnwDefuse | LossKind::DeferDefuse)
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?}")))
    }
}

/// Detached auxiliary values a single-head loss may depend on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxValues {
    pub f_theta: f64,
    pub f_dp: f64,
    pub z: ZEstimate,
}

/// Terms of a single-head loss for one observed sample.
pub fn single_head_terms(loss: LossKind, obs: Observation, aux: &AuxValues) -> Result<LogLossTerms> {
    let terms = match loss {
        LossKind::Ideal | LossKind::Vanilla | LossKind::Fnc => LogLossTerms::label(obs.label),
        LossKind::Fnw => baseline_terms(Mechanism::Fnw, obs.label, aux.f_theta, aux.f_dp)?,
        LossKind::Esdfm => baseline_terms(Mechanism::Esdfm, obs.label, aux.f_theta, aux.f_dp)?,
        LossKind::Defer => baseline_terms(Mechanism::Defer, obs.label, aux.f_theta, aux.f_dp)?,
        LossKind::Defuse => defuse_terms(obs, aux.z, &ImportanceWeights::esdfm(aux.f_dp)),
        LossKind::FnwDefuse => defuse_fnw_terms(obs, aux.f_theta, aux.z)?,
        LossKind::DeferDefuse => defuse_defer_terms(obs, aux.z),
        LossKind::BiDefuse => {
            return Err(Error::Config("bi-defuse trains two heads; use bidefuse_terms".into()))
        }
    };
    if !terms.is_finite() {
        return Err(Error::Fault(format!("non-finite {loss} weights {terms:?}")));
    }
    Ok(terms)
}
