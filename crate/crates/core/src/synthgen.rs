//! Synthetic click streams with a known conversion function and delay law.
//!
//! Every quantity the estimators try to recover (conversion probability,
//! delayed-conversion mass, fake-negative probability) is available in closed
//! form through [`GroundTruthModel::truth`], which is what makes oracle
//! checks possible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ClickEvent, Features, Seconds, WindowConfig, HOUR};

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayComponent {
    pub weight: f64,
    /// Events per second.
    pub rate: f64,
}

/// Mixture of exponentials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayLaw {
    pub components: Vec<DelayComponent>,
}

impl DelayLaw {
    pub fn new(components: Vec<DelayComponent>) -> Result<Self> {
        let law = DelayLaw { components };
        law.validate()?;
        Ok(law)
    }

    pub fn exponential(rate: f64) -> Result<Self> {
        DelayLaw::new(vec![DelayComponent { weight: 1.0, rate }])
    }

    /// Three-component mixture least-squares fitted to the Criteo cumulative
    /// delay profile: 42% by 30 min, 56% by 12 h, 61% by 1 day, 71% by 3 days
    /// and 81% by 7 days. Component means are roughly 15 min, 20 h and 10 days.
    pub fn criteo() -> Self {
        DelayLaw {
            components: vec![
                DelayComponent { weight: 0.483_011_59, rate: 1.097_469_18e-3 },
                DelayComponent { weight: 0.126_869_27, rate: 1.395_604_60e-5 },
                DelayComponent { weight: 0.390_119_14, rate: 1.189_769_03e-6 },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::Config("delay law needs at least one component".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("delay mixture weights sum to {total}, not 1")));
        }
        for c in &self.components {
            if !(c.rate > 0.0 && c.rate.is_finite()) || c.weight.is_nan() || c.weight < 0.0 {
                return Err(Error::Config(format!("invalid delay component {c:?}")));
            }
        }
        Ok(())
    }

    /// P(delay <= t) with every rate scaled by `rate_scale`.
    pub fn cdf_scaled(&self, t: f64, rate_scale: f64) -> Result<f64> {
        if t.is_nan() || t < 0.0 {
            return Err(Error::Domain(format!("delay cdf evaluated at negative time {t}")));
        }
        Ok(self
            .components
            .iter()
            .map(|c| c.weight * -(-c.rate * rate_scale * t).exp_m1())
            .sum())
    }

    pub fn cdf(&self, t: f64) -> Result<f64> {
        self.cdf_scaled(t, 1.0)
    }

    fn sample<R: Rng>(&self, rng: &mut R, rate_scale: f64) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.components.last().expect("validated law");
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        Exp::new(chosen.rate * rate_scale).expect("positive rate").sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ContextSpec {
    /// `k` discrete contexts, encoded as a single active index.
    OneHot { k: usize },
    /// `n` independent standard-normal features.
    Dense { n: usize },
}

impl ContextSpec {
    pub fn dim(&self) -> usize {
        match *self {
            ContextSpec::OneHot { k } => k,
            ContextSpec::Dense { n } => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthModel {
    pub theta_star: Vec<f64>,
    #[serde(default)]
    pub intercept: f64,
    pub delay_law: DelayLaw,
    pub context: ContextSpec,
    /// Per-context delay rate multiplier (one-hot contexts only). A multiplier
    /// above 1 makes that context convert faster.
    #[serde(default)]
    pub rate_multipliers: Option<Vec<f64>>,
}

/// Closed-form per-context quantities, with the attribution horizon applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    /// p(y=1|x) after attribution.
    pub p1: f64,
    /// p(y=1, d <= w_o | x).
    pub p_win: f64,
    /// p(y=1, d > w_o | x).
    pub f_dp: f64,
}

impl Truth {
    pub fn p0(&self) -> f64 {
        1.0 - self.p1
    }

    /// Probability that an observed negative is a fake negative.
    pub fn z(&self) -> f64 {
        let denom = self.p0() + self.f_dp;
        if denom > 0.0 {
            self.f_dp / denom
        } else {
            0.0
        }
    }

    /// Fraction of converters that convert inside the observation window.
    pub fn in_window_fraction(&self) -> f64 {
        self.p_win / self.p1
    }
}

impl GroundTruthModel {
    /// Default desk-scale fixture: 8 one-hot contexts with conversion rates
    /// spread evenly over [0.05, 0.5] and the Criteo delay profile.
    pub fn desk(k: usize) -> Self {
        let theta_star = (0..k)
            .map(|i| {
                let cvr = if k == 1 { 0.05 } else { 0.05 + 0.45 * i as f64 / (k - 1) as f64 };
                logit(cvr)
            })
            .collect();
        GroundTruthModel {
            theta_star,
            intercept: 0.0,
            delay_law: DelayLaw::criteo(),
            context: ContextSpec::OneHot { k },
            rate_multipliers: None,
        }
    }

    pub fn with_rate_multipliers(mut self, m: Vec<f64>) -> Self {
        self.rate_multipliers = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.delay_law.validate()?;
        if self.theta_star.len() != self.context.dim() {
            return Err(Error::Config(format!(
                "theta_star has {} entries for a {}-dimensional context",
                self.theta_star.len(),
                self.context.dim()
            )));
        }
        if self.theta_star.iter().any(|t| !t.is_finite()) || !self.intercept.is_finite() {
            return Err(Error::Config("theta_star must be finite".into()));
        }
        if let Some(m) = &self.rate_multipliers {
            if !matches!(self.context, ContextSpec::OneHot { .. }) {
                return Err(Error::Config("rate multipliers need one-hot contexts".into()));
            }
            if m.len() != self.context.dim() || m.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::Config("one positive rate multiplier per context".into()));
            }
        }
        Ok(())
    }

    fn check_features(&self, x: &Features) -> Result<()> {
        match x.max_index() {
            Some(i) if i as usize >= self.context.dim() => Err(Error::Config(format!(
                "feature index {i} outside {}-dimensional context",
                self.context.dim()
            ))),
            _ => Ok(()),
        }
    }

    /// Conversion probability before the attribution horizon is applied.
    pub fn true_cvr(&self, x: &Features) -> Result<f64> {
        self.check_features(x)?;
        Ok(sigmoid(self.intercept + x.dot(&self.theta_star)))
    }

    pub fn delay_cdf(&self, t: f64) -> Result<f64> {
        self.delay_law.cdf(t)
    }

    fn rate_scale(&self, x: &Features) -> f64 {
        match (&self.rate_multipliers, x.0.first()) {
            (Some(m), Some(&(i, _))) => m[i as usize],
            _ => 1.0,
        }
    }

    /// P(delay <= t | x, converts).
    pub fn delay_cdf_for(&self, x: &Features, t: f64) -> Result<f64> {
        self.delay_law.cdf_scaled(t, self.rate_scale(x))
    }

    /// Closed-form per-context truth for windows `w`. Delays are whole seconds
    /// rounded up, so a click is attributed iff its raw delay is <= `w_a - 1`.
    pub fn truth(&self, x: &Features, w: &WindowConfig) -> Result<Truth> {
        let cvr = self.true_cvr(x)?;
        let f_win = self.delay_cdf_for(x, w.w_o as f64)?;
        let f_attr = self.delay_cdf_for(x, (w.w_a - 1) as f64)?;
        Ok(Truth { p1: cvr * f_attr, p_win: cvr * f_win, f_dp: cvr * (f_attr - f_win) })
    }

    /// Feature vector of context `k` (one-hot only).
    pub fn context_features(&self, k: usize) -> Features {
        Features::one_hot(k as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_clicks: usize,
    pub seed: u64,
    pub clicks_per_hour: f64,
    pub model: GroundTruthModel,
    pub windows: WindowConfig,
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clicks_per_hour > 0.0 && self.clicks_per_hour.is_finite()) {
            return Err(Error::Config("clicks_per_hour must be positive".into()));
        }
        self.windows.validate()?;
        self.model.validate()
    }
}

/// Raw outcome of a click before the attribution horizon is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RawClick {
    pub features: Features,
    pub click_time: Seconds,
    pub delay: Option<Seconds>,
}

/// Draws clicks as a Poisson process. Delays are rounded up to whole seconds,
/// so every recorded delay is at least one second. `delay` is pre-horizon.
pub fn generate_raw(config: &GenConfig) -> Result<Vec<RawClick>> {
    config.validate()?;
    let model = &config.model;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gap = Exp::new(config.clicks_per_hour / HOUR as f64).expect("positive click rate");
    let mut clock = 0.0f64;
    let mut out = Vec::with_capacity(config.n_clicks);
    for _ in 0..config.n_clicks {
        clock += gap.sample(&mut rng);
        let features = match model.context {
            ContextSpec::OneHot { k } => Features::one_hot(rng.random_range(0..k) as u32),
            ContextSpec::Dense { n } => {
                let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
                Features::dense(&v)
            }
        };
        let cvr = model.true_cvr(&features)?;
        let converts = rng.random::<f64>() < cvr;
        let delay = if converts {
            let raw = model.delay_law.sample(&mut rng, model.rate_scale(&features));
            Some((raw.ceil() as Seconds).max(1))
        } else {
            None
        };
        out.push(RawClick { features, click_time: clock.floor() as Seconds, delay });
    }
    Ok(out)
}

/// Generates a click stream ordered by click time with sequential ids.
pub fn generate(config: &GenConfig) -> Result<Vec<ClickEvent>> {
    Ok(generate_raw(config)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| ClickEvent::new(i as u64, r.features, r.click_time, r.delay, &config.windows))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{DAY, MINUTE};

    fn single_context(cvr: f64) -> GroundTruthModel {
        GroundTruthModel {
            theta_star: vec![logit(cvr)],
            intercept: 0.0,
            delay_law: DelayLaw::criteo(),
            context: ContextSpec::OneHot { k: 1 },
            rate_multipliers: None,
        }
    }

    fn config(n: usize, model: GroundTruthModel) -> GenConfig {
        GenConfig {
            n_clicks: n,
            seed: 11,
            clicks_per_hour: 20_000.0,
            model,
            windows: WindowConfig::new(30 * MINUTE, 30 * DAY).unwrap(),
        }
    }

    #[test]
    fn true_cvr_examples() {
        let mut m = single_context(0.5);
        m.theta_star = vec![0.0];
        assert_eq!(m.true_cvr(&Features::one_hot(0)).unwrap(), 0.5);
        m.theta_star = vec![1e4];
        assert_eq!(m.true_cvr(&Features::one_hot(0)).unwrap(), 1.0);
        m.theta_star = vec![(0.25f64 / 0.75).ln()];
        assert!((m.true_cvr(&Features::one_hot(0)).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(m.true_cvr(&Features::one_hot(3)), Err(Error::Config(_))));
    }

    #[test]
    fn delay_cdf_examples() {
        let law = DelayLaw::criteo();
        assert_eq!(law.cdf(0.0).unwrap(), 0.0);
        let single = DelayLaw::exponential(0.01).unwrap();
        assert!((single.cdf(2f64.ln() / 0.01).unwrap() - 0.5).abs() < 1e-12);
        assert!((law.cdf(1800.0).unwrap() - 0.42).abs() < 0.02);
        assert!((law.cdf(86_400.0).unwrap() - 0.61).abs() < 0.02);
        assert!((law.cdf(7.0 * 86_400.0).unwrap() - 0.81).abs() < 0.02);
        assert!(law.cdf(-1.0).is_err());
        assert!((law.cdf(1e12).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_stream() {
        assert!(generate(&config(0, single_context(0.3))).unwrap().is_empty());
    }

    #[test]
    fn same_seed_same_stream() {
        let c = config(2000, GroundTruthModel::desk(8));
        let a = serde_json::to_vec(&generate(&c).unwrap()).unwrap();
        let b = serde_json::to_vec(&generate(&c).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clicks_are_time_ordered_with_sequential_ids() {
        let clicks = generate(&config(5000, GroundTruthModel::desk(8))).unwrap();
        assert!(clicks.windows(2).all(|w| w[0].click_time <= w[1].click_time));
        assert!(clicks.iter().enumerate().all(|(i, c)| c.click_id == i as u64));
    }

    #[test]
    fn conversion_fraction_matches_cvr() {
        // Binomial 3 sigma at n = 1e6, p = 0.3 is 0.001375.
        let raw = generate_raw(&config(1_000_000, single_context(0.3))).unwrap();
        let frac = raw.iter().filter(|r| r.delay.is_some()).count() as f64 / raw.len() as f64;
        assert!((frac - 0.30).abs() < 0.0015, "conversion fraction {frac}");
    }

    #[test]
    fn in_window_fraction_matches_delay_cdf() {
        let c = config(400_000, single_context(0.4));
        let raw = generate_raw(&c).unwrap();
        let delays: Vec<_> = raw.iter().filter_map(|r| r.delay).collect();
        let n = delays.len() as f64;
        let p = c.model.delay_cdf(1800.0).unwrap();
        let emp = delays.iter().filter(|&&d| d <= 1800).count() as f64 / n;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((emp - p).abs() < 3.0 * sigma, "{emp} vs {p}");
    }

    #[test]
    fn rate_multiplier_changes_in_window_mass() {
        let m = GroundTruthModel::desk(2).with_rate_multipliers(vec![1.0, 4.0]);
        let w = WindowConfig::new(30 * MINUTE, DAY).unwrap();
        let slow = m.delay_cdf_for(&Features::one_hot(0), w.w_o as f64).unwrap();
        let fast = m.delay_cdf_for(&Features::one_hot(1), w.w_o as f64).unwrap();
        assert!(fast > slow);
        let t = m.truth(&Features::one_hot(1), &w).unwrap();
        assert!((t.p_win - 0.5 * fast).abs() < 1e-15);
    }

    #[test]
    fn dense_context_dimension() {
        let model = GroundTruthModel {
            theta_star: vec![0.5, -0.25, 0.1],
            intercept: -1.0,
            delay_law: DelayLaw::criteo(),
            context: ContextSpec::Dense { n: 3 },
            rate_multipliers: None,
        };
        let clicks = generate(&config(100, model)).unwrap();
        assert!(clicks.iter().all(|c| c.features.0.len() == 3));
    }
}
