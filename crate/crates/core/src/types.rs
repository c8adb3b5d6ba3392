//! Click events, observation windows and the four-way sample taxonomy.
//!
//! Times are integer seconds since a per-run epoch. A conversion delay of
//! `None` means the click never converts inside the attribution window;
//! delays at or beyond `w_a` are folded into `None` when events are built,
//! so nothing downstream compares a delay against `w_a`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Seconds = u64;

pub const MINUTE: Seconds = 60;
pub const HOUR: Seconds = 3600;
pub const DAY: Seconds = 24 * HOUR;

/// Sparse feature vector of `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Features(pub Vec<(u32, f64)>);

impl Features {
    pub fn one_hot(index: u32) -> Self {
        Features(vec![(index, 1.0)])
    }

    pub fn dense(values: &[f64]) -> Self {
        Features(values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().map(|&(i, v)| (i as usize, v))
    }

    pub fn max_index(&self) -> Option<u32> {
        self.0.iter().map(|&(i, _)| i).max()
    }

    pub fn dot(&self, weights: &[f64]) -> f64 {
        self.iter().map(|(i, v)| weights[i] * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Observation window.
    pub w_o: Seconds,
    /// Attribution window.
    pub w_a: Seconds,
}

impl WindowConfig {
    pub fn new(w_o: Seconds, w_a: Seconds) -> Result<Self> {
        let w = WindowConfig { w_o, w_a };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_a == 0 {
            return Err(Error::Config("attribution window must be positive".into()));
        }
        if self.w_o >= self.w_a {
            return Err(Error::Config(format!(
                "observation window {}s must be shorter than attribution window {}s",
                self.w_o, self.w_a
            )));
        }
        Ok(())
    }

    /// Same attribution window, zero observation window (the FNW setting).
    pub fn without_wait(&self) -> Self {
        WindowConfig { w_o: 0, w_a: self.w_a }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickEvent {
    pub click_id: u64,
    pub features: Features,
    pub click_time: Seconds,
    pub conversion_delay: Option<Seconds>,
}

impl ClickEvent {
    /// Builds a click, folding delays at or past the attribution horizon into
    /// "never converts".
    pub fn new(
        click_id: u64,
        features: Features,
        click_time: Seconds,
        delay: Option<Seconds>,
        w: &WindowConfig,
    ) -> Self {
        ClickEvent {
            click_id,
            features,
            click_time,
            conversion_delay: delay.filter(|&d| d < w.w_a),
        }
    }

    pub fn converts(&self) -> bool {
        self.conversion_delay.is_some()
    }

    pub fn conversion_time(&self) -> Option<Seconds> {
        self.conversion_delay.map(|d| self.click_time + d)
    }

    /// Converted inside the observation window.
    pub fn in_window(&self, w: &WindowConfig) -> bool {
        matches!(self.conversion_delay, Some(d) if d <= w.w_o)
    }

    /// Converted after the observation window (but inside attribution).
    pub fn out_window(&self, w: &WindowConfig) -> bool {
        matches!(self.conversion_delay, Some(d) if d > w.w_o)
    }
}

/// Immediate positive, fake negative, real negative, delayed positive.
/// The discriminant order is the tie-break order inside one click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SampleKind {
    IP,
    FN,
    RN,
    DP,
}

impl SampleKind {
    /// The label a sample of this kind carries when it is ingested.
    pub fn observed_label(self) -> bool {
        matches!(self, SampleKind::IP | SampleKind::DP)
    }

    /// Whether the training process can tell this kind apart from the others.
    pub fn observable(self) -> bool {
        matches!(self, SampleKind::IP | SampleKind::DP)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedSample {
    pub click_id: u64,
    pub features: Features,
    pub label: bool,
    pub ingestion_time: Seconds,
    pub kind: SampleKind,
    /// Second ingestion of a click that was already ingested with the same kind
    /// (DEFER re-sends IP and RN samples once attribution completes).
    pub duplicate: bool,
}

/// What a loss function is allowed to see about a sample: the observed label
/// and whether a positive arrived inside the window. Fake and real negatives
/// are indistinguishable here by construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub label: bool,
    pub immediate: bool,
}

impl Observation {
    pub const IMMEDIATE_POSITIVE: Observation = Observation { label: true, immediate: true };
    pub const DELAYED_POSITIVE: Observation = Observation { label: true, immediate: false };
    pub const NEGATIVE: Observation = Observation { label: false, immediate: false };
}

impl ObservedSample {
    pub fn observation(&self) -> Result<Observation> {
        if self.label != self.kind.observed_label() {
            return Err(Error::InvalidSample(format!(
                "click {} ingested as {:?} with label {}",
                self.click_id, self.kind, self.label as u8
            )));
        }
        Ok(match self.kind {
            SampleKind::IP => Observation::IMMEDIATE_POSITIVE,
            SampleKind::DP => Observation::DELAYED_POSITIVE,
            SampleKind::FN | SampleKind::RN => Observation::NEGATIVE,
        })
    }

    pub(crate) fn order_key(&self) -> (Seconds, u64, SampleKind, bool) {
        (self.ingestion_time, self.click_id, self.kind, self.duplicate)
    }
}

/// Recovers the attributed label from an observed label and the (eventually
/// known) conversion delay.
pub fn correct_label(v: bool, delay: Option<Seconds>, w: &WindowConfig) -> Result<bool> {
    match (v, delay) {
        (true, _) => Ok(true),
        (false, None) => Ok(false),
        (false, Some(d)) if d > w.w_o => Ok(true),
        (false, Some(d)) => Err(Error::InvalidSample(format!(
            "negative observation with delay {d}s inside observation window {}s",
            w.w_o
        ))),
    }
}

/// Canonical (ES-DFM style) ingestions of one click.
pub fn classify_ingestions(click: &ClickEvent, w: &WindowConfig) -> Vec<(SampleKind, Seconds)> {
    let t0 = click.click_time;
    match click.conversion_delay {
        Some(d) if d <= w.w_o => vec![(SampleKind::IP, t0 + w.w_o)],
        Some(d) => vec![(SampleKind::FN, t0 + w.w_o), (SampleKind::DP, t0 + d)],
        None => vec![(SampleKind::RN, t0 + w.w_o)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win() -> WindowConfig {
        WindowConfig::new(30 * MINUTE, 30 * DAY).unwrap()
    }

    fn click(delay: Option<Seconds>) -> ClickEvent {
        ClickEvent::new(7, Features::one_hot(0), 1000, delay, &win())
    }

    #[test]
    fn correct_label_cases() {
        let w = win();
        assert!(correct_label(true, Some(600), &w).unwrap());
        assert!(!correct_label(false, None, &w).unwrap());
        assert!(correct_label(false, Some(7200), &w).unwrap());
        assert!(matches!(correct_label(false, Some(60), &w), Err(Error::InvalidSample(_))));
    }

    #[test]
    fn classify_examples() {
        let w = win();
        assert_eq!(classify_ingestions(&click(Some(600)), &w), vec![(SampleKind::IP, 1000 + 1800)]);
        assert_eq!(classify_ingestions(&click(None), &w), vec![(SampleKind::RN, 1000 + 1800)]);
        assert_eq!(
            classify_ingestions(&click(Some(7200)), &w),
            vec![(SampleKind::FN, 1000 + 1800), (SampleKind::DP, 1000 + 7200)]
        );
    }

    #[test]
    fn delay_at_horizon_is_no_conversion() {
        let w = win();
        assert_eq!(click(Some(w.w_a)).conversion_delay, None);
        assert_eq!(click(Some(w.w_a - 1)).conversion_delay, Some(w.w_a - 1));
    }

    #[test]
    fn window_validation() {
        assert!(WindowConfig::new(3600, 3600).is_err());
        assert!(WindowConfig::new(0, 0).is_err());
        assert!(WindowConfig::new(0, 1).is_ok());
    }

    #[test]
    fn inconsistent_kind_is_rejected() {
        let s = ObservedSample {
            click_id: 1,
            features: Features::default(),
            label: false,
            ingestion_time: 0,
            kind: SampleKind::IP,
            duplicate: false,
        };
        assert!(s.observation().is_err());
    }

    proptest::proptest! {
        #[test]
        fn every_ingestion_recovers_the_same_label(delay in proptest::option::of(0u64..40 * DAY)) {
            let w = win();
            let c = click(delay);
            let ingestions = classify_ingestions(&c, &w);
            let kinds: Vec<_> = ingestions.iter().map(|k| k.0).collect();
            let shape_ok = kinds == [SampleKind::IP]
                || kinds == [SampleKind::RN]
                || kinds == [SampleKind::FN, SampleKind::DP];
            proptest::prop_assert!(shape_ok);
            for (kind, t) in ingestions {
                proptest::prop_assert!(t >= c.click_time);
                let y = correct_label(kind.observed_label(), c.conversion_delay, &w).unwrap();
                proptest::prop_assert_eq!(y, c.converts());
            }
        }
    }
}
