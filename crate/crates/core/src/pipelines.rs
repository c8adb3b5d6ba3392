//! Duplication mechanisms: how a ground-truth click stream turns into the
//! observed training stream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{classify_ingestions, ClickEvent, ObservedSample, SampleKind, Seconds, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    /// One sample per click at `t0 + w_o` carrying the attributed label.
    Oracle,
    /// One sample per click at `t0 + w_o` with the observed label.
    Vanilla,
    /// Vanilla plus a positive replay at conversion time for late converters.
    VanillaWin,
    /// No waiting window: every click is a negative at `t0`, converters are
    /// replayed as positives at conversion time.
    Fnw,
    /// Waiting window; only delayed positives are replayed.
    Esdfm,
    /// ES-DFM ingestions plus re-ingestion of IP and RN samples at `t0 + w_a`.
    Defer,
}

impl Mechanism {
    pub const ALL: [Mechanism; 6] = [
        Mechanism::Oracle,
        Mechanism::Vanilla,
        Mechanism::VanillaWin,
        Mechanism::Fnw,
        Mechanism::Esdfm,
        Mechanism::Defer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Oracle => "oracle",
            Mechanism::Vanilla => "vanilla",
            Mechanism::VanillaWin => "vanilla-win",
            Mechanism::Fnw => "fnw",
            Mechanism::Esdfm => "esdfm",
            Mechanism::Defer => "defer",
        }
    }

    /// Windows actually used by this mechanism.
    pub fn effective_windows(self, w: &WindowConfig) -> WindowConfig {
        match self {
            Mechanism::Fnw => w.without_wait(),
            _ => *w,
        }
    }

    /// Whether the stream contains delayed-positive replays.
    pub fn replays_delayed_positives(self) -> bool {
        !matches!(self, Mechanism::Oracle | Mechanism::Vanilla)
    }

    /// Maps the stream-level rate `g` = P(ingestion is a DP replay | x) to the
    /// click-level delayed-conversion mass `f_dp(x)`.
    ///
    /// ES-DFM-like streams carry `1 + f_dp` ingestions per click, so
    /// `g = f_dp / (1 + f_dp)`; DEFER carries exactly two, so `g = f_dp / 2`.
    pub fn dp_rate_to_mass(self, g: f64) -> f64 {
        let f = match self {
            Mechanism::Defer => 2.0 * g,
            _ => g / (1.0 - g).max(f64::MIN_POSITIVE),
        };
        f.clamp(0.0, 1.0)
    }

    /// Maps `u` = P(DP replay | ingestion is not an immediate positive, x), the
    /// complement of what a real-negative classifier trained on the stream
    /// learns, to the click-level fake-negative probability
    /// `z = f_dp / (p0 + f_dp)`.
    pub fn fake_negative_from_stream(self, u: f64) -> f64 {
        let z = match self {
            Mechanism::Defer => 2.0 * u,
            _ => u / (1.0 - u).max(f64::MIN_POSITIVE),
        };
        z.clamp(0.0, 1.0)
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pipeline {s:?}")))
    }
}

fn sample(click: &ClickEvent, kind: SampleKind, time: Seconds, duplicate: bool) -> ObservedSample {
    ObservedSample {
        click_id: click.click_id,
        features: click.features.clone(),
        label: kind.observed_label(),
        ingestion_time: time,
        kind,
        duplicate,
    }
}

fn ingest_click(click: &ClickEvent, mechanism: Mechanism, w: &WindowConfig, out: &mut Vec<ObservedSample>) {
    let t0 = click.click_time;
    match mechanism {
        Mechanism::Oracle => {
            let kind = match click.conversion_delay {
                Some(d) if d <= w.w_o => SampleKind::IP,
                Some(_) => SampleKind::DP,
                None => SampleKind::RN,
            };
            out.push(sample(click, kind, t0 + w.w_o, false));
        }
        Mechanism::Vanilla => {
            let (kind, t) = classify_ingestions(click, w)[0];
            out.push(sample(click, kind, t, false));
        }
        Mechanism::VanillaWin | Mechanism::Esdfm => {
            for (kind, t) in classify_ingestions(click, w) {
                out.push(sample(click, kind, t, false));
            }
        }
        Mechanism::Fnw => match click.conversion_delay {
            Some(d) => {
                out.push(sample(click, SampleKind::FN, t0, false));
                out.push(sample(click, SampleKind::DP, t0 + d, false));
            }
            None => out.push(sample(click, SampleKind::RN, t0, false)),
        },
        Mechanism::Defer => {
            for (kind, t) in classify_ingestions(click, w) {
                out.push(sample(click, kind, t, false));
                if matches!(kind, SampleKind::IP | SampleKind::RN) {
                    out.push(sample(click, kind, t0 + w.w_a, true));
                }
            }
        }
    }
}

/// Builds the observed stream for `mechanism`, sorted by ingestion time with
/// ties broken by click id, then kind.
pub fn build_observed_stream(
    clicks: &[ClickEvent],
    mechanism: Mechanism,
    w: &WindowConfig,
) -> Result<Vec<ObservedSample>> {
    w.validate()?;
    if clicks.windows(2).any(|p| p[0].click_time > p[1].click_time) {
        return Err(Error::Config("clicks must be ordered by click time".into()));
    }
    if mechanism == Mechanism::Fnw && w.w_o != 0 {
        log::info!("fnw pipeline ignores the observation window ({}s); using 0", w.w_o);
    }
    let w = mechanism.effective_windows(w);
    let mut out = Vec::with_capacity(clicks.len() * 5 / 4);
    for click in clicks {
        ingest_click(click, mechanism, &w, &mut out);
    }
    out.sort_by_key(|s| s.order_key());
    Ok(out)
}

/// Number of ingestions a click produces under `mechanism`.
pub fn ingestion_count(mechanism: Mechanism, click: &ClickEvent, w: &WindowConfig) -> usize {
    let w = mechanism.effective_windows(w);
    match mechanism {
        Mechanism::Oracle | Mechanism::Vanilla => 1,
        Mechanism::VanillaWin | Mechanism::Esdfm => 1 + click.out_window(&w) as usize,
        Mechanism::Fnw => 1 + click.converts() as usize,
        Mechanism::Defer => 2,
    }
}
