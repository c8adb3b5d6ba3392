//! Shared fixtures for the benchmarks.

use delayfeed::losses::{LogLossTerms, BiDefuseTerms};
use delayfeed::model::{Architecture, BiDefuseArch, BiDefuseNet, Mlp};
use delayfeed::synthgen::generate;
use delayfeed::types::{DAY, MINUTE};
use delayfeed::{ClickEvent, Features, GenConfig, GroundTruthModel, WindowConfig};

pub const CONTEXTS: usize = 8;

pub fn windows() -> WindowConfig {
    WindowConfig::new(30 * MINUTE, DAY).expect("valid windows")
}

/// `n` clicks from the default synthetic fixture.
pub fn clicks(n: usize) -> Vec<ClickEvent> {
    generate(&GenConfig {
        n_clicks: n,
        seed: 1,
        clicks_per_hour: 2e4,
        model: GroundTruthModel::desk(CONTEXTS),
        windows: windows(),
    })
    .expect("valid generator config")
}

/// A batch of one-hot samples cycling through the contexts with mixed terms.
pub fn batch(n: usize) -> Vec<(Features, LogLossTerms)> {
    (0..n)
        .map(|i| {
            let terms = LogLossTerms { pos: (i % 3) as f64 * 0.5, neg: ((i + 1) % 2) as f64 };
            (Features::one_hot((i % CONTEXTS) as u32), terms)
        })
        .collect()
}

pub fn bidefuse_batch(n: usize) -> Vec<(Features, BiDefuseTerms)> {
    batch(n)
        .into_iter()
        .map(|(x, t)| (x, BiDefuseTerms { ip: (t.neg > 0.0).then_some(t), dp: t }))
        .collect()
}

pub fn mlp(hidden: Vec<usize>) -> Mlp {
    Mlp::init(Architecture { input_dim: CONTEXTS, hidden }, 3)
}

pub fn bidefuse() -> BiDefuseNet {
    BiDefuseNet::init(BiDefuseArch { input_dim: CONTEXTS, expert_dim: 8 }, 3)
}

/// Scores with ties and matching labels for the ranking metrics.
pub fn scored(n: usize) -> (Vec<f64>, Vec<bool>) {
    let scores = (0..n).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
    let labels = (0..n).map(|i| (i * 104_729) % 5 == 0).collect();
    (scores, labels)
}
