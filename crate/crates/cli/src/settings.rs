use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use delayfeed::harness::{DataSource, ExperimentConfig};
use delayfeed::ingest::LogSchema;
use delayfeed::{GroundTruthModel, LossKind, Mechanism, WindowConfig, ZSource};

/// Experiment settings shared by the flags and the `--config` file. Every
/// flag has a key of the same name in the file; flags win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Duplication pipeline (oracle, vanilla, vanilla-win, fnw, esdfm, defer)
    #[arg(long)]
    pub pipeline: Option<Mechanism>,
    /// Loss (ideal, vanilla, fnw, fnc, esdfm, defer, defuse, bi-defuse, fnw-defuse, defer-defuse)
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Fake-negative estimate (z1, z2, oracle)
    #[arg(long)]
    pub z: Option<ZSource>,
    /// Observation window in minutes
    #[arg(long)]
    pub wo_minutes: Option<f64>,
    /// Attribution window in hours
    #[arg(long)]
    pub wa_hours: Option<f64>,
    /// Streaming hours (one train/test pair per consecutive pair of hours)
    #[arg(long)]
    pub hours: Option<usize>,
    #[arg(long)]
    pub clicks_per_hour: Option<f64>,
    /// Fraction of clicks used for pretraining
    #[arg(long)]
    pub pretrain_fraction: Option<f64>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    /// Seed of the synthetic stream
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of model initialization and pretraining order (defaults to --seed)
    #[arg(long)]
    pub model_seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Hidden layer widths of the single-head models, comma separated
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Expert width of the two-head model
    #[arg(long)]
    pub expert_dim: Option<usize>,
    /// Number of one-hot contexts of the synthetic source
    #[arg(long)]
    pub contexts: Option<usize>,
    /// Train on a click log instead of a synthetic stream
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Numeric columns of the click log
    #[arg(long)]
    pub n_numeric: Option<usize>,
    /// Categorical columns of the click log
    #[arg(long)]
    pub n_categorical: Option<usize>,
    /// Feature hashing dimension (power of two)
    #[arg(long)]
    pub hash_dim: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! prefer {
    ($a:ident, $b:ident, $($field:ident),+) => {
        Settings { $($field: $a.$field.or($b.$field)),+ }
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Flags from the command line layered over an optional config file.
    pub fn resolve(flags: Settings, config: Option<&Path>) -> Result<Settings> {
        let file = match config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        Ok(flags.over(file))
    }

    fn over(self, base: Settings) -> Settings {
        prefer!(
            self, base, pipeline, loss, z, wo_minutes, wa_hours, hours, clicks_per_hour, pretrain_fraction,
            pretrain_epochs, seed, model_seed, lr, l2, batch, hidden, expert_dim, contexts, log, n_numeric,
            n_categorical, hash_dim, out
        )
    }

    pub fn windows(&self) -> Result<WindowConfig> {
        let default = ExperimentConfig::default().windows;
        let w_o = self.wo_minutes.map_or(Ok(default.w_o), |m| seconds(m * 60.0, "--wo-minutes"))?;
        let w_a = self.wa_hours.map_or(Ok(default.w_a), |h| seconds(h * 3600.0, "--wa-hours"))?;
        Ok(WindowConfig::new(w_o, w_a)?)
    }

    pub fn log_schema(&self) -> LogSchema {
        let d = LogSchema::default();
        LogSchema {
            n_numeric: self.n_numeric.unwrap_or(d.n_numeric),
            n_categorical: self.n_categorical.unwrap_or(d.n_categorical),
            hash_dim: self.hash_dim.unwrap_or(d.hash_dim),
            delimiter: d.delimiter,
        }
    }

    pub fn synthetic_model(&self) -> GroundTruthModel {
        GroundTruthModel::desk(self.contexts.unwrap_or(8))
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let d = ExperimentConfig::default();
        let source = match &self.log {
            Some(path) => DataSource::Log { path: path.clone(), schema: self.log_schema() },
            None => DataSource::Synthetic { model: self.synthetic_model() },
        };
        let seed = self.seed.unwrap_or(d.seed);
        let config = ExperimentConfig {
            source,
            pipeline: self.pipeline.unwrap_or(d.pipeline),
            loss: self.loss.unwrap_or(d.loss),
            z: self.z.unwrap_or(d.z),
            windows: self.windows()?,
            pretrain_fraction: self.pretrain_fraction.unwrap_or(d.pretrain_fraction),
            hours: self.hours.unwrap_or(d.hours),
            clicks_per_hour: self.clicks_per_hour.unwrap_or(d.clicks_per_hour),
            lr: self.lr.unwrap_or(d.lr),
            l2: self.l2.unwrap_or(d.l2),
            batch: self.batch.unwrap_or(d.batch),
            pretrain_epochs: self.pretrain_epochs.unwrap_or(d.pretrain_epochs),
            hidden: self.hidden.clone().unwrap_or(d.hidden),
            expert_dim: self.expert_dim.unwrap_or(d.expert_dim),
            seed,
            model_seed: self.model_seed.unwrap_or(seed),
            out: self.out.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

fn seconds(value: f64, flag: &str) -> Result<u64> {
    if !(value.is_finite() && value >= 0.0) {
        bail!("{flag} must be a nonnegative number");
    }
    Ok(value.round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_file() {
        let file: Settings = toml::from_str("loss = \"vanilla\"\npipeline = \"vanilla\"\nhours = 5\n").unwrap();
        let flags = Settings { hours: Some(7), ..Default::default() };
        let merged = flags.over(file);
        assert_eq!(merged.hours, Some(7));
        assert_eq!(merged.loss, Some(LossKind::Vanilla));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("learning-rate = 0.1\n").is_err());
    }

    #[test]
    fn window_flags_convert_to_seconds() {
        let s = Settings { wo_minutes: Some(15.0), wa_hours: Some(2.0), ..Default::default() };
        let w = s.windows().unwrap();
        assert_eq!((w.w_o, w.w_a), (900, 7200));
    }

    #[test]
    fn model_seed_follows_seed() {
        let c = Settings { seed: Some(9), ..Default::default() }.experiment().unwrap();
        assert_eq!((c.seed, c.model_seed), (9, 9));
    }

    #[test]
    fn incompatible_arm_is_an_error() {
        let s = Settings { pipeline: Some(Mechanism::Fnw), loss: Some(LossKind::Defuse), ..Default::default() };
        assert!(s.experiment().is_err());
    }
}
