use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{load_log, LogSchema};
use crate::losses::{LossKind, ZSource};
use crate::pipelines::Mechanism;
use crate::synthgen::{generate, GenConfig, GroundTruthModel};
use crate::types::{ClickEvent, WindowConfig, DAY, MINUTE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DataSource {
    Synthetic { model: GroundTruthModel },
    Log { path: PathBuf, schema: LogSchema },
}

/// Everything that determines one experiment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub pipeline: Mechanism,
    pub loss: LossKind,
    pub z: ZSource,
    pub windows: WindowConfig,
    pub pretrain_fraction: f64,
    pub hours: usize,
    pub clicks_per_hour: f64,
    pub lr: f64,
    pub l2: f64,
    pub batch: usize,
    pub pretrain_epochs: usize,
    /// Hidden layer widths of the single-head models; empty means logistic.
    pub hidden: Vec<usize>,
    /// Expert width of the two-head model.
    pub expert_dim: usize,
    /// Seed of the synthetic stream.
    pub seed: u64,
    /// Seed of model initialization and pretraining order.
    pub model_seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DataSource::Synthetic { model: GroundTruthModel::desk(8) },
            pipeline: Mechanism::Esdfm,
            loss: LossKind::Defuse,
            z: ZSource::Z1,
            windows: WindowConfig { w_o: 30 * MINUTE, w_a: DAY },
            pretrain_fraction: 0.5,
            hours: 48,
            clicks_per_hour: 2e4,
            lr: 5e-3,
            l2: 1e-4,
            batch: 256,
            pretrain_epochs: 1,
            hidden: Vec::new(),
            expert_dim: 8,
            seed: 0,
            model_seed: 0,
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.windows.validate()?;
        if !(self.pretrain_fraction > 0.0 && self.pretrain_fraction < 1.0) {
            return Err(Error::Config(format!("pretrain fraction {} outside (0, 1)", self.pretrain_fraction)));
        }
        if self.hours < 2 {
            return Err(Error::Config("need at least 2 hours for one train/test pair".into()));
        }
        if !(self.clicks_per_hour > 0.0 && self.clicks_per_hour.is_finite()) {
            return Err(Error::Config("clicks per hour must be positive".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 || self.batch == 0 {
            return Err(Error::Config("lr must be positive, l2 nonnegative and batch nonzero".into()));
        }
        if self.expert_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !self.loss.compatible(self.pipeline) {
            return Err(Error::Config(format!("loss {} is not defined on the {} pipeline", self.loss, self.pipeline)));
        }
        if self.loss.uses_z() && self.z == ZSource::Oracle && !matches!(self.source, DataSource::Synthetic { .. }) {
            return Err(Error::Config("the oracle fake-negative probability needs a synthetic source".into()));
        }
        if let DataSource::Synthetic { model } = &self.source {
            model.validate()?;
        }
        Ok(())
    }

    /// Clicks to generate so that the streaming part spans `hours` hours on average.
    pub fn synthetic_clicks(&self) -> usize {
        (self.clicks_per_hour * self.hours as f64 / (1.0 - self.pretrain_fraction)).round() as usize
    }

    /// Whether two arms differ only in pipeline, loss and fake-negative source.
    pub fn same_protocol(&self, other: &ExperimentConfig) -> bool {
        let strip = |c: &ExperimentConfig| ExperimentConfig {
            pipeline: Mechanism::Oracle,
            loss: LossKind::Ideal,
            z: ZSource::Oracle,
            out: None,
            ..c.clone()
        };
        strip(self) == strip(other)
    }

    /// Short arm label such as `esdfm/defuse+z1`.
    pub fn arm_name(&self) -> String {
        if self.loss.uses_z() {
            format!("{}/{}+{}", self.pipeline, self.loss, self.z)
        } else {
            format!("{}/{}", self.pipeline, self.loss)
        }
    }
}

/// Materialized clicks shared by every arm of one protocol.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clicks: Vec<ClickEvent>,
    pub truth: Option<GroundTruthModel>,
    pub input_dim: usize,
    pub rejected: usize,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    config.validate()?;
    match &config.source {
        DataSource::Synthetic { model } => {
            let gen = GenConfig {
                n_clicks: config.synthetic_clicks(),
                seed: config.seed,
                clicks_per_hour: config.clicks_per_hour,
                model: model.clone(),
                windows: config.windows,
            };
            Ok(Dataset {
                clicks: generate(&gen)?,
                truth: Some(model.clone()),
                input_dim: model.context.dim(),
                rejected: 0,
            })
        }
        DataSource::Log { path, schema } => {
            let log = load_log(path, schema, config.pretrain_fraction, &config.windows)?;
            Ok(Dataset { clicks: log.clicks, truth: None, input_dim: schema.hash_dim, rejected: log.rejected })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.synthetic_clicks(), 1_920_000);
    }

    #[test]
    fn incompatible_loss_is_rejected() {
        let c = ExperimentConfig { pipeline: Mechanism::Defer, loss: LossKind::Defuse, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn oracle_z_needs_ground_truth() {
        let c = ExperimentConfig {
            source: DataSource::Log { path: "x.tsv".into(), schema: LogSchema::default() },
            z: ZSource::Oracle,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn protocol_ignores_arm_fields() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig { loss: LossKind::Vanilla, pipeline: Mechanism::Vanilla, ..a.clone() };
        assert!(a.same_protocol(&b));
        let c = ExperimentConfig { lr: 0.1, ..a.clone() };
        assert!(!a.same_protocol(&c));
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig::default();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
