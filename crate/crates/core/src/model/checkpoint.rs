use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BiDefuseNet, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: architecture descriptor plus flat parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Checkpoint {
    Mlp { version: u32, model: Mlp },
    BiDefuse { version: u32, model: BiDefuseNet },
}

impl Checkpoint {
    pub fn mlp(model: &Mlp) -> Self {
        Checkpoint::Mlp { version: CHECKPOINT_VERSION, model: model.clone() }
    }

    pub fn bidefuse(model: &BiDefuseNet) -> Self {
        Checkpoint::BiDefuse { version: CHECKPOINT_VERSION, model: model.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let (version, n, expected) = match self {
            Checkpoint::Mlp { version, model } => (*version, model.params.len(), model.arch.n_params()),
            Checkpoint::BiDefuse { version, model } => (*version, model.params.len(), model.arch.n_params()),
        };
        if version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {version}")));
        }
        if n != expected {
            return Err(Error::Config(format!("checkpoint has {n} parameters, architecture needs {expected}")));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    serde_json::to_writer(BufWriter::new(File::create(path)?), checkpoint)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    checkpoint.validate()?;
    Ok(checkpoint)
}
