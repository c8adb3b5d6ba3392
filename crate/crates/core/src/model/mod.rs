//! Predictors, their analytic gradients, and the optimizer.

mod adam;
mod bidefuse;
mod checkpoint;
mod mlp;

pub use adam::{Adam, AdamConfig};
pub use bidefuse::{BiDefuseArch, BiDefuseNet, BiDefuseTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use mlp::{Architecture, Mlp, Trace, LEAKY_SLOPE};

use serde::{Deserialize, Serialize};

/// Every prediction the training loop and the evaluator may need for one input.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionBundle {
    pub f_theta: f64,
    pub f_dp: f64,
    pub f_rn: f64,
    pub f_ip: Option<f64>,
    pub f_dp_head: Option<f64>,
    /// `f_theta - f_dp`, the in-window conversion mass.
    pub p_win: f64,
}

impl PredictionBundle {
    pub fn new(f_theta: f64, f_dp: f64, f_rn: f64) -> Self {
        PredictionBundle { f_theta, f_dp, f_rn, f_ip: None, f_dp_head: None, p_win: (f_theta - f_dp).clamp(0.0, 1.0) }
    }
}
