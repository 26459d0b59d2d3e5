//! Cross-modal fusion forward pass with a hand-derived backward pass.
//!
//! Feature matrices are `tokens × d` (one row per token). Each modality goes
//! through one or more Transformer layers made of a self-attention block and
//! a cross-attention block whose queries come from the other modality, both
//! with residual connections. The attended audio and visual features `X_a`,
//! `X_v` are then fused:
//!
//! ```text
//! J    = [X_a | X_v]                              tokens × 2d
//! C_m  = tanh(X_m W_jm J^T / sqrt(d))             tokens × tokens
//! H_m  = relu(W_m X_m^T + W_cm C_m^T)             d_h × tokens
//! X_jm = (W_hm H_m)^T + X_m                       tokens × d
//! ```
//!
//! and the token-averaged `[X_ja | X_jv]` feeds an affine classifier that
//! produces a single logit.

mod attention;
mod bilinear;
mod gradcheck;
mod model;
mod params;
mod trace;

pub use attention::{scaled_dot_attention, AttentionCache};
pub use bilinear::{attended_fusion, bilinear_relevance, joint_representation, AttendedOutput};
pub use gradcheck::{
    grad_check, grad_check_at, AttendedFusionProbe, AttentionProbe, Evaluation, FuseForwardProbe, GradCheckReport,
    GradProbe, LinearProbe, ProbeResult, RelevanceProbe, SkippedCoordinate, DEFAULT_STEP, RELATIVE_FLOOR,
};
pub use model::{fuse_backward, fuse_forward, FusionGradients, FusionTrace};
pub use params::{AttentionParams, FusionBranch, FusionConfig, FusionParams, ModalityLayer, TransformerLayer};
pub use trace::{golden_config, golden_inputs, golden_params, GOLDEN_INPUT_SEED, GOLDEN_PARAM_SEED, TRACE_CONVENTION};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Audio,
    Visual,
}

/// `tokens × d` real features of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    modality: Modality,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, modality: Modality) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::input("feature dimension must be positive"));
        }
        if values.nrows() == 0 {
            return Err(Error::input("feature matrix needs at least one token"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature matrix has non-finite entries"));
        }
        Ok(Self { values, modality })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn tokens(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

pub(crate) fn check_shape(what: &str, m: &Array2<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.dim() != (rows, cols) {
        return Err(Error::input(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}
