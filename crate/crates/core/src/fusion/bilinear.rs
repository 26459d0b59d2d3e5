use ndarray::{concatenate, Array2, Axis};

use super::params::FusionBranch;
use super::{check_shape, FeatureMatrix};
use crate::error::{Error, Result};

/// Output of [`attended_fusion`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttendedOutput {
    /// `W X^T + W_c C^T`, `d_h × tokens`
    pub pre_activation: Array2<f64>,
    /// ReLU of the pre-activation.
    pub hidden: Array2<f64>,
    /// `(W_h H)^T + X`, `tokens × d`
    pub attended: Array2<f64>,
}

/// `[X_a | X_v]`, concatenated along the feature axis.
pub fn joint_representation(audio: &FeatureMatrix, visual: &FeatureMatrix) -> Result<Array2<f64>> {
    if audio.tokens() != visual.tokens() {
        return Err(Error::input(format!(
            "token counts differ: audio {}, visual {}",
            audio.tokens(),
            visual.tokens()
        )));
    }
    if audio.dim() != visual.dim() {
        return Err(Error::input(format!(
            "feature dims differ: audio {}, visual {}",
            audio.dim(),
            visual.dim()
        )));
    }
    Ok(concatenate(Axis(1), &[audio.values().view(), visual.values().view()]).expect("shapes checked"))
}

pub(crate) fn relevance(x: &Array2<f64>, joint: &Array2<f64>, w_joint: &Array2<f64>) -> Result<Array2<f64>> {
    let d = x.ncols();
    check_shape("W_j", w_joint, d, 2 * d)?;
    if joint.ncols() != 2 * d {
        return Err(Error::input(format!(
            "joint matrix has {} columns, expected {}",
            joint.ncols(),
            2 * d
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    Ok((x.dot(w_joint).dot(&joint.t()) * scale).mapv(f64::tanh))
}

/// `tanh(X W_j J^T / sqrt(d))`, one row per token of `X`, one column per token of `J`.
pub fn bilinear_relevance(x: &FeatureMatrix, joint: &Array2<f64>, w_joint: &Array2<f64>) -> Result<Array2<f64>> {
    relevance(x.values(), joint, w_joint)
}

pub(crate) fn attend(x: &Array2<f64>, c: &Array2<f64>, b: &FusionBranch) -> Result<AttendedOutput> {
    let (t, d) = x.dim();
    let h = b.hidden_dim();
    check_shape("W", &b.w_in, h, d)?;
    check_shape("W_h", &b.w_out, d, h)?;
    if c.nrows() != t {
        return Err(Error::input(format!(
            "relevance map has {} rows, expected {t}",
            c.nrows()
        )));
    }
    check_shape("W_c", &b.w_rel, h, c.ncols())?;
    let pre_activation = b.w_in.dot(&x.t()) + b.w_rel.dot(&c.t());
    let hidden = pre_activation.mapv(|v| v.max(0.0));
    let attended = b.w_out.dot(&hidden).reversed_axes() + x;
    Ok(AttendedOutput {
        pre_activation,
        hidden,
        attended,
    })
}

/// Hidden map and residual output of one modality's fusion branch.
pub fn attended_fusion(x: &FeatureMatrix, c: &Array2<f64>, branch: &FusionBranch) -> Result<AttendedOutput> {
    attend(x.values(), c, branch)
}

pub(crate) struct AttendBackward {
    /// Gradients of `W`, `W_c`, `W_h`; `w_joint` is left at zero.
    pub grads: FusionBranch,
    pub d_x: Array2<f64>,
    pub d_c: Array2<f64>,
}

pub(crate) fn attend_backward(
    b: &FusionBranch,
    x: &Array2<f64>,
    c: &Array2<f64>,
    pre: &Array2<f64>,
    d_out: &Array2<f64>,
) -> AttendBackward {
    let mut g = FusionBranch::zeros(x.ncols(), b.hidden_dim(), b.tokens());
    let hidden = pre.mapv(|z| z.max(0.0));
    // X_j = (W_h H)^T + X
    let d_out_t = d_out.t();
    g.w_out = d_out_t.dot(&hidden.t());
    let d_hidden = b.w_out.t().dot(&d_out_t);
    // H = relu(Z), Z = W X^T + W_c C^T
    let d_pre = &d_hidden * &pre.mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
    g.w_in = d_pre.dot(x);
    g.w_rel = d_pre.dot(c);
    AttendBackward {
        grads: g,
        d_x: d_out + &d_pre.t().dot(&b.w_in),
        d_c: d_pre.t().dot(&b.w_rel),
    }
}

pub(crate) struct RelevanceBackward {
    pub d_w: Array2<f64>,
    pub d_x: Array2<f64>,
    pub d_joint: Array2<f64>,
}

/// Gradients through `C = tanh(X W_j J^T / sqrt(d))` given `dC`.
pub(crate) fn relevance_backward(
    w_joint: &Array2<f64>,
    x: &Array2<f64>,
    joint: &Array2<f64>,
    c: &Array2<f64>,
    d_c: &Array2<f64>,
) -> RelevanceBackward {
    let scale = 1.0 / (x.ncols() as f64).sqrt();
    let d_g = d_c * &c.mapv(|v| 1.0 - v * v);
    RelevanceBackward {
        d_w: x.t().dot(&d_g).dot(joint) * scale,
        d_x: d_g.dot(joint).dot(&w_joint.t()) * scale,
        d_joint: d_g.t().dot(x).dot(w_joint) * scale,
    }
}
