use ndarray::{s, Array1, Array2, Axis};

use super::attention::{attention_backward, attention_forward, AttentionCache};
use super::bilinear::{attend, attend_backward, relevance, relevance_backward};
use super::params::{FusionBranch, FusionParams};
use super::{FeatureMatrix, Modality};
use crate::error::{Error, Result};

/// Every intermediate of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionTrace {
    /// Audio features after the Transformer layers (`X_a`).
    pub attended_audio: Array2<f64>,
    /// Visual features after the Transformer layers (`X_v`).
    pub attended_visual: Array2<f64>,
    /// `J = [X_a | X_v]`
    pub joint: Array2<f64>,
    pub relevance_audio: Array2<f64>,
    pub relevance_visual: Array2<f64>,
    pub pre_activation_audio: Array2<f64>,
    pub pre_activation_visual: Array2<f64>,
    pub hidden_audio: Array2<f64>,
    pub hidden_visual: Array2<f64>,
    /// `X_ja`
    pub fused_audio: Array2<f64>,
    /// `X_jv`
    pub fused_visual: Array2<f64>,
    /// Token means of `[X_ja | X_jv]`.
    pub pooled: Array1<f64>,
    pub logit: f64,
    pub probability: f64,
}

/// Gradients of the logit with respect to every parameter and both inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub params: FusionParams,
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
}

struct LayerCache {
    self_audio: AttentionCache,
    self_visual: AttentionCache,
    cross_audio: AttentionCache,
    cross_visual: AttentionCache,
}

struct Forward {
    layers: Vec<LayerCache>,
    trace: FusionTrace,
}

fn check_inputs(audio: &FeatureMatrix, visual: &FeatureMatrix, params: &FusionParams) -> Result<()> {
    params.validate()?;
    if audio.modality() != Modality::Audio || visual.modality() != Modality::Visual {
        return Err(Error::input(
            "fuse_forward expects (audio, visual) feature matrices in that order",
        ));
    }
    if audio.tokens() != visual.tokens() {
        return Err(Error::input(format!(
            "token counts differ: audio {}, visual {}",
            audio.tokens(),
            visual.tokens()
        )));
    }
    let c = params.config;
    for m in [audio, visual] {
        if m.tokens() != c.tokens || m.dim() != c.dim {
            return Err(Error::input(format!(
                "{:?} features are {}x{}, parameters expect {}x{}",
                m.modality(),
                m.tokens(),
                m.dim(),
                c.tokens,
                c.dim
            )));
        }
    }
    Ok(())
}

fn forward(audio: &FeatureMatrix, visual: &FeatureMatrix, params: &FusionParams) -> Result<Forward> {
    check_inputs(audio, visual, params)?;
    let mut xa = audio.values().clone();
    let mut xv = visual.values().clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let self_audio = attention_forward(&xa, &xa, &xa, &layer.audio.self_attn)?;
        let self_visual = attention_forward(&xv, &xv, &xv, &layer.visual.self_attn)?;
        let sa = &xa + &self_audio.output;
        let sv = &xv + &self_visual.output;
        let cross_audio = attention_forward(&sv, &sa, &sa, &layer.audio.cross_attn)?;
        let cross_visual = attention_forward(&sa, &sv, &sv, &layer.visual.cross_attn)?;
        xa = &sa + &cross_audio.output;
        xv = &sv + &cross_visual.output;
        layers.push(LayerCache {
            self_audio,
            self_visual,
            cross_audio,
            cross_visual,
        });
    }

    let joint = ndarray::concatenate(Axis(1), &[xa.view(), xv.view()]).expect("equal token counts");
    let relevance_audio = relevance(&xa, &joint, &params.audio.w_joint)?;
    let relevance_visual = relevance(&xv, &joint, &params.visual.w_joint)?;
    let fa = attend(&xa, &relevance_audio, &params.audio)?;
    let fv = attend(&xv, &relevance_visual, &params.visual)?;
    let pooled = ndarray::concatenate(
        Axis(0),
        &[
            fa.attended.mean_axis(Axis(0)).expect("tokens > 0").view(),
            fv.attended.mean_axis(Axis(0)).expect("tokens > 0").view(),
        ],
    )
    .expect("1-d");
    let logit = params.classifier_w.dot(&pooled) + params.classifier_b[0];
    let trace = FusionTrace {
        attended_audio: xa,
        attended_visual: xv,
        joint,
        relevance_audio,
        relevance_visual,
        pre_activation_audio: fa.pre_activation,
        pre_activation_visual: fv.pre_activation,
        hidden_audio: fa.hidden,
        hidden_visual: fv.hidden,
        fused_audio: fa.attended,
        fused_visual: fv.attended,
        pooled,
        logit,
        probability: 1.0 / (1.0 + (-logit).exp()),
    };
    if !trace.logit.is_finite() {
        return Err(Error::Numerical("fusion logit is not finite".into()));
    }
    Ok(Forward { layers, trace })
}

/// Runs the Transformer layers, the bilinear fusion of both modalities and
/// the classifier.
pub fn fuse_forward(audio: &FeatureMatrix, visual: &FeatureMatrix, params: &FusionParams) -> Result<FusionTrace> {
    Ok(forward(audio, visual, params)?.trace)
}

struct BranchGrad {
    branch: FusionBranch,
    d_x: Array2<f64>,
    d_joint: Array2<f64>,
}

/// Backward pass through one fusion branch given the upstream gradient of `X_j`.
fn branch_backward(
    b: &FusionBranch,
    x: &Array2<f64>,
    joint: &Array2<f64>,
    c: &Array2<f64>,
    pre: &Array2<f64>,
    d_out: &Array2<f64>,
) -> BranchGrad {
    let mut ab = attend_backward(b, x, c, pre, d_out);
    let rb = relevance_backward(&b.w_joint, x, joint, c, &ab.d_c);
    ab.grads.w_joint = rb.d_w;
    BranchGrad {
        branch: ab.grads,
        d_x: ab.d_x + &rb.d_x,
        d_joint: rb.d_joint,
    }
}

/// Forward trace plus gradients of the logit.
pub fn fuse_backward(
    audio: &FeatureMatrix,
    visual: &FeatureMatrix,
    params: &FusionParams,
) -> Result<(FusionTrace, FusionGradients)> {
    let fwd = forward(audio, visual, params)?;
    let tr = &fwd.trace;
    let c = params.config;
    let (t, d) = (c.tokens, c.dim);
    let mut grads = FusionParams::zeros(c)?;

    grads.classifier_w = tr.pooled.clone();
    grads.classifier_b[0] = 1.0;
    let spread = |w: ndarray::ArrayView1<f64>| {
        let row = w.mapv(|v| v / t as f64);
        row.broadcast((t, d)).expect("row broadcast").to_owned()
    };
    let d_fused_a = spread(params.classifier_w.slice(s![..d]));
    let d_fused_v = spread(params.classifier_w.slice(s![d..]));

    let ga = branch_backward(
        &params.audio,
        &tr.attended_audio,
        &tr.joint,
        &tr.relevance_audio,
        &tr.pre_activation_audio,
        &d_fused_a,
    );
    let gv = branch_backward(
        &params.visual,
        &tr.attended_visual,
        &tr.joint,
        &tr.relevance_visual,
        &tr.pre_activation_visual,
        &d_fused_v,
    );
    let d_joint = &ga.d_joint + &gv.d_joint;
    let mut dxa = ga.d_x + d_joint.slice(s![.., ..d]);
    let mut dxv = gv.d_x + d_joint.slice(s![.., d..]);
    grads.audio = ga.branch;
    grads.visual = gv.branch;

    for (l, cache) in fwd.layers.iter().enumerate().rev() {
        let layer = &params.layers[l];
        // E_a = S_a + cross_a(S_v, S_a, S_a); E_v = S_v + cross_v(S_a, S_v, S_v)
        let mut dsa = dxa.clone();
        let mut dsv = dxv.clone();
        let ca = attention_backward(&cache.cross_audio, &layer.audio.cross_attn, &dxa);
        let cv = attention_backward(&cache.cross_visual, &layer.visual.cross_attn, &dxv);
        dsv += &ca.d_query;
        dsa += &(&ca.d_key + &ca.d_value);
        dsa += &cv.d_query;
        dsv += &(&cv.d_key + &cv.d_value);
        // S_m = X_m + self_m(X_m, X_m, X_m)
        let sa = attention_backward(&cache.self_audio, &layer.audio.self_attn, &dsa);
        let sv = attention_backward(&cache.self_visual, &layer.visual.self_attn, &dsv);
        dxa = dsa + &sa.d_query + &sa.d_key + &sa.d_value;
        dxv = dsv + &sv.d_query + &sv.d_key + &sv.d_value;
        let gl = &mut grads.layers[l];
        gl.audio.cross_attn = ca.grads;
        gl.visual.cross_attn = cv.grads;
        gl.audio.self_attn = sa.grads;
        gl.visual.self_attn = sv.grads;
    }

    let out = FusionGradients {
        params: grads,
        audio: dxa,
        visual: dxv,
    };
    Ok((fwd.trace, out))
}
