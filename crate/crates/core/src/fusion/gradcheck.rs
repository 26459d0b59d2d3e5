//! Central finite-difference checks of the hand-derived gradients.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::attention::{attention_backward, attention_forward};
use super::bilinear::{attend, attend_backward, relevance, relevance_backward};
use super::model::{fuse_backward, fuse_forward};
use super::params::{AttentionParams, FusionBranch, FusionParams};
use super::{FeatureMatrix, Modality};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Denominator floor of the relative error `|a - n| / max(|a|, |n|, floor)`.
pub const RELATIVE_FLOOR: f64 = 1e-6;
const KINK_THRESHOLD: f64 = 1e-6;

/// Scalar loss at a point plus every ReLU pre-activation it passed through.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub pre_activations: Vec<f64>,
}

/// A differentiable scalar function of a flat coordinate vector.
pub trait GradProbe {
    fn name(&self) -> &str;
    /// Base point at which gradients are checked.
    fn point(&self) -> Vec<f64>;
    fn coordinate_name(&self, index: usize) -> String;
    fn evaluate(&self, point: &[f64]) -> Result<Evaluation>;
    /// Hand-derived gradient of the loss at `point`.
    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub index: usize,
    pub coordinate: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedCoordinate {
    pub index: usize,
    pub coordinate: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub probe: String,
    pub step: f64,
    pub checked: Vec<ProbeResult>,
    pub skipped: Vec<SkippedCoordinate>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ProbeResult> {
        self.checked.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Checks `probes` randomly chosen coordinates (seeded), skipping any whose
/// perturbation crosses a ReLU kink, until enough have been checked or the
/// coordinates run out.
pub fn grad_check(probe: &dyn GradProbe, probes: usize, seed: u64) -> Result<GradCheckReport> {
    let n = probe.point().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    run(probe, &order, probes, DEFAULT_STEP)
}

/// Checks exactly the listed coordinates (kinks are still skipped).
pub fn grad_check_at(probe: &dyn GradProbe, coordinates: &[usize], step: f64) -> Result<GradCheckReport> {
    run(probe, coordinates, coordinates.len(), step)
}

fn run(probe: &dyn GradProbe, order: &[usize], wanted: usize, step: f64) -> Result<GradCheckReport> {
    let base = probe.point();
    let analytic = probe.gradient(&base)?;
    if analytic.len() != base.len() {
        return Err(Error::Numerical(format!(
            "{}: gradient has {} entries for {} coordinates",
            probe.name(),
            analytic.len(),
            base.len()
        )));
    }
    if let Some(i) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "{}: non-finite analytic gradient at coordinate {i} ({})",
            probe.name(),
            probe.coordinate_name(i)
        )));
    }
    let base_eval = probe.evaluate(&base)?;
    let mut report = GradCheckReport {
        probe: probe.name().to_string(),
        step,
        checked: Vec::new(),
        skipped: Vec::new(),
        max_rel_error: 0.0,
    };
    let mut point = base.clone();
    for &i in order {
        if report.checked.len() >= wanted {
            break;
        }
        if i >= base.len() {
            return Err(Error::input(format!(
                "coordinate {i} out of range ({} coordinates)",
                base.len()
            )));
        }
        point[i] = base[i] + step;
        let plus = probe.evaluate(&point)?;
        point[i] = base[i] - step;
        let minus = probe.evaluate(&point)?;
        point[i] = base[i];

        if let Some(reason) = kink(&base_eval, &plus, &minus) {
            report.skipped.push(SkippedCoordinate {
                index: i,
                coordinate: probe.coordinate_name(i),
                reason,
            });
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(Error::Numerical(format!(
                "{}: non-finite numeric gradient at coordinate {i} ({})",
                probe.name(),
                probe.coordinate_name(i)
            )));
        }
        let a = analytic[i];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel_error);
        report.checked.push(ProbeResult {
            index: i,
            coordinate: probe.coordinate_name(i),
            analytic: a,
            numeric,
            rel_error,
        });
    }
    Ok(report)
}

fn kink(base: &Evaluation, plus: &Evaluation, minus: &Evaluation) -> Option<String> {
    for (k, ((&z, &p), &m)) in base
        .pre_activations
        .iter()
        .zip(&plus.pre_activations)
        .zip(&minus.pre_activations)
        .enumerate()
    {
        if (p > 0.0) != (m > 0.0) {
            return Some(format!("pre-activation {k} changes sign under the perturbation"));
        }
        if z.abs() < KINK_THRESHOLD && p != m {
            return Some(format!("pre-activation {k} = {z:e} sits on the ReLU kink"));
        }
    }
    None
}

/// Names the flat coordinates of a sequence of tensors.
#[derive(Debug, Clone, Default)]
struct Layout {
    segments: Vec<(String, usize)>,
}

impl Layout {
    fn push(&mut self, name: impl Into<String>, len: usize) {
        self.segments.push((name.into(), len));
    }

    fn name(&self, mut index: usize) -> String {
        for (name, len) in &self.segments {
            if index < *len {
                return format!("{name}[{index}]");
            }
            index -= len;
        }
        format!("#{index}")
    }
}

fn flat(m: &Array2<f64>) -> impl Iterator<Item = f64> + '_ {
    m.iter().copied()
}

fn take(src: &[f64], offset: &mut usize, shape: (usize, usize)) -> Array2<f64> {
    let n = shape.0 * shape.1;
    let m = Array2::from_shape_vec(shape, src[*offset..*offset + n].to_vec()).expect("length matches");
    *offset += n;
    m
}

fn params_flat(p: &FusionParams) -> Vec<f64> {
    let mut v = Vec::with_capacity(p.num_values());
    p.for_each_tensor(&mut |_, t| v.extend_from_slice(t));
    v
}

fn params_load(p: &mut FusionParams, src: &[f64], offset: &mut usize) {
    p.for_each_tensor_mut(&mut |_, t| {
        t.copy_from_slice(&src[*offset..*offset + t.len()]);
        *offset += t.len();
    });
}

fn attn_flat(p: &AttentionParams) -> Vec<f64> {
    let mut v = Vec::new();
    p.for_each_tensor(&mut |_, t| v.extend_from_slice(t));
    v
}

fn attn_load(p: &mut AttentionParams, src: &[f64], offset: &mut usize) {
    p.for_each_tensor_mut(&mut |_, t| {
        t.copy_from_slice(&src[*offset..*offset + t.len()]);
        *offset += t.len();
    });
}

/// `sum(W x + b)`: no nonlinearity, so finite differences are exact up to rounding.
pub struct LinearProbe {
    pub w: Array2<f64>,
    pub x: Array1<f64>,
    pub b: Array1<f64>,
}

impl LinearProbe {
    fn unpack(&self, p: &[f64]) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let mut o = 0;
        let w = take(p, &mut o, self.w.dim());
        let x = Array1::from(p[o..o + self.x.len()].to_vec());
        o += self.x.len();
        let b = Array1::from(p[o..o + self.b.len()].to_vec());
        (w, x, b)
    }
}

impl GradProbe for LinearProbe {
    fn name(&self) -> &str {
        "linear"
    }

    fn point(&self) -> Vec<f64> {
        flat(&self.w)
            .chain(self.x.iter().copied())
            .chain(self.b.iter().copied())
            .collect()
    }

    fn coordinate_name(&self, index: usize) -> String {
        let mut l = Layout::default();
        l.push("w", self.w.len());
        l.push("x", self.x.len());
        l.push("b", self.b.len());
        l.name(index)
    }

    fn evaluate(&self, point: &[f64]) -> Result<Evaluation> {
        let (w, x, b) = self.unpack(point);
        Ok(Evaluation {
            loss: (w.dot(&x) + b).sum(),
            pre_activations: Vec::new(),
        })
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (w, x, b) = self.unpack(point);
        let dw = Array2::from_shape_fn(w.dim(), |(_, j)| x[j]);
        let dx = w.sum_axis(ndarray::Axis(0));
        Ok(flat(&dw)
            .chain(dx.iter().copied())
            .chain(b.iter().map(|_| 1.0))
            .collect())
    }
}

/// `sum(attention(query, key, value))` over all projections and all three inputs.
pub struct AttentionProbe {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub params: AttentionParams,
}

impl AttentionProbe {
    fn unpack(&self, p: &[f64]) -> (AttentionParams, Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut params = self.params.clone();
        let mut o = 0;
        attn_load(&mut params, p, &mut o);
        let q = take(p, &mut o, self.query.dim());
        let k = take(p, &mut o, self.key.dim());
        let v = take(p, &mut o, self.value.dim());
        (params, q, k, v)
    }
}

impl GradProbe for AttentionProbe {
    fn name(&self) -> &str {
        "scaled_dot_attention"
    }

    fn point(&self) -> Vec<f64> {
        let mut v = attn_flat(&self.params);
        v.extend(flat(&self.query).chain(flat(&self.key)).chain(flat(&self.value)));
        v
    }

    fn coordinate_name(&self, index: usize) -> String {
        let mut l = Layout::default();
        self.params.for_each_tensor(&mut |n, t| l.push(n, t.len()));
        l.push("query", self.query.len());
        l.push("key", self.key.len());
        l.push("value", self.value.len());
        l.name(index)
    }

    fn evaluate(&self, point: &[f64]) -> Result<Evaluation> {
        let (p, q, k, v) = self.unpack(point);
        let c = attention_forward(&q, &k, &v, &p)?;
        Ok(Evaluation {
            loss: c.output.sum(),
            pre_activations: Vec::new(),
        })
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (p, q, k, v) = self.unpack(point);
        let c = attention_forward(&q, &k, &v, &p)?;
        let b = attention_backward(&c, &p, &Array2::ones(c.output.raw_dim()));
        let mut g = attn_flat(&b.grads);
        g.extend(flat(&b.d_query).chain(flat(&b.d_key)).chain(flat(&b.d_value)));
        Ok(g)
    }
}

/// `sum(tanh(X W_j J^T / sqrt(d)))` over `W_j`, `X` and `J`.
pub struct RelevanceProbe {
    pub x: Array2<f64>,
    pub joint: Array2<f64>,
    pub w_joint: Array2<f64>,
}

impl RelevanceProbe {
    fn unpack(&self, p: &[f64]) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut o = 0;
        let w = take(p, &mut o, self.w_joint.dim());
        let x = take(p, &mut o, self.x.dim());
        let j = take(p, &mut o, self.joint.dim());
        (w, x, j)
    }
}

impl GradProbe for RelevanceProbe {
    fn name(&self) -> &str {
        "bilinear_relevance"
    }

    fn point(&self) -> Vec<f64> {
        flat(&self.w_joint)
            .chain(flat(&self.x))
            .chain(flat(&self.joint))
            .collect()
    }

    fn coordinate_name(&self, index: usize) -> String {
        let mut l = Layout::default();
        l.push("w_joint", self.w_joint.len());
        l.push("x", self.x.len());
        l.push("joint", self.joint.len());
        l.name(index)
    }

    fn evaluate(&self, point: &[f64]) -> Result<Evaluation> {
        let (w, x, j) = self.unpack(point);
        Ok(Evaluation {
            loss: relevance(&x, &j, &w)?.sum(),
            pre_activations: Vec::new(),
        })
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (w, x, j) = self.unpack(point);
        let c = relevance(&x, &j, &w)?;
        let b = relevance_backward(&w, &x, &j, &c, &Array2::ones(c.raw_dim()));
        Ok(flat(&b.d_w).chain(flat(&b.d_x)).chain(flat(&b.d_joint)).collect())
    }
}

/// `sum(X_j)` of one fusion branch over `W`, `W_c`, `W_h`, `X` and `C`.
pub struct AttendedFusionProbe {
    pub x: Array2<f64>,
    pub relevance: Array2<f64>,
    pub branch: FusionBranch,
}

impl AttendedFusionProbe {
    fn unpack(&self, p: &[f64]) -> (FusionBranch, Array2<f64>, Array2<f64>) {
        let mut b = self.branch.clone();
        let mut o = 0;
        b.w_in = take(p, &mut o, b.w_in.dim());
        b.w_rel = take(p, &mut o, b.w_rel.dim());
        b.w_out = take(p, &mut o, b.w_out.dim());
        let x = take(p, &mut o, self.x.dim());
        let c = take(p, &mut o, self.relevance.dim());
        (b, x, c)
    }
}

impl GradProbe for AttendedFusionProbe {
    fn name(&self) -> &str {
        "attended_fusion"
    }

    fn point(&self) -> Vec<f64> {
        let b = &self.branch;
        flat(&b.w_in)
            .chain(flat(&b.w_rel))
            .chain(flat(&b.w_out))
            .chain(flat(&self.x))
            .chain(flat(&self.relevance))
            .collect()
    }

    fn coordinate_name(&self, index: usize) -> String {
        let mut l = Layout::default();
        l.push("w_in", self.branch.w_in.len());
        l.push("w_rel", self.branch.w_rel.len());
        l.push("w_out", self.branch.w_out.len());
        l.push("x", self.x.len());
        l.push("relevance", self.relevance.len());
        l.name(index)
    }

    fn evaluate(&self, point: &[f64]) -> Result<Evaluation> {
        let (b, x, c) = self.unpack(point);
        let out = attend(&x, &c, &b)?;
        Ok(Evaluation {
            loss: out.attended.sum(),
            pre_activations: out.pre_activation.iter().copied().collect(),
        })
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (b, x, c) = self.unpack(point);
        let out = attend(&x, &c, &b)?;
        let g = attend_backward(&b, &x, &c, &out.pre_activation, &Array2::ones(out.attended.raw_dim()));
        Ok(flat(&g.grads.w_in)
            .chain(flat(&g.grads.w_rel))
            .chain(flat(&g.grads.w_out))
            .chain(flat(&g.d_x))
            .chain(flat(&g.d_c))
            .collect())
    }
}

/// The classifier logit of the full model over every parameter and both inputs.
pub struct FuseForwardProbe {
    pub audio: Array2<f64>,
    pub visual: Array2<f64>,
    pub params: FusionParams,
}

impl FuseForwardProbe {
    fn unpack(&self, p: &[f64]) -> Result<(FusionParams, FeatureMatrix, FeatureMatrix)> {
        let mut params = self.params.clone();
        let mut o = 0;
        params_load(&mut params, p, &mut o);
        let a = take(p, &mut o, self.audio.dim());
        let v = take(p, &mut o, self.visual.dim());
        Ok((
            params,
            FeatureMatrix::new(a, Modality::Audio)?,
            FeatureMatrix::new(v, Modality::Visual)?,
        ))
    }
}

impl GradProbe for FuseForwardProbe {
    fn name(&self) -> &str {
        "fuse_forward"
    }

    fn point(&self) -> Vec<f64> {
        let mut v = params_flat(&self.params);
        v.extend(flat(&self.audio).chain(flat(&self.visual)));
        v
    }

    fn coordinate_name(&self, index: usize) -> String {
        let mut l = Layout::default();
        self.params.for_each_tensor(&mut |n, t| l.push(n, t.len()));
        l.push("audio", self.audio.len());
        l.push("visual", self.visual.len());
        l.name(index)
    }

    fn evaluate(&self, point: &[f64]) -> Result<Evaluation> {
        let (p, a, v) = self.unpack(point)?;
        let tr = fuse_forward(&a, &v, &p)?;
        Ok(Evaluation {
            loss: tr.logit,
            pre_activations: tr
                .pre_activation_audio
                .iter()
                .chain(tr.pre_activation_visual.iter())
                .copied()
                .collect(),
        })
    }

    fn gradient(&self, point: &[f64]) -> Result<Vec<f64>> {
        let (p, a, v) = self.unpack(point)?;
        let (_, g) = fuse_backward(&a, &v, &p)?;
        let mut out = params_flat(&g.params);
        out.extend(flat(&g.audio).chain(flat(&g.visual)));
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn linear_probe_is_exact() {
        let probe = LinearProbe {
            w: array![[1.0, -2.0, 0.5], [0.25, 3.0, -1.0]],
            x: array![0.3, -0.7, 1.1],
            b: array![0.1, -0.2],
        };
        let r = grad_check(&probe, 11, 0).unwrap();
        assert_eq!(r.checked.len(), 11);
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn coordinate_names_follow_layout() {
        let probe = LinearProbe {
            w: Array2::zeros((2, 2)),
            x: Array1::zeros(2),
            b: Array1::zeros(2),
        };
        assert_eq!(probe.coordinate_name(0), "w[0]");
        assert_eq!(probe.coordinate_name(5), "x[1]");
        assert_eq!(probe.coordinate_name(6), "b[0]");
    }

    #[test]
    fn kink_coordinate_is_skipped() {
        // Z[0,0] = w_in[0,0] * x[0,0] = 1e-8: perturbing either factor moves it off the kink.
        let mut branch = FusionBranch::zeros(1, 1, 1);
        branch.w_in[[0, 0]] = 1.0;
        branch.w_out[[0, 0]] = 2.0;
        let probe = AttendedFusionProbe {
            x: array![[1e-8]],
            relevance: array![[0.0]],
            branch,
        };
        let r = grad_check_at(&probe, &[0, 3], DEFAULT_STEP).unwrap();
        assert!(r.checked.is_empty());
        assert_eq!(r.skipped.len(), 2);
        assert_eq!(r.skipped[0].coordinate, "w_in[0]");
    }

    struct Broken;

    impl GradProbe for Broken {
        fn name(&self) -> &str {
            "broken"
        }
        fn point(&self) -> Vec<f64> {
            vec![0.0, 1.0]
        }
        fn coordinate_name(&self, index: usize) -> String {
            format!("c{index}")
        }
        fn evaluate(&self, p: &[f64]) -> Result<Evaluation> {
            Ok(Evaluation {
                loss: p.iter().sum(),
                pre_activations: Vec::new(),
            })
        }
        fn gradient(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![1.0, f64::NAN])
        }
    }

    #[test]
    fn non_finite_gradient_names_coordinate() {
        match grad_check(&Broken, 2, 0) {
            Err(Error::Numerical(msg)) => assert!(msg.contains("coordinate 1 (c1)"), "{msg}"),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }
}
