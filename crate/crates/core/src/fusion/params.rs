use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TensorFile;

/// Model dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Feature width `d`.
    pub dim: usize,
    /// Width `d_h` of the fusion hidden maps.
    pub hidden_dim: usize,
    /// Token count shared by both modalities.
    pub tokens: usize,
    pub heads: usize,
    pub layers: usize,
}

impl FusionConfig {
    pub fn new(dim: usize, hidden_dim: usize, tokens: usize) -> Self {
        Self {
            dim,
            hidden_dim,
            tokens,
            heads: 1,
            layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden_dim == 0 || self.tokens == 0 {
            return Err(Error::input("fusion dims must all be positive"));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::input(format!(
                "{} heads do not divide d = {}",
                self.heads, self.dim
            )));
        }
        Ok(())
    }
}

/// Query/key/value/output projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub heads: usize,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bq: Array1<f64>,
    pub bk: Array1<f64>,
    pub bv: Array1<f64>,
    pub bo: Array1<f64>,
}

impl AttentionParams {
    pub fn zeros(dim: usize, heads: usize) -> Self {
        Self {
            heads,
            wq: Array2::zeros((dim, dim)),
            wk: Array2::zeros((dim, dim)),
            wv: Array2::zeros((dim, dim)),
            wo: Array2::zeros((dim, dim)),
            bq: Array1::zeros(dim),
            bk: Array1::zeros(dim),
            bv: Array1::zeros(dim),
            bo: Array1::zeros(dim),
        }
    }

    /// All projections set to the identity, biases zero.
    pub fn identity(dim: usize, heads: usize) -> Self {
        let mut p = Self::zeros(dim, heads);
        for w in [&mut p.wq, &mut p.wk, &mut p.wv, &mut p.wo] {
            *w = Array2::eye(dim);
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.wq.nrows()
    }

    /// Uniform weights scaled by `dim^-1/2`, biases within ±0.1.
    pub fn random(dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = Self::zeros(dim, heads);
        p.for_each_tensor_mut(&mut |name, values| {
            fill(
                values,
                rng,
                if name.starts_with('b') {
                    0.1
                } else {
                    (dim as f64).powf(-0.5)
                },
            )
        });
        p
    }

    pub fn for_each_tensor(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f("wq", self.wq.as_standard_layout().as_slice().expect("standard layout"));
        f("wk", self.wk.as_standard_layout().as_slice().expect("standard layout"));
        f("wv", self.wv.as_standard_layout().as_slice().expect("standard layout"));
        f("wo", self.wo.as_standard_layout().as_slice().expect("standard layout"));
        f("bq", self.bq.as_standard_layout().as_slice().expect("standard layout"));
        f("bk", self.bk.as_standard_layout().as_slice().expect("standard layout"));
        f("bv", self.bv.as_standard_layout().as_slice().expect("standard layout"));
        f("bo", self.bo.as_standard_layout().as_slice().expect("standard layout"));
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("wq", standard_mut(&mut self.wq));
        f("wk", standard_mut(&mut self.wk));
        f("wv", standard_mut(&mut self.wv));
        f("wo", standard_mut(&mut self.wo));
        f("bq", standard_mut(&mut self.bq));
        f("bk", standard_mut(&mut self.bk));
        f("bv", standard_mut(&mut self.bv));
        f("bo", standard_mut(&mut self.bo));
    }
}

/// Self- and cross-attention of one modality in one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityLayer {
    pub self_attn: AttentionParams,
    pub cross_attn: AttentionParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer {
    pub audio: ModalityLayer,
    pub visual: ModalityLayer,
}

/// Bilinear relevance and residual projection weights of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionBranch {
    /// `W_j`, `d × 2d`
    pub w_joint: Array2<f64>,
    /// `W`, `d_h × d`
    pub w_in: Array2<f64>,
    /// `W_c`, `d_h × tokens`
    pub w_rel: Array2<f64>,
    /// `W_h`, `d × d_h`
    pub w_out: Array2<f64>,
}

impl FusionBranch {
    pub fn zeros(dim: usize, hidden: usize, tokens: usize) -> Self {
        Self {
            w_joint: Array2::zeros((dim, 2 * dim)),
            w_in: Array2::zeros((hidden, dim)),
            w_rel: Array2::zeros((hidden, tokens)),
            w_out: Array2::zeros((dim, hidden)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w_joint.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn tokens(&self) -> usize {
        self.w_rel.ncols()
    }

    pub fn random(dim: usize, hidden: usize, tokens: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut b = Self::zeros(dim, hidden, tokens);
        fill(b.w_joint.as_slice_mut().unwrap(), rng, (dim as f64).powf(-0.5));
        fill(b.w_in.as_slice_mut().unwrap(), rng, (dim as f64).powf(-0.5));
        fill(b.w_rel.as_slice_mut().unwrap(), rng, (tokens as f64).powf(-0.5));
        fill(b.w_out.as_slice_mut().unwrap(), rng, (hidden as f64).powf(-0.5));
        b
    }

    pub fn for_each_tensor(&self, f: &mut dyn FnMut(&str, &[f64])) {
        f(
            "w_joint",
            self.w_joint.as_standard_layout().as_slice().expect("standard layout"),
        );
        f(
            "w_in",
            self.w_in.as_standard_layout().as_slice().expect("standard layout"),
        );
        f(
            "w_rel",
            self.w_rel.as_standard_layout().as_slice().expect("standard layout"),
        );
        f(
            "w_out",
            self.w_out.as_standard_layout().as_slice().expect("standard layout"),
        );
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("w_joint", standard_mut(&mut self.w_joint));
        f("w_in", standard_mut(&mut self.w_in));
        f("w_rel", standard_mut(&mut self.w_rel));
        f("w_out", standard_mut(&mut self.w_out));
    }
}

/// Every learnable tensor of the fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub config: FusionConfig,
    pub layers: Vec<TransformerLayer>,
    pub audio: FusionBranch,
    pub visual: FusionBranch,
    /// `2d` classifier weights over the token-averaged `[X_ja | X_jv]`.
    pub classifier_w: Array1<f64>,
    pub classifier_b: Array1<f64>,
}

fn standard_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    if !a.is_standard_layout() {
        *a = a.as_standard_layout().into_owned();
    }
    a.as_slice_mut().expect("standard layout")
}

fn fill(values: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    for v in values {
        *v = rng.gen_range(-1.0..1.0) * scale;
    }
}

impl FusionParams {
    pub fn zeros(config: FusionConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let layer = || ModalityLayer {
            self_attn: AttentionParams::zeros(d, config.heads),
            cross_attn: AttentionParams::zeros(d, config.heads),
        };
        Ok(Self {
            config,
            layers: (0..config.layers)
                .map(|_| TransformerLayer {
                    audio: layer(),
                    visual: layer(),
                })
                .collect(),
            audio: FusionBranch::zeros(d, config.hidden_dim, config.tokens),
            visual: FusionBranch::zeros(d, config.hidden_dim, config.tokens),
            classifier_w: Array1::zeros(2 * d),
            classifier_b: Array1::zeros(1),
        })
    }

    /// Uniform random initialisation scaled by fan-in, deterministic in `seed`.
    pub fn random(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let mut layers = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            let mut modality = || ModalityLayer {
                self_attn: AttentionParams::random(d, config.heads, &mut rng),
                cross_attn: AttentionParams::random(d, config.heads, &mut rng),
            };
            let audio = modality();
            let visual = modality();
            layers.push(TransformerLayer { audio, visual });
        }
        let audio = FusionBranch::random(d, config.hidden_dim, config.tokens, &mut rng);
        let visual = FusionBranch::random(d, config.hidden_dim, config.tokens, &mut rng);
        let mut classifier_w = Array1::zeros(2 * d);
        fill(
            classifier_w.as_slice_mut().unwrap(),
            &mut rng,
            (2.0 * d as f64).powf(-0.5),
        );
        let mut classifier_b = Array1::zeros(1);
        fill(classifier_b.as_slice_mut().unwrap(), &mut rng, 0.1);
        Ok(Self {
            config,
            layers,
            audio,
            visual,
            classifier_w,
            classifier_b,
        })
    }

    /// Checks every tensor shape against `config` and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        let c = self.config;
        c.validate()?;
        let (d, h, t) = (c.dim, c.hidden_dim, c.tokens);
        if self.layers.len() != c.layers {
            return Err(Error::input(format!(
                "{} layers stored, config says {}",
                self.layers.len(),
                c.layers
            )));
        }
        let attn_ok = |a: &AttentionParams| {
            a.heads == c.heads
                && [&a.wq, &a.wk, &a.wv, &a.wo].iter().all(|w| w.dim() == (d, d))
                && [&a.bq, &a.bk, &a.bv, &a.bo].iter().all(|b| b.len() == d)
        };
        for (i, layer) in self.layers.iter().enumerate() {
            for m in [&layer.audio, &layer.visual] {
                if !attn_ok(&m.self_attn) || !attn_ok(&m.cross_attn) {
                    return Err(Error::input(format!(
                        "layer {i}: attention shapes do not match d = {d}"
                    )));
                }
            }
        }
        for (name, b) in [("audio", &self.audio), ("visual", &self.visual)] {
            if b.w_joint.dim() != (d, 2 * d)
                || b.w_in.dim() != (h, d)
                || b.w_rel.dim() != (h, t)
                || b.w_out.dim() != (d, h)
            {
                return Err(Error::input(format!(
                    "{name} fusion branch shapes do not match d={d}, d_h={h}, tokens={t}"
                )));
            }
        }
        if self.classifier_w.len() != 2 * d || self.classifier_b.len() != 1 {
            return Err(Error::input("classifier shapes do not match 2d -> 1"));
        }
        let mut finite = true;
        self.for_each_tensor(&mut |_, v| finite &= v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::input("fusion parameters contain non-finite values"));
        }
        Ok(())
    }

    /// Visits every tensor in a fixed order with a hierarchical name.
    pub fn for_each_tensor(&self, f: &mut dyn FnMut(&str, &[f64])) {
        for (i, layer) in self.layers.iter().enumerate() {
            for (m, ml) in [("audio", &layer.audio), ("visual", &layer.visual)] {
                ml.self_attn
                    .for_each_tensor(&mut |n, v| f(&format!("layer{i}.{m}.self.{n}"), v));
                ml.cross_attn
                    .for_each_tensor(&mut |n, v| f(&format!("layer{i}.{m}.cross.{n}"), v));
            }
        }
        self.audio
            .for_each_tensor(&mut |n, v| f(&format!("fusion.audio.{n}"), v));
        self.visual
            .for_each_tensor(&mut |n, v| f(&format!("fusion.visual.{n}"), v));
        f(
            "classifier.w",
            self.classifier_w
                .as_standard_layout()
                .as_slice()
                .expect("standard layout"),
        );
        f(
            "classifier.b",
            self.classifier_b
                .as_standard_layout()
                .as_slice()
                .expect("standard layout"),
        );
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (m, ml) in [("audio", &mut layer.audio), ("visual", &mut layer.visual)] {
                ml.self_attn
                    .for_each_tensor_mut(&mut |n, v| f(&format!("layer{i}.{m}.self.{n}"), v));
                ml.cross_attn
                    .for_each_tensor_mut(&mut |n, v| f(&format!("layer{i}.{m}.cross.{n}"), v));
            }
        }
        self.audio
            .for_each_tensor_mut(&mut |n, v| f(&format!("fusion.audio.{n}"), v));
        self.visual
            .for_each_tensor_mut(&mut |n, v| f(&format!("fusion.visual.{n}"), v));
        f("classifier.w", standard_mut(&mut self.classifier_w));
        f("classifier.b", standard_mut(&mut self.classifier_b));
    }

    pub fn num_values(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |_, v| n += v.len());
        n
    }

    /// Flat `f64` tensor; the metadata records config and tensor order.
    pub fn to_tensor(&self) -> TensorFile {
        let mut data = Vec::with_capacity(self.num_values());
        let mut names = Vec::new();
        self.for_each_tensor(&mut |name, v| {
            names.push(serde_json::json!({ "name": name, "len": v.len() }));
            data.extend_from_slice(v);
        });
        let meta = serde_json::json!({ "kind": "fusion_params", "config": self.config, "tensors": names });
        let n = data.len();
        TensorFile::f64(vec![n], data)
            .expect("flat")
            .with_metadata(meta.to_string())
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let meta: serde_json::Value = t
            .metadata()
            .ok_or_else(|| Error::Validation("parameter file has no metadata".into()))
            .and_then(|m| serde_json::from_str(m).map_err(Error::from))?;
        let config: FusionConfig = serde_json::from_value(meta["config"].clone())?;
        let mut params = Self::zeros(config)?;
        if params.num_values() != t.data().len() {
            return Err(Error::Validation(format!(
                "parameter file holds {} values, config needs {}",
                t.data().len(),
                params.num_values()
            )));
        }
        let mut offset = 0;
        let data = t.data();
        params.for_each_tensor_mut(&mut |_, v| {
            v.copy_from_slice(&data[offset..offset + v.len()]);
            offset += v.len();
        });
        params.validate()?;
        Ok(params)
    }
}
