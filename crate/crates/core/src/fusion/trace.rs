//! Golden-trace configuration and trace serialisation.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::FusionTrace;
use super::params::{FusionConfig, FusionParams};
use super::{FeatureMatrix, Modality};
use crate::error::{Error, Result};
use crate::io::TensorFile;

pub const GOLDEN_PARAM_SEED: u64 = 7;
pub const GOLDEN_INPUT_SEED: u64 = 11;

/// Shape convention recorded in every trace file header.
pub const TRACE_CONVENTION: &str = "rows are tokens; X_m: T x d; J = [X_a | X_v]: T x 2d; \
C_m = tanh(X_m W_jm J^T / sqrt(d)): T x T; Z_m = W_m X_m^T + W_cm C_m^T: d_h x T; \
H_m = relu(Z_m); X_jm = (W_hm H_m)^T + X_m: T x d; \
logit = w_cls . [mean_t X_ja | mean_t X_jv] + b_cls; matrices stored row-major";

/// `d = 8`, `d_h = 8`, 4 tokens, one head, one layer.
pub fn golden_config() -> FusionConfig {
    FusionConfig::new(8, 8, 4)
}

pub fn golden_params() -> FusionParams {
    FusionParams::random(golden_config(), GOLDEN_PARAM_SEED).expect("golden config is valid")
}

/// Uniform `[-1, 1)` audio and visual features for the golden configuration.
pub fn golden_inputs() -> (FeatureMatrix, FeatureMatrix) {
    let c = golden_config();
    let mut rng = ChaCha8Rng::seed_from_u64(GOLDEN_INPUT_SEED);
    let mut draw = || Array2::from_shape_simple_fn((c.tokens, c.dim), || rng.gen_range(-1.0..1.0));
    let a = draw();
    let v = draw();
    (
        FeatureMatrix::new(a, Modality::Audio).expect("finite"),
        FeatureMatrix::new(v, Modality::Visual).expect("finite"),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Segment {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceHeader {
    kind: String,
    convention: String,
    segments: Vec<Segment>,
}

impl FusionTrace {
    fn segments(&self) -> Vec<(&'static str, Vec<usize>, Vec<f64>)> {
        let m = |a: &Array2<f64>| (vec![a.nrows(), a.ncols()], a.iter().copied().collect::<Vec<_>>());
        let mut out = Vec::new();
        for (name, a) in [
            ("attended_audio", &self.attended_audio),
            ("attended_visual", &self.attended_visual),
            ("joint", &self.joint),
            ("relevance_audio", &self.relevance_audio),
            ("relevance_visual", &self.relevance_visual),
            ("pre_activation_audio", &self.pre_activation_audio),
            ("pre_activation_visual", &self.pre_activation_visual),
            ("hidden_audio", &self.hidden_audio),
            ("hidden_visual", &self.hidden_visual),
            ("fused_audio", &self.fused_audio),
            ("fused_visual", &self.fused_visual),
        ] {
            let (shape, data) = m(a);
            out.push((name, shape, data));
        }
        out.push(("pooled", vec![self.pooled.len()], self.pooled.to_vec()));
        out.push(("logit", vec![1], vec![self.logit]));
        out.push(("probability", vec![1], vec![self.probability]));
        out
    }

    /// Flat `f64` tensor with a JSON header listing every segment and the shape convention.
    pub fn to_tensor(&self) -> TensorFile {
        let mut data = Vec::new();
        let mut segments = Vec::new();
        for (name, shape, values) in self.segments() {
            segments.push(Segment {
                name: name.to_string(),
                shape,
            });
            data.extend(values);
        }
        let header = TraceHeader {
            kind: "fusion_trace".into(),
            convention: TRACE_CONVENTION.into(),
            segments,
        };
        let n = data.len();
        TensorFile::f64(vec![n], data)
            .expect("flat")
            .with_metadata(serde_json::to_string(&header).expect("serialisable"))
    }

    pub fn from_tensor(t: &TensorFile) -> Result<Self> {
        let meta = t
            .metadata()
            .ok_or_else(|| Error::Validation("trace file has no metadata header".into()))?;
        let header: TraceHeader = serde_json::from_str(meta)?;
        if header.kind != "fusion_trace" {
            return Err(Error::Validation(format!(
                "expected a fusion_trace file, found {:?}",
                header.kind
            )));
        }
        let data = t.data();
        let mut offset = 0;
        let mut get = |name: &str, dims: usize| -> Result<(Vec<usize>, Vec<f64>)> {
            let seg = header
                .segments
                .iter()
                .find(|s| s.name == name)
                .ok_or_else(|| Error::Validation(format!("trace is missing segment {name}")))?;
            if seg.shape.len() != dims {
                return Err(Error::Validation(format!("segment {name} should have {dims} dims")));
            }
            let n: usize = seg.shape.iter().product();
            // segments are stored in header order
            let start = header
                .segments
                .iter()
                .take_while(|s| s.name != name)
                .map(|s| s.shape.iter().product::<usize>())
                .sum::<usize>();
            if start + n > data.len() {
                return Err(Error::Validation(format!(
                    "segment {name} runs past the end of the data"
                )));
            }
            offset = offset.max(start + n);
            Ok((seg.shape.clone(), data[start..start + n].to_vec()))
        };
        let mut mat = |name: &str| -> Result<Array2<f64>> {
            let (s, d) = get(name, 2)?;
            Ok(Array2::from_shape_vec((s[0], s[1]), d).expect("length checked"))
        };
        let attended_audio = mat("attended_audio")?;
        let attended_visual = mat("attended_visual")?;
        let joint = mat("joint")?;
        let relevance_audio = mat("relevance_audio")?;
        let relevance_visual = mat("relevance_visual")?;
        let pre_activation_audio = mat("pre_activation_audio")?;
        let pre_activation_visual = mat("pre_activation_visual")?;
        let hidden_audio = mat("hidden_audio")?;
        let hidden_visual = mat("hidden_visual")?;
        let fused_audio = mat("fused_audio")?;
        let fused_visual = mat("fused_visual")?;
        let pooled = Array1::from(get("pooled", 1)?.1);
        let logit = get("logit", 1)?.1[0];
        let probability = get("probability", 1)?.1[0];
        if offset != data.len() {
            return Err(Error::Validation(format!(
                "trace holds {} values but its segments cover {offset}",
                data.len()
            )));
        }
        Ok(Self {
            attended_audio,
            attended_visual,
            joint,
            relevance_audio,
            relevance_visual,
            pre_activation_audio,
            pre_activation_visual,
            hidden_audio,
            hidden_visual,
            fused_audio,
            fused_visual,
            pooled,
            logit,
            probability,
        })
    }

    /// Largest absolute difference over every segment, or an error if shapes differ.
    pub fn max_abs_diff(&self, other: &FusionTrace) -> Result<f64> {
        let mut worst = 0.0f64;
        for ((name, sa, da), (_, sb, db)) in self.segments().into_iter().zip(other.segments()) {
            if sa != sb {
                return Err(Error::Validation(format!("segment {name} shape {sa:?} vs {sb:?}")));
            }
            for (x, y) in da.iter().zip(&db) {
                worst = worst.max((x - y).abs());
            }
        }
        Ok(worst)
    }
}
