//! Ideal ratio masks from clean/noise references, and mask files produced by
//! an external estimator.

use std::path::Path;

use ndarray::{Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::TensorFile;
use crate::stft::Spectrogram;

/// Relative floor guarding the silent-bin `0/0`.
pub const IRM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Speech,
    Noise,
}

impl MaskKind {
    pub fn name(self) -> &'static str {
        match self {
            MaskKind::Speech => "speech",
            MaskKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IrmForm {
    /// `|S| / (|S| + |N| + ε)`
    #[default]
    Magnitude,
    /// `sqrt(|S|² / (|S|² + |N|² + ε²))`
    SqrtEnergy,
}

/// Per-bin mask in `[0, 1]`, `frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfMask {
    values: Array2<f64>,
    kind: MaskKind,
}

impl TfMask {
    pub fn new(values: Array2<f64>, kind: MaskKind) -> Result<Self> {
        if let Some((idx, v)) = values.indexed_iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Validation(format!(
                "{} mask value {v} at (frame {}, bin {}) is outside [0, 1]",
                kind.name(),
                idx.0,
                idx.1
            )));
        }
        Ok(Self { values, kind })
    }

    /// Same value everywhere.
    pub fn constant(frames: usize, bins: usize, value: f64, kind: MaskKind) -> Result<Self> {
        Self::new(Array2::from_elem((frames, bins), value), kind)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }

    pub fn to_tensor(&self) -> TensorFile {
        let meta = serde_json::json!({ "kind": "mask", "mask": self.kind.name() });
        TensorFile::f32(
            vec![self.values.nrows(), self.values.ncols()],
            self.values.iter().copied().collect(),
        )
        .expect("shape matches data")
        .with_metadata(meta.to_string())
    }

    /// Parses a tensor, checking shape (when given) and value range. The kind
    /// comes from the metadata when present, otherwise `fallback_kind`.
    pub fn from_tensor(
        t: &TensorFile,
        expected_shape: Option<(usize, usize)>,
        fallback_kind: MaskKind,
    ) -> Result<Self> {
        if t.dims().len() != 2 {
            return Err(Error::input(format!(
                "mask tensor must be 2-D, got dims {:?}",
                t.dims()
            )));
        }
        let shape = (t.dims()[0], t.dims()[1]);
        if let Some(expected) = expected_shape {
            if shape != expected {
                return Err(Error::input(format!(
                    "mask shape {shape:?} does not match expected {expected:?}"
                )));
            }
        }
        let kind = t
            .metadata()
            .and_then(|m| serde_json::from_str::<serde_json::Value>(m).ok())
            .and_then(|v| v.get("mask").cloned())
            .and_then(|v| serde_json::from_value::<MaskKind>(v).ok())
            .unwrap_or(fallback_kind);
        let values = Array2::from_shape_vec(shape, t.data().to_vec()).expect("dims match data");
        Self::new(values, kind)
    }
}

pub fn save_mask(mask: &TfMask, path: impl AsRef<Path>) -> Result<()> {
    mask.to_tensor().write(path)
}

pub fn load_mask(path: impl AsRef<Path>, expected_shape: (usize, usize), kind: MaskKind) -> Result<TfMask> {
    TfMask::from_tensor(&TensorFile::read(path)?, Some(expected_shape), kind)
}

/// Speech and noise IRMs on `channel` from separated clean and noise spectrograms.
///
/// The guard `ε` is `IRM_EPSILON` times the mean of `|S| + |N|` over the
/// channel, so the masks do not change when both inputs are scaled together.
pub fn oracle_irm(clean: &Spectrogram, noise: &Spectrogram, channel: usize, form: IrmForm) -> Result<(TfMask, TfMask)> {
    if !clean.is_compatible(noise) {
        return Err(Error::input(format!(
            "clean {:?} and noise {:?} spectrograms differ in shape or STFT parameters",
            clean.bins().shape(),
            noise.bins().shape()
        )));
    }
    clean.check_channel(channel)?;
    let s = clean.bins().index_axis(Axis(0), channel).mapv(|z| z.norm());
    let n = noise.bins().index_axis(Axis(0), channel).mapv(|z| z.norm());
    let mean_total = (&s + &n).mean().unwrap_or(0.0);
    let eps = if mean_total > 0.0 {
        IRM_EPSILON * mean_total
    } else {
        IRM_EPSILON
    };

    let (speech, noise_mask) = match form {
        IrmForm::Magnitude => {
            let speech = Zip::from(&s).and(&n).map_collect(|a, b| a / (a + b + eps));
            let noise_mask = Zip::from(&s).and(&n).map_collect(|a, b| b / (a + b + eps));
            (speech, noise_mask)
        }
        IrmForm::SqrtEnergy => {
            let e2 = eps * eps;
            let speech = Zip::from(&s)
                .and(&n)
                .map_collect(|a, b| (a * a / (a * a + b * b + e2)).sqrt());
            let noise_mask = Zip::from(&s)
                .and(&n)
                .map_collect(|a, b| (b * b / (a * a + b * b + e2)).sqrt());
            (speech, noise_mask)
        }
    };
    Ok((
        TfMask::new(speech, MaskKind::Speech)?,
        TfMask::new(noise_mask, MaskKind::Noise)?,
    ))
}
