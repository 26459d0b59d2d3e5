//! Inter-channel phase differences, direction-conditioned angle features and
//! the concatenated input of the mask estimation network.

use std::f64::consts::PI;

use ndarray::{concatenate, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pair_phase_delta, to_zero_based, ArrayGeometry};
use crate::io::TensorFile;
use crate::stft::{magnitude, Spectrogram};

/// Ordered microphone pairs (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
}

impl Default for PairSet {
    /// `(0,3), (1,4), (2,5)`, i.e. the 1-based pairs (1,4), (2,5), (3,6).
    fn default() -> Self {
        Self {
            pairs: vec![(0, 3), (1, 4), (2, 5)],
        }
    }
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::input("pair set is empty"));
        }
        if let Some((i, j)) = pairs.iter().find(|(i, j)| i == j) {
            return Err(Error::input(format!("pair ({i}, {j}) repeats a microphone")));
        }
        Ok(Self { pairs })
    }

    /// Pairs written with `index_base` (0 or 1).
    pub fn from_based(pairs: &[(usize, usize)], index_base: usize) -> Result<Self> {
        let converted = pairs
            .iter()
            .map(|(i, j)| Ok((to_zero_based(*i, index_base)?, to_zero_based(*j, index_base)?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(converted)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate_for(&self, geom: &ArrayGeometry) -> Result<()> {
        for &(i, j) in &self.pairs {
            geom.check_mic(i)?;
            geom.check_mic(j)?;
        }
        Ok(())
    }
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// `∠y_i − ∠y_j` per bin, wrapped to `(−π, π]`, `frames × bins`.
pub fn ipd(spec: &Spectrogram, pair: (usize, usize)) -> Result<Array2<f64>> {
    let (i, j) = pair;
    spec.check_channel(i)?;
    spec.check_channel(j)?;
    let bins = spec.bins();
    let yi = bins.index_axis(Axis(0), i);
    let yj = bins.index_axis(Axis(0), j);
    Ok(Zip::from(&yi)
        .and(&yj)
        .map_collect(|a, b| wrap_phase(a.arg() - b.arg())))
}

/// `cos(IPD − Δθ)` for a measured IPD and a per-bin expected phase difference.
pub fn angle_feature_from_ipd(ipd: &Array2<f64>, delta: &[f64]) -> Result<Array2<f64>> {
    if ipd.ncols() != delta.len() {
        return Err(Error::input(format!(
            "IPD has {} bins but {} expected phase values were given",
            ipd.ncols(),
            delta.len()
        )));
    }
    let mut out = ipd.clone();
    for mut row in out.rows_mut() {
        for (v, d) in row.iter_mut().zip(delta) {
            *v = wrap_phase(*v - d).cos();
        }
    }
    Ok(out)
}

/// One `frames × bins` angle-feature matrix per pair.
pub fn angle_feature(
    spec: &Spectrogram,
    geom: &ArrayGeometry,
    pairs: &PairSet,
    theta_deg: f64,
) -> Result<Vec<Array2<f64>>> {
    if !theta_deg.is_finite() {
        return Err(Error::input("steering angle must be finite"));
    }
    if spec.num_channels() != geom.num_mics() {
        return Err(Error::input(format!(
            "spectrogram has {} channels but the geometry has {} microphones",
            spec.num_channels(),
            geom.num_mics()
        )));
    }
    pairs.validate_for(geom)?;
    let freqs = spec.frequencies();
    pairs
        .pairs()
        .iter()
        .map(|&pair| {
            let delta = pair_phase_delta(geom, pair, theta_deg, &freqs)?;
            angle_feature_from_ipd(&ipd(spec, pair)?, &delta)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureBlock {
    Magnitude { channel: usize },
    AngleFeature { pair: (usize, usize) },
}

/// Network input: `[|y^0| | AF_pair1 | AF_pair2 | ...]` per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialFeature {
    pub data: Array2<f64>,
    pub num_bins: usize,
    pub blocks: Vec<FeatureBlock>,
    pub theta_deg: f64,
}

impl SpatialFeature {
    /// Columns of block `index`.
    pub fn block(&self, index: usize) -> ndarray::ArrayView2<'_, f64> {
        let start = index * self.num_bins;
        self.data.slice(ndarray::s![.., start..start + self.num_bins])
    }

    pub fn to_tensor(&self) -> TensorFile {
        let meta = serde_json::json!({
            "kind": "spatial_feature",
            "num_bins": self.num_bins,
            "theta_deg": self.theta_deg,
            "blocks": self.blocks,
        });
        TensorFile::f32(
            vec![self.data.nrows(), self.data.ncols()],
            self.data.iter().copied().collect(),
        )
        .expect("shape matches data")
        .with_metadata(meta.to_string())
    }
}

pub fn assemble_input(
    spec: &Spectrogram,
    geom: &ArrayGeometry,
    pairs: &PairSet,
    theta_deg: f64,
) -> Result<SpatialFeature> {
    let mag = magnitude(spec, 0)?;
    let afs = angle_feature(spec, geom, pairs, theta_deg)?;
    let mut views = vec![mag.view()];
    views.extend(afs.iter().map(|a| a.view()));
    let data = concatenate(Axis(1), &views).map_err(|e| Error::input(e.to_string()))?;
    let mut blocks = vec![FeatureBlock::Magnitude { channel: 0 }];
    blocks.extend(pairs.pairs().iter().map(|&pair| FeatureBlock::AngleFeature { pair }));
    Ok(SpatialFeature {
        data,
        num_bins: spec.num_bins(),
        blocks,
        theta_deg,
    })
}

/// Mean of `af` over the `fraction` of bins with the largest `energy`.
pub fn mean_over_top_energy(af: &Array2<f64>, energy: &Array2<f64>, fraction: f64) -> Result<f64> {
    if af.shape() != energy.shape() {
        return Err(Error::input("feature and energy shapes differ"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::input("fraction must lie in (0, 1]"));
    }
    let mut order: Vec<usize> = (0..energy.len()).collect();
    let e: Vec<f64> = energy.iter().copied().collect();
    order.sort_by(|a, b| e[*b].total_cmp(&e[*a]));
    let keep = ((fraction * order.len() as f64).ceil() as usize).max(1);
    let a: Vec<f64> = af.iter().copied().collect();
    Ok(order[..keep].iter().map(|i| a[*i]).sum::<f64>() / keep as f64)
}
