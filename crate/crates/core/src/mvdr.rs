//! Mask-based MVDR beamforming.
//!
//! Speech and noise spatial covariances are mask-weighted averages of the
//! observed outer products `y y^H`. The filter for each frequency is
//!
//! ```text
//! w_f = (R_N^-1 R_S / tr(R_N^-1 R_S)) u
//! ```
//!
//! with `u` selecting the reference microphone, and the enhanced bin is
//! `w_f^H y_{t,f}`. Weights are computed once per utterance.

use ndarray::{Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ArrayGeometry;
use crate::io::TensorFile;
use crate::linalg::{CMatrix, Cholesky};
use crate::masks::TfMask;
use crate::stft::{istft, stft, Spectrogram, StftConfig, Waveform};

/// Mask mass below which a covariance estimate is replaced by the identity.
pub const MIN_MASK_MASS: f64 = 1e-10;
/// `|tr(R_N^-1 R_S)|` below which a bin falls back to pass-through.
pub const MIN_TRACE: f64 = 1e-12;
pub const DEFAULT_DIAGONAL_LOADING: f64 = 1e-6;

/// Per-frequency speech and noise covariances.
#[derive(Debug, Clone)]
pub struct CovarianceSet {
    pub speech: Vec<CMatrix>,
    pub noise: Vec<CMatrix>,
    pub speech_mass: Vec<f64>,
    pub noise_mass: Vec<f64>,
    /// Bins whose speech or noise mask mass was too small to estimate from.
    pub degenerate: Vec<bool>,
}

impl CovarianceSet {
    pub fn num_bins(&self) -> usize {
        self.speech.len()
    }

    pub fn num_channels(&self) -> usize {
        self.speech.first().map_or(0, CMatrix::dim)
    }
}

/// Per-frequency complex filters.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerWeights {
    /// `bins × channels`
    pub weights: Vec<Vec<Complex64>>,
    pub reference_mic: usize,
    /// Bins that fell back to the reference selector.
    pub degenerate: Vec<bool>,
}

impl BeamformerWeights {
    /// Selects the reference microphone at every bin.
    pub fn pass_through(num_bins: usize, num_channels: usize, reference_mic: usize) -> Self {
        Self {
            weights: vec![one_hot(num_channels, reference_mic); num_bins],
            reference_mic,
            degenerate: vec![true; num_bins],
        }
    }

    pub fn num_bins(&self) -> usize {
        self.weights.len()
    }

    pub fn num_channels(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// `bins × channels × 2` (real, imaginary) as `f32`.
    pub fn to_tensor(&self) -> TensorFile {
        let data = self
            .weights
            .iter()
            .flat_map(|w| w.iter().flat_map(|z| [z.re, z.im]))
            .collect();
        let degenerate = self.degenerate.iter().filter(|d| **d).count();
        let meta = serde_json::json!({
            "kind": "mvdr_weights",
            "layout": "bins x channels x (re, im)",
            "reference_mic": self.reference_mic,
            "degenerate_bins": degenerate,
        });
        TensorFile::f32(vec![self.num_bins(), self.num_channels(), 2], data)
            .expect("shape matches data")
            .with_metadata(meta.to_string())
    }
}

fn one_hot(n: usize, index: usize) -> Vec<Complex64> {
    let mut u = vec![Complex64::new(0.0, 0.0); n];
    u[index] = Complex64::new(1.0, 0.0);
    u
}

fn weighted_covariance(spec: &Spectrogram, mask: &TfMask, f: usize) -> (CMatrix, f64) {
    let c = spec.num_channels();
    let bins = spec.bins();
    let m = mask.values();
    let mut r = CMatrix::zeros(c);
    let mut mass = 0.0;
    let mut y = vec![Complex64::new(0.0, 0.0); c];
    for t in 0..spec.num_frames() {
        let weight = m[[t, f]];
        if weight == 0.0 {
            continue;
        }
        mass += weight;
        for (ch, v) in y.iter_mut().enumerate() {
            *v = bins[[ch, t, f]];
        }
        for i in 0..c {
            for j in i..c {
                r[(i, j)] += weight * y[i] * y[j].conj();
            }
        }
    }
    if mass < MIN_MASK_MASS {
        return (CMatrix::identity(c), mass);
    }
    for i in 0..c {
        let d = r[(i, i)].re / mass;
        r[(i, i)] = Complex64::new(d, 0.0);
        for j in i + 1..c {
            let v = r[(i, j)] / mass;
            r[(i, j)] = v;
            r[(j, i)] = v.conj();
        }
    }
    (r, mass)
}

/// Mask-weighted spatial covariances at every frequency.
pub fn estimate_covariances(spec: &Spectrogram, speech_mask: &TfMask, noise_mask: &TfMask) -> Result<CovarianceSet> {
    let shape = (spec.num_frames(), spec.num_bins());
    for mask in [speech_mask, noise_mask] {
        if mask.shape() != shape {
            return Err(Error::input(format!(
                "{} mask shape {:?} does not match spectrogram frames x bins {:?}",
                mask.kind().name(),
                mask.shape(),
                shape
            )));
        }
    }
    let per_bin: Vec<_> = (0..spec.num_bins())
        .into_par_iter()
        .map(|f| {
            let (rs, ms) = weighted_covariance(spec, speech_mask, f);
            let (rn, mn) = weighted_covariance(spec, noise_mask, f);
            (rs, ms, rn, mn)
        })
        .collect();
    let mut set = CovarianceSet {
        speech: Vec::with_capacity(per_bin.len()),
        noise: Vec::with_capacity(per_bin.len()),
        speech_mass: Vec::with_capacity(per_bin.len()),
        noise_mass: Vec::with_capacity(per_bin.len()),
        degenerate: Vec::with_capacity(per_bin.len()),
    };
    for (rs, ms, rn, mn) in per_bin {
        set.degenerate.push(ms < MIN_MASK_MASS || mn < MIN_MASK_MASS);
        set.speech.push(rs);
        set.noise.push(rn);
        set.speech_mass.push(ms);
        set.noise_mass.push(mn);
    }
    Ok(set)
}

/// Solves the filter of a single bin, `None` if the bin is degenerate.
///
/// `R_N` is loaded with `loading · tr(R_N)/C · I` before the solve.
pub fn solve_bin(speech: &CMatrix, noise: &CMatrix, reference_mic: usize, loading: f64) -> Option<Vec<Complex64>> {
    let c = noise.dim();
    if !speech.is_finite() || !noise.is_finite() {
        return None;
    }
    let tr_n = noise.trace().re;
    if !(tr_n > 0.0) {
        return None;
    }
    let mut loaded = noise.clone();
    loaded.add_diagonal(loading * tr_n / c as f64);
    let chol = Cholesky::new(&loaded)?;
    let product = chol.solve(speech);
    let trace = product.trace();
    if !(trace.norm() >= MIN_TRACE) {
        return None;
    }
    let w: Vec<Complex64> = product.column(reference_mic).into_iter().map(|z| z / trace).collect();
    w.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(w)
}

pub fn solve_weights(cov: &CovarianceSet, reference_mic: usize, diagonal_loading: f64) -> Result<BeamformerWeights> {
    let c = cov.num_channels();
    if c < 2 {
        return Err(Error::input("MVDR needs at least two channels"));
    }
    if reference_mic >= c {
        return Err(Error::input(format!(
            "reference mic {reference_mic} out of range for {c} channels"
        )));
    }
    if !(diagonal_loading >= 0.0 && diagonal_loading.is_finite()) {
        return Err(Error::input("diagonal loading must be a non-negative finite factor"));
    }
    let solved: Vec<Option<Vec<Complex64>>> = (0..cov.num_bins())
        .into_par_iter()
        .map(|f| {
            if cov.degenerate[f] {
                None
            } else {
                solve_bin(&cov.speech[f], &cov.noise[f], reference_mic, diagonal_loading)
            }
        })
        .collect();
    let mut weights = Vec::with_capacity(solved.len());
    let mut degenerate = Vec::with_capacity(solved.len());
    for w in solved {
        degenerate.push(w.is_none());
        weights.push(w.unwrap_or_else(|| one_hot(c, reference_mic)));
    }
    Ok(BeamformerWeights {
        weights,
        reference_mic,
        degenerate,
    })
}

/// `ŷ_{t,f} = w_f^H y_{t,f}`, one output channel.
pub fn apply_weights(spec: &Spectrogram, w: &BeamformerWeights) -> Result<Spectrogram> {
    if w.num_channels() != spec.num_channels() || w.num_bins() != spec.num_bins() {
        return Err(Error::input(format!(
            "weights are {} bins x {} channels, spectrogram is {} bins x {} channels",
            w.num_bins(),
            w.num_channels(),
            spec.num_bins(),
            spec.num_channels()
        )));
    }
    let frames = spec.num_frames();
    let bins = spec.bins();
    let mut out = Array3::zeros((1, frames, spec.num_bins()));
    for (f, wf) in w.weights.iter().enumerate() {
        for t in 0..frames {
            let mut acc = Complex64::new(0.0, 0.0);
            for (c, wc) in wf.iter().enumerate() {
                acc += wc.conj() * bins[[c, t, f]];
            }
            out[[0, t, f]] = acc;
        }
    }
    Spectrogram::new(out, spec.sample_rate(), spec.config(), spec.num_samples())
}

#[derive(Debug, Clone, Copy)]
pub struct MvdrConfig {
    pub stft: StftConfig,
    pub diagonal_loading: f64,
}

impl MvdrConfig {
    pub fn default_for(sample_rate: u32) -> Result<Self> {
        Ok(Self {
            stft: StftConfig::default_for(sample_rate)?,
            diagonal_loading: DEFAULT_DIAGONAL_LOADING,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Enhanced {
    pub waveform: Waveform,
    pub weights: BeamformerWeights,
}

/// stft → covariances → weights → beamforming → istft.
///
/// The steering angle only shapes the masks (through the angle features fed
/// to whichever estimator produced them), so it is not an argument here.
pub fn enhance(
    wav: &Waveform,
    geom: &ArrayGeometry,
    speech_mask: &TfMask,
    noise_mask: &TfMask,
    config: &MvdrConfig,
) -> Result<Enhanced> {
    if wav.num_channels() != geom.num_mics() {
        return Err(Error::input(format!(
            "waveform has {} channels but the geometry has {} microphones",
            wav.num_channels(),
            geom.num_mics()
        )));
    }
    let spec = stft(wav, config.stft)?;
    let cov = estimate_covariances(&spec, speech_mask, noise_mask)?;
    let weights = solve_weights(&cov, geom.reference_mic(), config.diagonal_loading)?;
    let out = apply_weights(&spec, &weights)?;
    Ok(Enhanced {
        waveform: istft(&out)?,
        weights,
    })
}

/// Eigen-free PSD sanity check used by tests and diagnostics: the smallest
/// Cholesky pivot after adding `tol · tr(R)` to the diagonal is positive.
pub fn is_psd_within(r: &CMatrix, tol: f64) -> bool {
    let mut shifted = r.clone();
    let tr = r.trace().re.max(0.0);
    shifted.add_diagonal(tol * tr + f64::MIN_POSITIVE);
    Cholesky::new(&shifted).is_some()
}

/// Spectrogram slice of a single channel with the same STFT parameters.
pub fn channel_spectrogram(spec: &Spectrogram, channel: usize) -> Result<Spectrogram> {
    spec.check_channel(channel)?;
    let plane = spec.bins().index_axis(Axis(0), channel).to_owned().insert_axis(Axis(0));
    Spectrogram::new(plane, spec.sample_rate(), spec.config(), spec.num_samples())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::masks::MaskKind;
    use crate::stft::WindowKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_spec(channels: usize, frames: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = StftConfig::new(8, 4, WindowKind::SqrtHann).unwrap();
        let bins = Array3::from_shape_fn((channels, frames, 5), |_| {
            c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        Spectrogram::new(bins, 16_000, cfg, frames * 4 + 4).unwrap()
    }

    #[test]
    fn golden_two_by_two() {
        let rn = CMatrix::from_fn(2, |i, j| if i == j { c((i + 1) as f64, 0.0) } else { c(0.0, 0.0) });
        let rs = CMatrix::from_fn(2, |_, _| c(1.0, 0.0));
        let w = solve_bin(&rs, &rn, 0, 0.0).unwrap();
        assert!((w[0] - c(2.0 / 3.0, 0.0)).norm() < 1e-12);
        assert!((w[1] - c(1.0 / 3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn single_frame_unit_mask_is_outer_product() {
        let spec = random_spec(3, 1, 1);
        let m = TfMask::constant(1, 5, 1.0, MaskKind::Speech).unwrap();
        let cov = estimate_covariances(&spec, &m, &m).unwrap();
        for f in 0..5 {
            let y: Vec<_> = (0..3).map(|ch| spec.bins()[[ch, 0, f]]).collect();
            let expected = CMatrix::outer(&y);
            for (a, b) in cov.speech[f].as_slice().iter().zip(expected.as_slice()) {
                assert!((a - b).norm() < 1e-15);
            }
            let norm2: f64 = y.iter().map(|z| z.norm_sqr()).sum();
            assert!((cov.speech[f].trace().re - norm2).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_mask_level_cancels() {
        let spec = random_spec(3, 20, 2);
        let a = TfMask::constant(20, 5, 0.3, MaskKind::Speech).unwrap();
        let b = TfMask::constant(20, 5, 0.9, MaskKind::Speech).unwrap();
        let ca = estimate_covariances(&spec, &a, &a).unwrap();
        let cb = estimate_covariances(&spec, &b, &b).unwrap();
        for f in 0..5 {
            for (x, y) in ca.speech[f].as_slice().iter().zip(cb.speech[f].as_slice()) {
                assert!((x - y).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mask_shape_checked() {
        let spec = random_spec(2, 4, 3);
        let m = TfMask::constant(3, 5, 1.0, MaskKind::Speech).unwrap();
        assert!(estimate_covariances(&spec, &m, &m).is_err());
    }

    #[test]
    fn zero_noise_mask_is_pass_through() {
        let spec = random_spec(4, 10, 4);
        let ms = TfMask::constant(10, 5, 1.0, MaskKind::Speech).unwrap();
        let mn = TfMask::constant(10, 5, 0.0, MaskKind::Noise).unwrap();
        let cov = estimate_covariances(&spec, &ms, &mn).unwrap();
        assert!(cov.degenerate.iter().all(|d| *d));
        let w = solve_weights(&cov, 2, DEFAULT_DIAGONAL_LOADING).unwrap();
        let out = apply_weights(&spec, &w).unwrap();
        let reference = channel_spectrogram(&spec, 2).unwrap();
        assert_eq!(out.bins(), reference.bins());
    }

    #[test]
    fn conjugate_phase_rotates_output() {
        let spec = random_spec(3, 6, 5);
        let m = TfMask::constant(6, 5, 0.5, MaskKind::Speech).unwrap();
        let n = TfMask::new(
            ndarray::Array2::from_shape_fn((6, 5), |(t, _)| if t % 2 == 0 { 1.0 } else { 0.2 }),
            MaskKind::Noise,
        )
        .unwrap();
        let w = solve_weights(&estimate_covariances(&spec, &m, &n).unwrap(), 0, 1e-3).unwrap();
        let phi = 0.7;
        let mut rotated = w.clone();
        for wf in &mut rotated.weights {
            for z in wf.iter_mut() {
                *z *= Complex64::from_polar(1.0, -phi);
            }
        }
        let a = apply_weights(&spec, &w).unwrap();
        let b = apply_weights(&spec, &rotated).unwrap();
        for (x, y) in a.bins().iter().zip(b.bins().iter()) {
            // conj(e^{-jφ} w) = e^{jφ} conj(w)
            assert!((x * Complex64::from_polar(1.0, phi) - y).norm() < 1e-12);
            assert!((x.norm() - y.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let spec = random_spec(3, 4, 6);
        let w = BeamformerWeights::pass_through(5, 2, 0);
        assert!(apply_weights(&spec, &w).is_err());
    }

    #[test]
    fn weights_tensor_layout() {
        let w = BeamformerWeights::pass_through(3, 2, 1);
        let t = w.to_tensor();
        assert_eq!(t.dims(), &[3, 2, 2]);
        assert_eq!(&t.data()[..4], &[0.0, 0.0, 1.0, 0.0]);
    }
}
