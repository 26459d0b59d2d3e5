//! Multichannel short-time Fourier transform with overlap-add inversion.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView1, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_MS: f64 = 32.0;
pub const DEFAULT_HOP_MS: f64 = 16.0;

/// Real multichannel signal, `channels × samples`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Array2<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Array2<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::input("sample rate must be positive"));
        }
        if samples.nrows() == 0 {
            return Err(Error::input("waveform needs at least one channel"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        let n = samples.len();
        let arr = Array2::from_shape_vec((1, n), samples).expect("1 x n shape");
        Self::new(arr, sample_rate)
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        let rows = channels.len();
        let len = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::input("all channels must have the same length"));
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let arr = Array2::from_shape_vec((rows, len), flat).map_err(|e| Error::input(e.to_string()))?;
        Self::new(arr, sample_rate)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn num_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, index: usize) -> Result<ArrayView1<'_, f64>> {
        if index >= self.num_channels() {
            return Err(Error::input(format!(
                "channel {index} out of range for {} channels",
                self.num_channels()
            )));
        }
        Ok(self.samples.row(index))
    }

    /// Single-channel copy of channel `index`.
    pub fn select_channel(&self, index: usize) -> Result<Waveform> {
        let row = self.channel(index)?;
        Waveform::mono(row.to_vec(), self.sample_rate)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: &self.samples * gain,
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    /// Square root of the periodic Hann window, used for analysis and synthesis.
    SqrtHann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::SqrtHann => (0..len)
                .map(|n| {
                    let phase = 2.0 * std::f64::consts::PI * n as f64 / len as f64;
                    (0.5 - 0.5 * phase.cos()).sqrt()
                })
                .collect(),
            WindowKind::Rectangular => vec![1.0; len],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::SqrtHann => "sqrt_hann",
            WindowKind::Rectangular => "rectangular",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize, window: WindowKind) -> Result<Self> {
        let cfg = Self { frame_len, hop, window };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Frame and hop given in milliseconds at `sample_rate`.
    pub fn from_ms(sample_rate: u32, frame_ms: f64, hop_ms: f64, window: WindowKind) -> Result<Self> {
        let to_samples = |ms: f64| (ms * sample_rate as f64 / 1000.0).round() as usize;
        Self::new(to_samples(frame_ms), to_samples(hop_ms), window)
    }

    /// 32 ms frames, 16 ms hop, sqrt-Hann.
    pub fn default_for(sample_rate: u32) -> Result<Self> {
        Self::from_ms(sample_rate, DEFAULT_FRAME_MS, DEFAULT_HOP_MS, WindowKind::SqrtHann)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_len < 2 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "frame length must be even and >= 2, got {}",
                self.frame_len
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(Error::Config(format!(
                "hop must lie in [1, {}], got {}",
                self.frame_len, self.hop
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames covering `len` samples; the last partial frame is zero-padded.
    pub fn num_frames(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len).div_ceil(self.hop)
        }
    }

    /// Constant overlap-add gain of analysis times synthesis window, if one exists.
    pub fn overlap_add_gain(&self) -> Option<f64> {
        let w = self.window.coefficients(self.frame_len);
        let mut sums = vec![0.0; self.hop];
        for (n, wn) in w.iter().enumerate() {
            sums[n % self.hop] += wn * wn;
        }
        let first = sums[0];
        let tol = 1e-9 * first.abs().max(1e-300);
        if first > 0.0 && sums.iter().all(|s| (s - first).abs() <= tol) {
            Some(first)
        } else {
            None
        }
    }
}

/// Complex time-frequency representation, `channels × frames × bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    bins: Array3<Complex64>,
    sample_rate: u32,
    config: StftConfig,
    num_samples: usize,
}

impl Spectrogram {
    pub fn new(bins: Array3<Complex64>, sample_rate: u32, config: StftConfig, num_samples: usize) -> Result<Self> {
        config.validate()?;
        if bins.shape()[2] != config.num_bins() {
            return Err(Error::input(format!(
                "spectrogram has {} bins, frame length {} needs {}",
                bins.shape()[2],
                config.frame_len,
                config.num_bins()
            )));
        }
        if bins.shape()[0] == 0 {
            return Err(Error::input("spectrogram needs at least one channel"));
        }
        Ok(Self {
            bins,
            sample_rate,
            config,
            num_samples,
        })
    }

    pub fn bins(&self) -> &Array3<Complex64> {
        &self.bins
    }

    pub fn bins_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.bins
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_channels(&self) -> usize {
        self.bins.shape()[0]
    }

    pub fn num_frames(&self) -> usize {
        self.bins.shape()[1]
    }

    pub fn num_bins(&self) -> usize {
        self.bins.shape()[2]
    }

    /// Centre frequency (Hz) of every bin.
    pub fn frequencies(&self) -> Vec<f64> {
        let n = self.config.frame_len as f64;
        (0..self.num_bins())
            .map(|k| k as f64 * self.sample_rate as f64 / n)
            .collect()
    }

    pub(crate) fn check_channel(&self, channel: usize) -> Result<()> {
        if channel >= self.num_channels() {
            return Err(Error::input(format!(
                "channel {channel} out of range for {} channels",
                self.num_channels()
            )));
        }
        Ok(())
    }

    /// Same STFT parameters and shape.
    pub fn is_compatible(&self, other: &Spectrogram) -> bool {
        self.bins.shape() == other.bins.shape() && self.config == other.config && self.sample_rate == other.sample_rate
    }
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(len)
    } else {
        planner.plan_fft_forward(len)
    }
}

/// One-sided STFT of every channel.
pub fn stft(wav: &Waveform, config: StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    let len = wav.num_samples();
    if len == 0 {
        return Err(Error::input("cannot transform an empty signal"));
    }
    let frames = config.num_frames(len);
    let bins = config.num_bins();
    let n = config.frame_len;
    let window = config.window.coefficients(n);
    let fft = plan(n, false);

    let per_channel: Vec<Array2<Complex64>> = (0..wav.num_channels())
        .into_par_iter()
        .map(|c| {
            let x = wav.samples().row(c);
            let mut out = Array2::zeros((frames, bins));
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for t in 0..frames {
                let start = t * config.hop;
                for (k, b) in buf.iter_mut().enumerate() {
                    let v = x.get(start + k).copied().unwrap_or(0.0);
                    *b = Complex64::new(v * window[k], 0.0);
                }
                fft.process(&mut buf);
                for k in 0..bins {
                    out[[t, k]] = buf[k];
                }
            }
            out
        })
        .collect();

    let mut out = Array3::zeros((wav.num_channels(), frames, bins));
    for (c, plane) in per_channel.into_iter().enumerate() {
        out.index_axis_mut(Axis(0), c).assign(&plane);
    }
    Spectrogram::new(out, wav.sample_rate(), config, len)
}

/// Overlap-add inverse of [`stft`], trimmed to the original signal length.
pub fn istft(spec: &Spectrogram) -> Result<Waveform> {
    let config = spec.config();
    let gain = config.overlap_add_gain().ok_or_else(|| {
        Error::Config(format!(
            "{} window with frame {} and hop {} does not satisfy overlap-add reconstruction",
            config.window.name(),
            config.frame_len,
            config.hop
        ))
    })?;
    let n = config.frame_len;
    let frames = spec.num_frames();
    let bins = spec.num_bins();
    let total = (frames - 1) * config.hop + n;
    let window = config.window.coefficients(n);
    let ifft = plan(n, true);

    let per_channel: Vec<Vec<f64>> = (0..spec.num_channels())
        .into_par_iter()
        .map(|c| {
            let mut out = vec![0.0; total];
            let mut norm = vec![0.0; total];
            let mut buf = vec![Complex64::new(0.0, 0.0); n];
            for t in 0..frames {
                for (k, b) in buf.iter_mut().take(bins).enumerate() {
                    *b = spec.bins[[c, t, k]];
                }
                // DC and Nyquist of a real signal are real
                buf[0].im = 0.0;
                buf[n / 2].im = 0.0;
                for k in 1..n / 2 {
                    buf[n - k] = buf[k].conj();
                }
                ifft.process(&mut buf);
                let start = t * config.hop;
                for k in 0..n {
                    out[start + k] += buf[k].re / n as f64 * window[k];
                    norm[start + k] += window[k] * window[k];
                }
            }
            // interior samples see the constant gain; the edges are covered by
            // fewer frames and get their own normalisation
            for (v, g) in out.iter_mut().zip(&norm) {
                *v = if *g > 1e-10 * gain { *v / g } else { 0.0 };
            }
            out.truncate(spec.num_samples());
            out
        })
        .collect();

    Waveform::from_channels(per_channel, spec.sample_rate())
}

/// `|y_{t,f}|` of one channel, `frames × bins`.
pub fn magnitude(spec: &Spectrogram, channel: usize) -> Result<Array2<f64>> {
    spec.check_channel(channel)?;
    Ok(spec.bins.slice(s![channel, .., ..]).mapv(|z| z.norm()))
}
