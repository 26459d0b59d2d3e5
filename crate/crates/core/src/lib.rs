//! Multichannel keyword-spotting front end guided by a lip region.
//!
//! The crate covers the signal path from microphone-array geometry to an
//! enhanced waveform, plus the audio-visual fusion math and the wake-word
//! operating-point metric:
//!
//! - [`geometry`]: array layouts, far-field delays, lip-ROI to beam-region mapping
//! - [`stft`]: sqrt-Hann STFT / overlap-add inverse
//! - [`spatial`]: inter-channel phase differences and angle features
//! - [`masks`]: time-frequency masks and oracle ideal ratio masks
//! - [`mvdr`]: mask-based MVDR covariance estimation and beamforming
//! - [`simulator`]: plane-wave multichannel scenes and SI-SNR
//! - [`fusion`]: cross-modal attention and bilinear fusion with gradient checks
//! - [`scoring`]: FRR / FAR / score and threshold sweeps
//! - [`io`]: the `BKT1` tensor container and WAV files
//! - [`cli`]: the `bkws` command-line front end

// `!(x > 0.0)` is used on purpose so NaN lands on the error path
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod masks;
pub mod mvdr;
pub mod scoring;
pub mod simulator;
pub mod spatial;
pub mod stft;

pub use error::{Error, Result};
pub use geometry::{ArrayGeometry, BeamGrid, LipRoi};
pub use io::TensorFile;
pub use masks::TfMask;
pub use stft::{Spectrogram, StftConfig, Waveform};
