//! File formats: the raw tensor container and WAV audio.

pub mod tensor;
pub mod wav;

pub use tensor::{DType, TensorFile};
pub use wav::{read_wav, write_wav, WavEncoding};
