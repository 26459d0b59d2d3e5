//! RIFF WAV reading and writing (PCM 16-bit and IEEE float 32-bit,
//! interleaved, any channel count).

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::stft::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Validation(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Validation(format!(
                "{}: unsupported sample format {fmt:?} with {bits} bits (need PCM16 or float32)",
                path.display()
            )))
        }
    };
    let frames = interleaved.len() / channels;
    let mut per_channel = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, v) in frame.iter().enumerate() {
            per_channel[c].push(*v);
        }
    }
    Waveform::from_channels(per_channel, spec.sample_rate)
}

pub fn write_wav(path: impl AsRef<Path>, wav: &Waveform, encoding: WavEncoding) -> Result<()> {
    let channels = u16::try_from(wav.num_channels()).map_err(|_| Error::input("too many channels for a WAV file"))?;
    let spec = match encoding {
        WavEncoding::Pcm16 => WavSpec {
            channels,
            sample_rate: wav.sample_rate(),
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        },
        WavEncoding::Float32 => WavSpec {
            channels,
            sample_rate: wav.sample_rate(),
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        },
    };
    let mut writer = WavWriter::create(path, spec)?;
    let samples = wav.samples();
    for t in 0..wav.num_samples() {
        for c in 0..wav.num_channels() {
            let v = samples[[c, t]];
            match encoding {
                WavEncoding::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q)?;
                }
                WavEncoding::Float32 => writer.write_sample(v as f32)?,
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_keeps_channel_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let wav = Waveform::from_channels(vec![vec![0.5, -0.25, 0.0], vec![0.1, 0.2, 0.3]], 16_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Float32).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.num_channels(), 2);
        assert_eq!(back.sample_rate(), 16_000);
        for (a, b) in back.samples().iter().zip(wav.samples().iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn pcm16_roundtrip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let wav = Waveform::from_channels(vec![vec![0.5, -0.5, 0.0, 0.999]], 8_000).unwrap();
        write_wav(&path, &wav, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in back.samples().iter().zip(wav.samples().iter()) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
