//! Analysis / resynthesis with the default 32 ms sqrt-Hann STFT.

use bkws::stft::{istft, stft, StftConfig, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> bkws::Result<()> {
    let fs = 16_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..fs as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let wav = Waveform::mono(x.clone(), fs)?;

    let config = StftConfig::default_for(fs)?;
    let spec = stft(&wav, config)?;
    println!(
        "frame {} / hop {} samples -> {} frames x {} bins",
        config.frame_len,
        config.hop,
        spec.num_frames(),
        spec.num_bins()
    );

    let y = istft(&spec)?;
    let y = y.channel(0)?.to_vec();
    let rel = |a: &[f64], b: &[f64]| {
        let err: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
        (err / a.iter().map(|p| p * p).sum::<f64>()).sqrt()
    };
    // sample 0 sits on the window's zero and is only recoverable in the interior sense
    let edge = config.frame_len;
    let n = x.len();
    println!("relative error, whole signal: {:.3e}", rel(&x, &y));
    println!(
        "relative error, interior:     {:.3e}",
        rel(&x[edge..n - edge], &y[edge..n - edge])
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
