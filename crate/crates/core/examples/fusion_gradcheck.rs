//! Forward pass of the audio-visual fusion model on random features, then a
//! finite-difference check of the hand-derived gradients.

use bkws::fusion::{fuse_forward, grad_check, FeatureMatrix, FuseForwardProbe, FusionConfig, FusionParams, Modality};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> bkws::Result<()> {
    let mut config = FusionConfig::new(16, 12, 6);
    config.heads = 2;
    config.layers = 2;
    let params = FusionParams::random(config, 42)?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut draw = || Array2::from_shape_simple_fn((config.tokens, config.dim), || rng.gen_range(-1.0..1.0));
    let audio = FeatureMatrix::new(draw(), Modality::Audio)?;
    let visual = FeatureMatrix::new(draw(), Modality::Visual)?;

    let trace = fuse_forward(&audio, &visual, &params)?;
    let c_max = trace.relevance_audio.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!(
        "logit {:+.4}  p(wake) {:.4}  max |C_a| {c_max:.3}",
        trace.logit, trace.probability
    );

    let probe = FuseForwardProbe {
        audio: audio.into_values(),
        visual: visual.into_values(),
        params,
    };
    let report = grad_check(&probe, 30, 9)?;
    println!(
        "{} coordinates checked, {} skipped at ReLU kinks, max relative error {:.2e}",
        report.checked.len(),
        report.skipped.len(),
        report.max_rel_error
    );
    if let Some(w) = report.worst() {
        println!(
            "worst: {} analytic {:+.6e} numeric {:+.6e}",
            w.coordinate, w.analytic, w.numeric
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
