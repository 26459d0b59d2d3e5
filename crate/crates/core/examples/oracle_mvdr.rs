//! Oracle-mask MVDR on the built-in scene, compared with delay-and-sum
//! steered at the target.

use bkws::masks::{oracle_irm, IrmForm};
use bkws::mvdr::{enhance, MvdrConfig};
use bkws::simulator::{delay_and_sum, si_snr, simulate, SceneSpec};
use bkws::stft::stft;

pub fn run_example() -> bkws::Result<()> {
    let scene = SceneSpec::default_scene();
    let sim = simulate(&scene)?;
    let geom = &sim.geometry;
    let r = geom.reference_mic();
    let config = MvdrConfig::default_for(scene.sample_rate)?;

    let clean = stft(&sim.source_images[0], config.stft)?;
    let noise = stft(&sim.interference()?, config.stft)?;
    let (speech_mask, noise_mask) = oracle_irm(&clean, &noise, r, IrmForm::Magnitude)?;

    let out = enhance(&sim.mixture, geom, &speech_mask, &noise_mask, &config)?;
    let target = sim.source_images[0].select_channel(r)?;
    let before = si_snr(&sim.mixture.select_channel(r)?, &target)?;
    let after = si_snr(&out.waveform, &target)?;
    let das = si_snr(&delay_and_sum(&sim.mixture, geom, sim.angles_deg[0])?, &target)?;
    println!("reference mic   {before:6.2} dB");
    println!("delay-and-sum   {das:6.2} dB");
    println!("oracle MVDR     {after:6.2} dB  ({:+.2} dB)", after - before);
    let degenerate = out.weights.degenerate.iter().filter(|d| **d).count();
    println!("degenerate bins: {degenerate}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
