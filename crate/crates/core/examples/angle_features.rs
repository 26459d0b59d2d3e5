//! Angle features of a single plane-wave source, steered at each beam region.
//! The region containing the source lights up.

use bkws::geometry::{region_center_angle, BeamGrid};
use bkws::simulator::{simulate, SceneSpec, SignalSpec, SourceSpec};
use bkws::spatial::{angle_feature, mean_over_top_energy, PairSet};
use bkws::stft::{magnitude, stft, StftConfig};

pub fn run_example() -> bkws::Result<()> {
    let source_deg = -25.0;
    let scene = SceneSpec {
        sample_rate: 16_000,
        duration_s: 2.0,
        geometry: None,
        sources: vec![SourceSpec {
            signal: SignalSpec::SpeechShapedNoise,
            angle_deg: source_deg,
            gain_db: 0.0,
        }],
        diffuse_noise_snr_db: None,
        sensor_noise_snr_db: Some(40.0),
        seed: 1,
        base_dir: None,
    };
    let sim = simulate(&scene)?;
    let spec = stft(&sim.mixture, StftConfig::default_for(scene.sample_rate)?)?;
    let energy = magnitude(&spec, sim.geometry.reference_mic())?.mapv(|m| m * m);

    let grid = BeamGrid::default();
    let pairs = PairSet::default();
    println!(
        "source at {source_deg:+} deg (region {:?})",
        grid.region_of_angle(source_deg)
    );
    for region in 0..grid.num_regions {
        let theta = region_center_angle(region, &grid)?;
        let afs = angle_feature(&spec, &sim.geometry, &pairs, theta)?;
        let mut mean = 0.0;
        for af in &afs {
            mean += mean_over_top_energy(af, &energy, 0.1)? / afs.len() as f64;
        }
        println!("region {region} ({theta:+5.0} deg): mean AF {mean:+.3}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
