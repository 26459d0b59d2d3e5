//! Lip box -> beam region -> steering angle, and the per-pair phase
//! differences a plane wave from that angle produces.

use bkws::geometry::{pair_phase_delta, region_center_angle, region_of_roi, ArrayGeometry, BeamGrid, LipRoi};

pub fn run_example() -> bkws::Result<()> {
    let geom = ArrayGeometry::default_ula6();
    let grid = BeamGrid::default();
    println!("{} regions of {:.1} deg", grid.num_regions, grid.region_width_deg());

    for x in [40u32, 200, 330, 600] {
        let roi = LipRoi {
            frame_width_px: 640,
            x_min: x.saturating_sub(30),
            y_min: 100,
            x_max: x + 30,
            y_max: 160,
        };
        let region = region_of_roi(&roi, &grid)?;
        let theta = region_center_angle(region, &grid)?;
        let delays: Vec<String> = geom
            .arrival_delays(theta)
            .iter()
            .map(|t| format!("{:+.1}", t * 1e6))
            .collect();
        println!(
            "lips at x={x:3}px -> region {region} ({theta:+.0} deg), delays [us]: {}",
            delays.join(" ")
        );
    }

    let pair = (0, 3);
    let freqs = [250.0, 1000.0, 4000.0];
    let d = pair_phase_delta(&geom, pair, 30.0, &freqs)?;
    for (f, p) in freqs.iter().zip(&d) {
        println!("pair {pair:?} at 30 deg, {f:6.0} Hz: {p:+.4} rad");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> bkws::Result<()> {
    run_example()
}
