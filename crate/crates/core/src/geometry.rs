//! Microphone-array topology, lip-region to beam mapping and far-field
//! steering phase differences.
//!
//! Angle convention: 0° is array broadside (a source on the +y axis) and
//! positive angles rotate toward +x. A source at angle θ sends a plane wave
//! travelling along `-(sin θ, cos θ, 0)`; microphone `m` receives it with the
//! delay `τ_m = p_m · u / c` relative to the coordinate origin.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Microphone positions (meters) plus the reference microphone (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    mic_positions: Vec<[f64; 3]>,
    reference_mic: usize,
    speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<[f64; 3]>, reference_mic: usize, speed_of_sound: f64) -> Result<Self> {
        if mic_positions.len() < 2 {
            return Err(Error::input("array geometry needs at least 2 microphones"));
        }
        if reference_mic >= mic_positions.len() {
            return Err(Error::input(format!(
                "reference mic {reference_mic} out of range for {} microphones",
                mic_positions.len()
            )));
        }
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) {
            return Err(Error::input("speed of sound must be positive and finite"));
        }
        for (i, p) in mic_positions.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("mic {i} has a non-finite coordinate")));
            }
            for (j, q) in mic_positions.iter().enumerate().skip(i + 1) {
                if p == q {
                    return Err(Error::input(format!("mics {i} and {j} share identical coordinates")));
                }
            }
        }
        Ok(Self {
            mic_positions,
            reference_mic,
            speed_of_sound,
        })
    }

    /// Uniform linear array along the x axis, centred on the origin.
    pub fn uniform_linear(num_mics: usize, spacing_m: f64, reference_mic: usize) -> Result<Self> {
        let offset = (num_mics as f64 - 1.0) * spacing_m / 2.0;
        let mics = (0..num_mics)
            .map(|m| [m as f64 * spacing_m - offset, 0.0, 0.0])
            .collect();
        Self::new(mics, reference_mic, DEFAULT_SPEED_OF_SOUND)
    }

    /// The shipped default: 6 mics, 0.035 m spacing, reference mic 0.
    pub fn default_ula6() -> Self {
        Self::uniform_linear(6, 0.035, 0).expect("default geometry is valid")
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn reference_mic(&self) -> usize {
        self.reference_mic
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn mic_positions(&self) -> &[[f64; 3]] {
        &self.mic_positions
    }

    /// Plane-wave arrival delay (seconds) at microphone `mic` for a source at `theta_deg`.
    pub fn arrival_delay(&self, mic: usize, theta_deg: f64) -> f64 {
        let u = propagation_direction(theta_deg);
        let p = self.mic_positions[mic];
        (p[0] * u[0] + p[1] * u[1] + p[2] * u[2]) / self.speed_of_sound
    }

    /// Arrival delays for every microphone.
    pub fn arrival_delays(&self, theta_deg: f64) -> Vec<f64> {
        (0..self.num_mics()).map(|m| self.arrival_delay(m, theta_deg)).collect()
    }

    pub(crate) fn check_mic(&self, mic: usize) -> Result<()> {
        if mic >= self.num_mics() {
            return Err(Error::input(format!(
                "mic index {mic} out of range for {} microphones",
                self.num_mics()
            )));
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GeometryFile = serde_json::from_str(text)?;
        file.into_geometry()
    }

    pub fn to_json_file(&self) -> GeometryFile {
        GeometryFile {
            mics: self.mic_positions.clone(),
            reference: self.reference_mic + 1,
            speed_of_sound: self.speed_of_sound,
            index_base: 1,
        }
    }
}

/// Unit propagation direction of a plane wave from a source at `theta_deg`.
pub fn propagation_direction(theta_deg: f64) -> [f64; 3] {
    let theta = theta_deg.to_radians();
    [-theta.sin(), -theta.cos(), 0.0]
}

/// On-disk geometry description. Indices follow `index_base` (1 by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryFile {
    pub mics: Vec<[f64; 3]>,
    pub reference: usize,
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    #[serde(default = "default_index_base")]
    pub index_base: usize,
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

pub(crate) fn default_index_base() -> usize {
    1
}

impl GeometryFile {
    pub fn into_geometry(self) -> Result<ArrayGeometry> {
        let reference = to_zero_based(self.reference, self.index_base)?;
        ArrayGeometry::new(self.mics, reference, self.speed_of_sound)
    }
}

pub(crate) fn to_zero_based(index: usize, base: usize) -> Result<usize> {
    match base {
        0 => Ok(index),
        1 if index >= 1 => Ok(index - 1),
        1 => Err(Error::input("index 0 is invalid with index_base 1")),
        other => Err(Error::input(format!("index_base must be 0 or 1, got {other}"))),
    }
}

/// Horizontal split of the camera frame into equally wide beams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGrid {
    pub num_regions: usize,
    pub field_of_view_deg: f64,
    pub orientation_offset_deg: f64,
}

impl Default for BeamGrid {
    fn default() -> Self {
        Self {
            num_regions: 6,
            field_of_view_deg: 120.0,
            orientation_offset_deg: 0.0,
        }
    }
}

impl BeamGrid {
    pub fn validate(&self) -> Result<()> {
        if self.num_regions == 0 {
            return Err(Error::input("beam grid needs at least one region"));
        }
        if !(self.field_of_view_deg > 0.0 && self.field_of_view_deg <= 360.0) {
            return Err(Error::input("field of view must lie in (0, 360] degrees"));
        }
        if !self.orientation_offset_deg.is_finite() {
            return Err(Error::input("orientation offset must be finite"));
        }
        Ok(())
    }

    pub fn region_width_deg(&self) -> f64 {
        self.field_of_view_deg / self.num_regions as f64
    }

    /// Central angles of every region, left to right.
    pub fn center_angles(&self) -> Result<Vec<f64>> {
        (0..self.num_regions).map(|r| region_center_angle(r, self)).collect()
    }

    /// Region whose angular span contains `theta_deg`, if any.
    pub fn region_of_angle(&self, theta_deg: f64) -> Option<usize> {
        let start = -self.field_of_view_deg / 2.0 + self.orientation_offset_deg;
        let pos = (theta_deg - start) / self.region_width_deg();
        if pos < 0.0 || pos > self.num_regions as f64 {
            return None;
        }
        Some((pos.floor() as usize).min(self.num_regions - 1))
    }
}

/// Pixel bounding box of the speaker's lips in one video frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipRoi {
    pub frame_width_px: u32,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl LipRoi {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_min < self.x_max && self.x_max <= self.frame_width_px) {
            return Err(Error::input(format!(
                "invalid ROI x-range [{}, {}] for frame width {}",
                self.x_min, self.x_max, self.frame_width_px
            )));
        }
        if self.y_min >= self.y_max {
            return Err(Error::input(format!(
                "invalid ROI y-range [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    pub fn x_center(&self) -> f64 {
        (self.x_min as f64 + self.x_max as f64) / 2.0
    }
}

/// Index (0-based, left to right) of the region containing the ROI centre.
/// A centre lying exactly on a boundary belongs to the right-hand region.
pub fn region_of_roi(roi: &LipRoi, grid: &BeamGrid) -> Result<usize> {
    roi.validate()?;
    grid.validate()?;
    let n = grid.num_regions as f64;
    let raw = (n * roi.x_center() / roi.frame_width_px as f64).floor();
    Ok((raw.max(0.0) as usize).min(grid.num_regions - 1))
}

/// Central angle (degrees) of `region`.
pub fn region_center_angle(region: usize, grid: &BeamGrid) -> Result<f64> {
    grid.validate()?;
    if region >= grid.num_regions {
        return Err(Error::input(format!(
            "region {region} out of range for {} regions",
            grid.num_regions
        )));
    }
    Ok(-grid.field_of_view_deg / 2.0 + (region as f64 + 0.5) * grid.region_width_deg() + grid.orientation_offset_deg)
}

/// Expected plane-wave phase difference `∠y_i − ∠y_j` (radians, unwrapped)
/// of the pair `(i, j)` for a source at `theta_deg`, one value per frequency.
pub fn pair_phase_delta(
    geom: &ArrayGeometry,
    pair: (usize, usize),
    theta_deg: f64,
    freqs_hz: &[f64],
) -> Result<Vec<f64>> {
    let (i, j) = pair;
    if i == j {
        return Err(Error::input(format!("pair ({i}, {j}) uses the same microphone twice")));
    }
    geom.check_mic(i)?;
    geom.check_mic(j)?;
    if let Some(f) = freqs_hz.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
        return Err(Error::input(format!("frequency {f} must be non-negative and finite")));
    }
    let lag = geom.arrival_delay(j, theta_deg) - geom.arrival_delay(i, theta_deg);
    Ok(freqs_hz.iter().map(|f| 2.0 * PI * f * lag).collect())
}

/// Per-frame lip boxes as stored in ROI JSON files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiTrack {
    pub frame_width: u32,
    pub boxes: Vec<RoiBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub t: usize,
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl RoiTrack {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn rois(&self) -> impl Iterator<Item = LipRoi> + '_ {
        self.boxes.iter().map(|b| LipRoi {
            frame_width_px: self.frame_width,
            x_min: b.x_min,
            y_min: b.y_min,
            x_max: b.x_max,
            y_max: b.y_max,
        })
    }

    /// Region id of every frame, in file order.
    pub fn frame_regions(&self, grid: &BeamGrid) -> Result<Vec<usize>> {
        self.rois().map(|roi| region_of_roi(&roi, grid)).collect()
    }
}

/// Most frequent region id; ties go to the lowest index.
pub fn majority_region(regions: &[usize]) -> Option<usize> {
    let mut counts = BTreeMap::new();
    for &r in regions {
        *counts.entry(r).or_insert(0usize) += 1;
    }
    let mut best: Option<(usize, usize)> = None;
    for (region, count) in counts {
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((region, count));
        }
    }
    best.map(|(r, _)| r)
}
