//! Confocal fluorescence patterns of a single NV center scanned through the
//! azimuthally polarized focus.
//!
//! Image coordinates are beam displacements: pixel `(i, j)` holds the signal
//! recorded with the beam axis at `origin + pitch * (i, j)`. A sample-scanning
//! stage records the mirror image of this (x -> -x, y -> -y about the NV),
//! which for this model is the identity, since the pattern is centrosymmetric.

use std::f64::consts::{PI, TAU};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal_field::{FocalField, OpticalConfig};

/// Upper bound on `width * height`.
pub const MAX_PIXELS: usize = 4096 * 4096;

const UNIT_TOLERANCE: f64 = 1e-9;

/// Direction of the N->V axis in the laboratory frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NVOrientation {
    /// Polar angle from lab z (rad), in [0, pi].
    pub theta: f64,
    /// Azimuth in the lab x-y plane (rad), in [0, 2pi).
    pub phi: f64,
}

impl NVOrientation {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::InvalidParameter("orientation angles must be finite".into()));
        }
        if !(0.0..=PI).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "polar angle must lie in [0, pi], got {theta}"
            )));
        }
        Ok(Self {
            theta,
            phi: wrap_angle(phi),
        })
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Result<Self> {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// Orientation of a (not necessarily normalized) direction vector.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self {
            theta: v.x.hypot(v.y).atan2(v.z),
            phi: wrap_angle(v.y.atan2(v.x)),
        }
    }

    pub fn axis(&self) -> Vector3<f64> {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    pub fn degrees(&self) -> (f64, f64) {
        (self.theta.to_degrees(), self.phi.to_degrees())
    }
}

/// Wraps an angle into [0, 2pi).
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub width_px: usize,
    pub height_px: usize,
    /// nm per pixel.
    pub pitch_nm: f64,
    /// Physical position of pixel (0, 0), nm.
    pub origin_nm: [f64; 2],
}

impl ScanGrid {
    pub fn new(width_px: usize, height_px: usize, pitch_nm: f64, origin_nm: [f64; 2]) -> Result<Self> {
        let grid = Self {
            width_px,
            height_px,
            pitch_nm,
            origin_nm,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Grid of the given size whose center pixel sits at the physical origin.
    pub fn centered(width_px: usize, height_px: usize, pitch_nm: f64) -> Result<Self> {
        let ox = -0.5 * (width_px as f64 - 1.0) * pitch_nm;
        let oy = -0.5 * (height_px as f64 - 1.0) * pitch_nm;
        Self::new(width_px, height_px, pitch_nm, [ox, oy])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::InvalidGrid("grid dimensions must be positive".into()));
        }
        if self.width_px.saturating_mul(self.height_px) > MAX_PIXELS {
            return Err(Error::InvalidGrid(format!(
                "{}x{} exceeds the {MAX_PIXELS}-pixel limit",
                self.width_px, self.height_px
            )));
        }
        if !(self.pitch_nm.is_finite() && self.pitch_nm > 0.0) {
            return Err(Error::InvalidGrid(format!("pitch must be positive, got {}", self.pitch_nm)));
        }
        if !self.origin_nm.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width_px * self.height_px
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin_nm[0] + i as f64 * self.pitch_nm,
            self.origin_nm[1] + j as f64 * self.pitch_nm,
        ]
    }

    /// Physical position of the geometric center of the grid.
    pub fn center(&self) -> [f64; 2] {
        [
            self.origin_nm[0] + 0.5 * (self.width_px as f64 - 1.0) * self.pitch_nm,
            self.origin_nm[1] + 0.5 * (self.height_px as f64 - 1.0) * self.pitch_nm,
        ]
    }

    /// Largest distance from `point` to any pixel.
    pub fn max_distance_from(&self, point: [f64; 2]) -> f64 {
        let corners = [
            self.position(0, 0),
            self.position(self.width_px - 1, 0),
            self.position(0, self.height_px - 1),
            self.position(self.width_px - 1, self.height_px - 1),
        ];
        corners
            .iter()
            .map(|c| (c[0] - point[0]).hypot(c[1] - point[1]))
            .fold(0.0, f64::max)
    }
}

/// Row-major intensity grid; `values[j * width + i]` is pixel `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanImage {
    pub grid: ScanGrid,
    pub values: Vec<f64>,
}

impl ScanImage {
    pub fn new(grid: ScanGrid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "intensities must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.width_px + i]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Centroid of `value - min`, in physical coordinates.
    pub fn centroid(&self) -> [f64; 2] {
        let floor = self.min();
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for j in 0..self.grid.height_px {
            for i in 0..self.grid.width_px {
                let w = self.get(i, j) - floor;
                let p = self.grid.position(i, j);
                sx += w * p[0];
                sy += w * p[1];
                sw += w;
            }
        }
        if sw > 0.0 {
            [sx / sw, sy / sw]
        } else {
            self.grid.center()
        }
    }
}

/// Sum of squared projections of `azimuthal_dir` onto the two excitation
/// dipoles spanning the plane perpendicular to `axis`: `1 - (dir . axis)^2`.
pub fn dipole_projection_factor(axis: &Vector3<f64>, azimuthal_dir: &Vector3<f64>) -> Result<f64> {
    for v in [axis, azimuthal_dir] {
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NonUnitVector(n));
        }
    }
    let c = axis.dot(azimuthal_dir);
    Ok((1.0 - c * c).clamp(0.0, 1.0))
}

/// Noiseless intensity model for one NV at a fixed position.
#[derive(Debug, Clone)]
pub struct PatternModel {
    field: FocalField,
    axis: Vector3<f64>,
    nv_position: [f64; 2],
    amplitude: f64,
    background: f64,
}

impl PatternModel {
    pub fn new(
        orientation: NVOrientation,
        nv_position: [f64; 2],
        optics: &OpticalConfig,
        amplitude: f64,
        background: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!("amplitude must be >= 0, got {amplitude}")));
        }
        if !(background >= 0.0 && background.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "background must be >= 0, got {background}"
            )));
        }
        Ok(Self {
            field: FocalField::new(optics)?,
            axis: orientation.axis(),
            nv_position,
            amplitude,
            background,
        })
    }

    /// Intensity with the beam axis at physical position `beam`.
    pub fn intensity_at(&self, beam: [f64; 2]) -> Result<f64> {
        let dx = beam[0] - self.nv_position[0];
        let dy = beam[1] - self.nv_position[1];
        let rho = dx.hypot(dy);
        if rho == 0.0 || self.amplitude == 0.0 {
            return Ok(self.background);
        }
        let e = self.field.azimuthal(rho, 0.0)?;
        let dir = Vector3::new(-dy / rho, dx / rho, 0.0);
        let c = self.axis.dot(&dir);
        let projection = (1.0 - c * c).max(0.0);
        Ok(self.background + self.amplitude * e.norm_sqr() * projection)
    }

    pub fn render(&self, grid: &ScanGrid, noise_seed: Option<u64>) -> Result<ScanImage> {
        grid.validate()?;
        let width = grid.width_px;
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let mean = self.intensity_at(grid.position(idx % width, idx / width))?;
                Ok(match noise_seed {
                    Some(seed) => poisson_draw(mean, seed, idx as u64),
                    None => mean,
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        ScanImage::new(grid.clone(), values)
    }
}

/// Poisson sample whose stream depends only on `(seed, index)`.
fn poisson_draw(mean: f64, seed: u64, index: u64) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    // mean > 0 and finite, so construction cannot fail
    Poisson::new(mean).map(|d| d.sample(&mut rng)).unwrap_or(mean)
}

/// Pattern of an NV at the grid center.
pub fn simulate_pattern(
    orientation: NVOrientation,
    grid: &ScanGrid,
    optics: &OpticalConfig,
    amplitude: f64,
    background: f64,
    noise_seed: Option<u64>,
) -> Result<ScanImage> {
    simulate_pattern_at(orientation, grid.center(), grid, optics, amplitude, background, noise_seed)
}

pub fn simulate_pattern_at(
    orientation: NVOrientation,
    nv_position: [f64; 2],
    grid: &ScanGrid,
    optics: &OpticalConfig,
    amplitude: f64,
    background: f64,
    noise_seed: Option<u64>,
) -> Result<ScanImage> {
    PatternModel::new(orientation, nv_position, optics, amplitude, background)?.render(grid, noise_seed)
}
