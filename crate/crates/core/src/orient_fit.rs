//! Orientation fitting of scan patterns by multi-start Nelder-Mead.
//!
//! The fitted axis is only defined up to two symmetries of the pattern model:
//! the axis and its negation give identical patterns, and so do azimuths
//! `phi` and `phi + pi`. Results are therefore canonicalized to
//! `theta in [0, pi/2]`, `phi in [0, pi)`, with the partner azimuth reported
//! alongside.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::focal_field::{FocalField, OpticalConfig};
use crate::pattern::{wrap_angle, NVOrientation, ScanImage};
use crate::simplex::{nelder_mead_with_steps, SimplexSettings};

pub use crate::simplex::{nelder_mead, NelderMeadResult};

/// Below this polar angle the azimuth is reported as unidentifiable.
pub const PHI_IDENTIFIABLE_MIN_THETA: f64 = 5.0 * PI / 180.0;

const PROFILE_STEP_NM: f64 = 0.5;
const DEGENERATE_PENALTY: f64 = 10.0;

/// `|E_phi(rho, 0)|^2` tabulated on a uniform radial grid and interpolated
/// with 4-point Lagrange polynomials. The angle-dependent part of the
/// template is cheap, so the fit loop only needs this table.
#[derive(Debug, Clone)]
pub struct FocalProfile {
    field: FocalField,
    step: f64,
    table: Vec<f64>,
}

impl FocalProfile {
    pub fn new(optics: &OpticalConfig, max_radius_nm: f64) -> Result<Self> {
        let field = FocalField::new(optics)?;
        let step = PROFILE_STEP_NM;
        let count = (max_radius_nm.max(0.0) / step).ceil() as usize + 4;
        let table = (0..count)
            .into_par_iter()
            .map(|k| field.azimuthal(k as f64 * step, 0.0).map(|e| e.norm_sqr()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { field, step, table })
    }

    /// Profile covering every pixel of `image` for NV positions up to
    /// `margin_nm` away from the grid.
    pub fn for_image(optics: &OpticalConfig, image: &ScanImage, margin_nm: f64) -> Result<Self> {
        let reach = image.grid.max_distance_from(image.grid.center());
        Self::new(optics, 2.0 * reach + margin_nm)
    }

    pub fn intensity(&self, rho: f64) -> f64 {
        let x = rho / self.step;
        let k = x.floor() as usize;
        if k + 2 >= self.table.len() {
            return self.field.azimuthal_refined(rho, 0.0).norm_sqr();
        }
        if k == 0 {
            // |E|^2 is even in rho, so mirror the first sample
            let t = x;
            let (ym1, y0, y1, y2) = (self.table[1], self.table[0], self.table[1], self.table[2]);
            return lagrange4(ym1, y0, y1, y2, t);
        }
        let t = x - k as f64;
        lagrange4(self.table[k - 1], self.table[k], self.table[k + 1], self.table[k + 2], t)
    }
}

/// Cubic through samples at -1, 0, 1, 2 evaluated at `t` in [0, 1].
fn lagrange4(ym1: f64, y0: f64, y1: f64, y2: f64, t: f64) -> f64 {
    let a = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let b = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let c = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let d = (t + 1.0) * t * (t - 1.0) / 6.0;
    a * ym1 + b * y0 + c * y1 + d * y2
}

/// Noiseless unit-amplitude template on the image grid.
pub fn template(axis: &Vector3<f64>, center: [f64; 2], image: &ScanImage, profile: &FocalProfile) -> Vec<f64> {
    let g = &image.grid;
    let mut out = Vec::with_capacity(g.len());
    for j in 0..g.height_px {
        let dy = g.position(0, j)[1] - center[1];
        for i in 0..g.width_px {
            let dx = g.position(i, j)[0] - center[0];
            let rho2 = dx * dx + dy * dy;
            if rho2 == 0.0 {
                out.push(0.0);
                continue;
            }
            let rho = rho2.sqrt();
            let c = -dy * axis.x + dx * axis.y;
            out.push(profile.intensity(rho) * (1.0 - c * c / rho2).max(0.0));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualFit {
    /// `SSE / sum((data - mean)^2)`.
    pub residual: f64,
    pub amplitude: f64,
    pub background: f64,
}

/// Best linear scaling `data ~ a * T + b` of the template, with `a, b >= 0`.
pub fn pattern_residual(
    theta: f64,
    phi: f64,
    center: [f64; 2],
    image: &ScanImage,
    profile: &FocalProfile,
) -> Result<ResidualFit> {
    let axis = NVOrientation { theta, phi }.axis();
    let t = template(&axis, center, image, profile);
    linear_fit(&t, &image.values)
}

fn linear_fit(t: &[f64], d: &[f64]) -> Result<ResidualFit> {
    let n = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / n;
    let d_mean = d.iter().sum::<f64>() / n;
    let (mut stt, mut std, mut sdd) = (0.0, 0.0, 0.0);
    for (ti, di) in t.iter().zip(d) {
        let a = ti - t_mean;
        let b = di - d_mean;
        stt += a * a;
        std += a * b;
        sdd += b * b;
    }
    if sdd == 0.0 {
        return Err(Error::DegenerateImage);
    }
    let t_scale = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if stt <= 1e-24 * t_scale * t_scale * n || stt == 0.0 {
        return Err(Error::DegenerateTemplate);
    }
    let mut amplitude = (std / stt).max(0.0);
    let mut background = d_mean - amplitude * t_mean;
    if background < 0.0 {
        background = 0.0;
        let tt: f64 = t.iter().map(|v| v * v).sum();
        let td: f64 = t.iter().zip(d).map(|(a, b)| a * b).sum();
        amplitude = (td / tt).max(0.0);
    }
    let sse: f64 = t
        .iter()
        .zip(d)
        .map(|(ti, di)| (di - amplitude * ti - background).powi(2))
        .sum();
    Ok(ResidualFit {
        residual: sse / sdd,
        amplitude,
        background,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrientationFit {
    /// Polar angle in [0, pi/2] (rad).
    pub theta: f64,
    /// Azimuth in [0, pi) (rad).
    pub phi: f64,
    /// The indistinguishable partner azimuth, `phi + pi`.
    pub mirror_phi: f64,
    /// Fitted NV position (nm).
    pub center_nm: [f64; 2],
    pub amplitude: f64,
    pub background: f64,
    pub residual: f64,
    pub n_starts_used: usize,
    pub converged: bool,
    pub phi_identifiable: bool,
    pub iterations: usize,
}

impl OrientationFit {
    pub fn orientation(&self) -> NVOrientation {
        NVOrientation {
            theta: self.theta,
            phi: self.phi,
        }
    }

    pub fn mirror_orientation(&self) -> NVOrientation {
        NVOrientation {
            theta: self.theta,
            phi: self.mirror_phi,
        }
    }
}

/// Folds `(theta, phi)` into `theta in [0, pi/2]`, `phi in [0, pi)`.
pub fn canonicalize(theta: f64, phi: f64) -> (f64, f64) {
    let mut axis = NVOrientation {
        theta,
        phi: wrap_angle(phi),
    }
    .axis();
    if axis.z < 0.0 {
        axis = -axis;
    }
    let o = NVOrientation::from_vector(&axis);
    let mut p = o.phi;
    if p >= PI {
        p -= PI;
    }
    if p >= PI {
        p = 0.0;
    }
    (o.theta.min(FRAC_PI_2), p)
}

/// Angle (rad) between two NV axes modulo axis negation and the 180-degree
/// azimuth ambiguity.
pub fn ambiguity_distance(a: &NVOrientation, b: &NVOrientation) -> f64 {
    let u = a.axis();
    let v = b.axis();
    let v_rot = Vector3::new(-v.x, -v.y, v.z);
    let line = |x: &Vector3<f64>| x.cross(&u).norm().atan2(x.dot(&u).abs());
    line(&v).min(line(&v_rot))
}

#[derive(Debug, Clone)]
struct StartOutcome {
    params: Vec<f64>,
    residual: f64,
    converged: bool,
    iterations: usize,
    start_residual: f64,
}

pub fn fit_orientation(
    image: &ScanImage,
    optics: &OpticalConfig,
    n_starts: usize,
    seed: u64,
    settings: &SimplexSettings,
) -> Result<OrientationFit> {
    if n_starts == 0 {
        return Err(Error::InvalidParameter("n_starts must be at least 1".into()));
    }
    settings.validate()?;
    let grid = &image.grid;
    let pitch = grid.pitch_nm;
    let profile = FocalProfile::for_image(optics, image, 8.0 * pitch)?;
    let grid_center = grid.center();
    let centroid = image.centroid();
    let centroid_px = [
        (centroid[0] - grid_center[0]) / pitch,
        (centroid[1] - grid_center[1]) / pitch,
    ];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<[f64; 4]> = (0..n_starts)
        .map(|_| {
            [
                rng.random_range(0.0..FRAC_PI_2),
                rng.random_range(0.0..PI),
                centroid_px[0] + rng.random_range(-2.0..2.0),
                centroid_px[1] + rng.random_range(-2.0..2.0),
            ]
        })
        .collect();

    let objective = |x: &[f64]| -> f64 {
        let center = [grid_center[0] + x[2] * pitch, grid_center[1] + x[3] * pitch];
        match pattern_residual(x[0], x[1], center, image, &profile) {
            Ok(fit) => fit.residual,
            Err(_) => DEGENERATE_PENALTY,
        }
    };

    let steps = [0.25, 0.25, 1.0, 1.0];
    let outcomes = starts
        .par_iter()
        .map(|start| {
            let start_residual = objective(start);
            let r = nelder_mead_with_steps(objective, start, &steps, settings)?;
            Ok(StartOutcome {
                params: r.argmin,
                residual: r.value,
                converged: r.converged,
                iterations: r.iterations,
                start_residual,
            })
        })
        .collect::<Result<Vec<StartOutcome>>>()?;

    if !outcomes.iter().any(|o| o.converged) {
        return Err(Error::NoConvergence(n_starts));
    }
    // first index wins ties
    let best = outcomes
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| a.residual.total_cmp(&b.residual).then(ia.cmp(ib)))
        .map(|(_, o)| o)
        .ok_or(Error::NoConvergence(n_starts))?;
    debug_assert!(outcomes.iter().all(|o| best.residual <= o.start_residual));

    let p = &best.params;
    let center = [grid_center[0] + p[2] * pitch, grid_center[1] + p[3] * pitch];
    let scaling = pattern_residual(p[0], p[1], center, image, &profile)?;
    let (theta, phi) = canonicalize(p[0], p[1]);
    Ok(OrientationFit {
        theta,
        phi,
        mirror_phi: phi + PI,
        center_nm: center,
        amplitude: scaling.amplitude,
        background: scaling.background,
        residual: best.residual,
        n_starts_used: n_starts,
        converged: best.converged,
        phi_identifiable: theta >= PHI_IDENTIFIABLE_MIN_THETA,
        iterations: best.iterations,
    })
}
