//! Focal field of a tightly focused azimuthally polarized beam.
//!
//! The field behind an aplanatic objective is purely transverse and purely
//! azimuthal:
//!
//! `E_phi(r, z) = 2A * int_0^amax sqrt(cos t) sin t J1(k r sin t) exp(i k z cos t) dt`
//!
//! with `amax = asin(NA / n)` and `k = 2 pi n / lambda_vacuum`. Lengths are in
//! nanometres throughout.

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bessel::j1;
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

pub type ComplexAmplitude = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConfig {
    /// Vacuum wavelength of the excitation light (nm).
    pub wavelength_nm: f64,
    pub numerical_aperture: f64,
    pub immersion_index: f64,
    /// Field strength at the pupil, the prefactor `A`.
    pub pupil_amplitude: f64,
    pub quadrature_nodes: usize,
    /// Largest relative change tolerated when the node count is doubled.
    pub convergence_tolerance: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            wavelength_nm: 532.0,
            numerical_aperture: 1.40,
            immersion_index: 1.518,
            pupil_amplitude: 1.0,
            quadrature_nodes: 64,
            convergence_tolerance: 1e-8,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidOptics(msg));
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return bad(format!("wavelength must be positive, got {}", self.wavelength_nm));
        }
        if !(self.numerical_aperture > 0.0) {
            return bad(format!(
                "numerical aperture must be positive, got {}",
                self.numerical_aperture
            ));
        }
        if !(self.numerical_aperture < self.immersion_index) {
            return bad(format!(
                "numerical aperture {} must be below the immersion index {}",
                self.numerical_aperture, self.immersion_index
            ));
        }
        if !self.pupil_amplitude.is_finite() {
            return bad("pupil amplitude must be finite".into());
        }
        if self.quadrature_nodes < 8 {
            return bad(format!(
                "at least 8 quadrature nodes required, got {}",
                self.quadrature_nodes
            ));
        }
        if !(self.convergence_tolerance > 0.0) {
            return bad("convergence tolerance must be positive".into());
        }
        Ok(())
    }

    /// Wave number in the immersion medium (rad/nm).
    pub fn wave_number(&self) -> f64 {
        2.0 * PI * self.immersion_index / self.wavelength_nm
    }
}

/// Half-angle of the collected cone, `asin(NA / n)`.
pub fn max_aperture_angle(config: &OpticalConfig) -> Result<f64> {
    config.validate()?;
    Ok((config.numerical_aperture / config.immersion_index).asin())
}

/// Precomputed integrand factors for one rule.
#[derive(Debug, Clone)]
struct Rule {
    // weight * 2A * sqrt(cos t) * sin t
    scale: Vec<f64>,
    sin_t: Vec<f64>,
    cos_t: Vec<f64>,
}

impl Rule {
    fn new(nodes: usize, aperture: f64, amplitude: f64) -> Self {
        let gl = GaussLegendre::new(nodes);
        let mut scale = Vec::with_capacity(nodes);
        let mut sin_t = Vec::with_capacity(nodes);
        let mut cos_t = Vec::with_capacity(nodes);
        for (t, w) in gl.mapped(0.0, aperture) {
            let (s, c) = t.sin_cos();
            scale.push(2.0 * amplitude * w * c.sqrt() * s);
            sin_t.push(s);
            cos_t.push(c);
        }
        Self {
            scale,
            sin_t,
            cos_t,
        }
    }

    fn eval(&self, k: f64, r: f64, z: f64) -> Complex64 {
        if r == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let mut re = 0.0;
        let mut im = 0.0;
        for i in 0..self.scale.len() {
            let radial = self.scale[i] * j1(k * r * self.sin_t[i]);
            if z == 0.0 {
                re += radial;
            } else {
                let (s, c) = (k * z * self.cos_t[i]).sin_cos();
                re += radial * c;
                im += radial * s;
            }
        }
        Complex64::new(re, im)
    }
}

/// Evaluator for `E_phi` with the node rule and its doubled rule cached.
#[derive(Debug, Clone)]
pub struct FocalField {
    config: OpticalConfig,
    k: f64,
    aperture: f64,
    base: Rule,
    doubled: Rule,
}

impl FocalField {
    pub fn new(config: &OpticalConfig) -> Result<Self> {
        let aperture = max_aperture_angle(config)?;
        let n = config.quadrature_nodes;
        Ok(Self {
            config: config.clone(),
            k: config.wave_number(),
            aperture,
            base: Rule::new(n, aperture, config.pupil_amplitude),
            doubled: Rule::new(2 * n, aperture, config.pupil_amplitude),
        })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    /// `E_phi(r, z)` with the configured node count, without the doubling check.
    pub fn azimuthal_unchecked(&self, r: f64, z: f64) -> ComplexAmplitude {
        self.base.eval(self.k, r, z)
    }

    /// `E_phi(r, z)` at the doubled node count.
    pub fn azimuthal_refined(&self, r: f64, z: f64) -> ComplexAmplitude {
        self.doubled.eval(self.k, r, z)
    }

    /// `E_phi(r, z)`, failing if doubling the node count moves the result by
    /// more than the configured relative tolerance.
    pub fn azimuthal(&self, r: f64, z: f64) -> Result<ComplexAmplitude> {
        let coarse = self.base.eval(self.k, r, z);
        let fine = self.doubled.eval(self.k, r, z);
        let change = doubling_change(coarse, fine, self.config.pupil_amplitude);
        if change > self.config.convergence_tolerance || !change.is_finite() {
            return Err(Error::QuadratureNotConverged { r, z, change });
        }
        Ok(coarse)
    }

    /// Field vector at `point` for a beam whose axis passes through
    /// `beam_center` and whose focal plane sits at `focus_z`.
    pub fn field_vector_at(
        &self,
        point: &Vector3<f64>,
        beam_center: &Vector2<f64>,
        focus_z: f64,
    ) -> Result<Vector3<Complex64>> {
        let dx = point.x - beam_center.x;
        let dy = point.y - beam_center.y;
        let rho = dx.hypot(dy);
        let zero = Complex64::new(0.0, 0.0);
        if rho == 0.0 {
            return Ok(Vector3::new(zero, zero, zero));
        }
        let e = self.azimuthal(rho, point.z - focus_z)?;
        Ok(Vector3::new(e * (-dy / rho), e * (dx / rho), zero))
    }
}

/// Relative change between two quadrature estimates. The floor keeps the
/// ratio meaningful where the field itself passes through zero.
pub(crate) fn doubling_change(coarse: Complex64, fine: Complex64, amplitude: f64) -> f64 {
    let floor = 1e-12 * amplitude.abs().max(f64::MIN_POSITIVE);
    (coarse - fine).norm() / fine.norm().max(floor)
}

/// One-shot evaluation of `E_phi(r, z)`.
pub fn azimuthal_field(r: f64, z: f64, config: &OpticalConfig) -> Result<ComplexAmplitude> {
    if !(r >= 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be >= 0, got {r}")));
    }
    FocalField::new(config)?.azimuthal(r, z)
}

/// One-shot evaluation of the azimuthally polarized field vector.
pub fn field_vector_at(
    point: &Vector3<f64>,
    beam_center: &Vector2<f64>,
    focus_z: f64,
    config: &OpticalConfig,
) -> Result<Vector3<Complex64>> {
    FocalField::new(config)?.field_vector_at(point, beam_center, focus_z)
}
