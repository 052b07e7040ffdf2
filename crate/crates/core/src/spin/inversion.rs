use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{hyperfine_transitions, transition_frequencies, SpinParams, TransitionPair};
use crate::error::{Error, Result};

/// Relative tolerance for slightly negative or out-of-range radicands.
const RADICAND_TOLERANCE: f64 = 1e-9;
/// Below this relative size the field is treated as zero.
const ZERO_FIELD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldEstimate {
    pub b_gauss: f64,
    pub b_sigma: f64,
    /// `[alpha, pi - alpha]` with `alpha <= pi/2` (rad).
    pub alpha_candidates: [f64; 2],
    pub alpha_sigma: f64,
}

// The closed forms are evaluated in terms of u = omega1 - D, v = omega2 - D,
// which avoids cancelling O(D^2) terms for weak fields:
//   omega1^2 - omega1 omega2 + omega2^2 - D^2 = u^2 - u v + v^2 + D (u + v)
//   (2 omega1 - omega2 - D)(omega1 - 2 omega2 + D)(omega1 + omega2 + D)
//       = (2u - v)(u - 2v)(u + v + 3D)
fn shifted(pair: &TransitionPair, d: f64) -> (f64, f64, f64, f64) {
    let u = pair.omega1 - d;
    let v = pair.omega2 - d;
    let radicand = u * u - u * v + v * v + d * (u + v);
    let scale = d * d + pair.omega1 * pair.omega1 + pair.omega2 * pair.omega2;
    (u, v, radicand, scale)
}

/// `|B| = sqrt((w1^2 + w2^2 - w1 w2 - D^2) / 3) / gamma_e`.
pub fn invert_magnitude(pair: &TransitionPair, d: f64, gamma_e: f64) -> Result<f64> {
    let (_, _, radicand, scale) = shifted(pair, d);
    if radicand < -RADICAND_TOLERANCE * scale {
        return Err(Error::InconsistentFrequencies(format!(
            "magnitude radicand {radicand:e} MHz^2 is negative"
        )));
    }
    Ok((radicand.max(0.0) / 3.0).sqrt() / gamma_e)
}

fn cos_squared(pair: &TransitionPair, d: f64) -> Result<f64> {
    let (u, v, radicand, scale) = shifted(pair, d);
    if radicand < -RADICAND_TOLERANCE * scale {
        return Err(Error::InconsistentFrequencies(format!(
            "magnitude radicand {radicand:e} MHz^2 is negative"
        )));
    }
    if radicand <= ZERO_FIELD_TOLERANCE * scale {
        return Err(Error::DegenerateField);
    }
    Ok((2.0 * u - v) * (u - 2.0 * v) * (u + v + 3.0 * d) / (9.0 * d * radicand))
}

fn alphas_from(cos_sq: f64, slack: f64) -> Result<[f64; 2]> {
    if !(-slack..=1.0 + slack).contains(&cos_sq) {
        return Err(Error::InconsistentFrequencies(format!(
            "cos^2(alpha) = {cos_sq} lies outside [0, 1]"
        )));
    }
    let alpha = cos_sq.clamp(0.0, 1.0).sqrt().acos();
    Ok([alpha, PI - alpha])
}

/// Both cone angles `{alpha, pi - alpha}` consistent with the pair.
pub fn invert_polar_angle(pair: &TransitionPair, d: f64) -> Result<[f64; 2]> {
    alphas_from(cos_squared(pair, d)?, RADICAND_TOLERANCE)
}

/// Magnitude and cone angle with first-order error propagation from the
/// pair's sigmas. `cos^2(alpha)` may overshoot `[0, 1]` by up to three of
/// its propagated sigmas before the pair is rejected; it is then clamped.
pub fn estimate_field(pair: &TransitionPair, params: &SpinParams) -> Result<FieldEstimate> {
    params.validate()?;
    let d = params.d_mhz;
    let gamma = params.gamma_e_mhz_per_g;
    let b = invert_magnitude(pair, d, gamma)?;

    // dB/dw = (2 w_i - w_j) / (6 gamma^2 B)
    let b_sigma = if b > 0.0 {
        let d1 = (2.0 * pair.omega1 - pair.omega2) / (6.0 * gamma * gamma * b);
        let d2 = (2.0 * pair.omega2 - pair.omega1) / (6.0 * gamma * gamma * b);
        ((d1 * pair.sigma1).powi(2) + (d2 * pair.sigma2).powi(2)).sqrt()
    } else {
        0.0
    };

    let c = cos_squared(pair, d)?;
    let c_at = |w1: f64, w2: f64| {
        let p = TransitionPair { omega1: w1, omega2: w2, sigma1: 0.0, sigma2: 0.0 };
        cos_squared(&p, d).unwrap_or(c)
    };
    let h = 1e-4;
    let (w1, w2) = (pair.omega1, pair.omega2);
    let dc1 = (c_at(w1 + h, w2) - c_at(w1 - h, w2)) / (2.0 * h);
    let dc2 = (c_at(w1, w2 + h) - c_at(w1, w2 - h)) / (2.0 * h);
    let c_sigma = ((dc1 * pair.sigma1).powi(2) + (dc2 * pair.sigma2).powi(2)).sqrt();
    let alphas = alphas_from(c, RADICAND_TOLERANCE.max(3.0 * c_sigma))?;

    // larger one-sigma excursion; finite at the ends of [0, 1]
    let alpha_of = |c: f64| c.clamp(0.0, 1.0).sqrt().acos();
    let alpha_sigma = (alpha_of(c + c_sigma) - alphas[0])
        .abs()
        .max((alpha_of(c - c_sigma) - alphas[0]).abs());

    Ok(FieldEstimate {
        b_gauss: b,
        b_sigma,
        alpha_candidates: alphas,
        alpha_sigma,
    })
}

const HYPERFINE_ITERATIONS: usize = 8;

/// Shift of the two `m_I = 0` lines of the full Hamiltonian relative to the
/// bare electron transitions. The shift is the same for `alpha` and
/// `pi - alpha`. `None` when the two triplets of the model interleave.
fn mi_zero_shift(b: f64, alpha: f64, params: &SpinParams) -> Option<(f64, f64)> {
    let b_nv = Vector3::new(b * alpha.sin(), 0.0, b * alpha.cos());
    let lines = hyperfine_transitions(&b_nv, params);
    let gap = lines[3].frequency - lines[2].frequency;
    if !(gap > params.a_par_mhz.abs()) {
        return None;
    }
    let bare = transition_frequencies(b, alpha, params);
    Some((lines[1].frequency - bare.omega1, lines[4].frequency - bare.omega2))
}

/// [`estimate_field`] for measured `m_I = 0` lines: the small hyperfine and
/// quadrupole shifts of those lines are removed by fixed-point iteration
/// against the full Hamiltonian before inverting. Falls back to the plain
/// inversion when the triplets are not resolved.
pub fn estimate_field_hyperfine(pair: &TransitionPair, params: &SpinParams) -> Result<FieldEstimate> {
    let mut est = estimate_field(pair, params)?;
    if *params == params.electron_only() {
        return Ok(est);
    }
    for _ in 0..HYPERFINE_ITERATIONS {
        let Some((s1, s2)) = mi_zero_shift(est.b_gauss, est.alpha_candidates[0], params) else {
            break;
        };
        let corrected = TransitionPair {
            omega1: pair.omega1 - s1,
            omega2: pair.omega2 - s2,
            ..*pair
        };
        let next = estimate_field(&corrected, params)?;
        let settled = (next.b_gauss - est.b_gauss).abs() <= 1e-12 * est.b_gauss.max(1.0)
            && (next.alpha_candidates[0] - est.alpha_candidates[0]).abs() <= 1e-12;
        est = next;
        if settled {
            break;
        }
    }
    Ok(est)
}
