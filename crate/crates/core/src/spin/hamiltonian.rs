use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix9 = SMatrix<Complex64, 9, 9>;

/// Constants of the ground-state Hamiltonian.
///
/// `d_mhz` and `gamma_e_mhz_per_g` default to the usual NV values. The
/// hyperfine, quadrupole and nuclear Zeeman defaults are literature values
/// for 14N and are only needed for triplet-resolved spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinParams {
    pub d_mhz: f64,
    /// `g_e mu_B / h` (MHz/G).
    pub gamma_e_mhz_per_g: f64,
    pub a_par_mhz: f64,
    pub a_perp_mhz: f64,
    pub q_mhz: f64,
    /// `g_N mu_N / h` (MHz/G), entering as `+gamma_n B.I`.
    pub gamma_n_mhz_per_g: f64,
}

impl Default for SpinParams {
    fn default() -> Self {
        Self {
            d_mhz: 2870.0,
            gamma_e_mhz_per_g: 2.8025,
            a_par_mhz: -2.14,
            a_perp_mhz: -2.70,
            q_mhz: -4.945,
            gamma_n_mhz_per_g: 3.0777e-4,
        }
    }
}

impl SpinParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_mhz > 0.0 && self.d_mhz.is_finite()) {
            return Err(Error::InvalidParameter(format!("D must be positive, got {}", self.d_mhz)));
        }
        if !(self.gamma_e_mhz_per_g > 0.0 && self.gamma_e_mhz_per_g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma_e must be positive, got {}",
                self.gamma_e_mhz_per_g
            )));
        }
        let rest = [self.a_par_mhz, self.a_perp_mhz, self.q_mhz, self.gamma_n_mhz_per_g];
        if !rest.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("hyperfine constants must be finite".into()));
        }
        Ok(())
    }

    /// Same constants with the nuclear spin switched off.
    pub fn electron_only(&self) -> Self {
        Self {
            a_par_mhz: 0.0,
            a_perp_mhz: 0.0,
            q_mhz: 0.0,
            gamma_n_mhz_per_g: 0.0,
            ..self.clone()
        }
    }
}

/// The two `m_I = 0` transition frequencies, `omega1 <= omega2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionPair {
    pub omega1: f64,
    pub omega2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl TransitionPair {
    pub fn new(a: f64, b: f64) -> Self {
        Self::with_sigmas(a, 0.0, b, 0.0)
    }

    pub fn with_sigmas(a: f64, sigma_a: f64, b: f64, sigma_b: f64) -> Self {
        if a <= b {
            Self { omega1: a, omega2: b, sigma1: sigma_a, sigma2: sigma_b }
        } else {
            Self { omega1: b, omega2: a, sigma1: sigma_b, sigma2: sigma_a }
        }
    }
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Spin-1 operators `(Sx, Sy, Sz)` in the basis {+1, 0, -1}.
fn spin_one() -> [Matrix3<Complex64>; 3] {
    let z = c(0.0);
    let s = c(SQRT_HALF);
    let i = Complex64::new(0.0, SQRT_HALF);
    let sx = Matrix3::new(z, s, z, s, z, s, z, s, z);
    let sy = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    let sz = Matrix3::new(c(1.0), z, z, z, z, z, z, z, c(-1.0));
    [sx, sy, sz]
}

/// `D Sz^2 + gamma_e (B_par Sz + B_perp Sx)`, basis {+1, 0, -1}.
pub fn electron_hamiltonian(b_par: f64, b_perp: f64, params: &SpinParams) -> Matrix3<f64> {
    let g = params.gamma_e_mhz_per_g;
    let d = params.d_mhz;
    let zpar = g * b_par;
    let off = g * b_perp * SQRT_HALF;
    Matrix3::new(
        d + zpar, off, 0.0, //
        off, 0.0, off, //
        0.0, off, d - zpar,
    )
}

/// Transition frequencies from the `m_s = 0`-like level to the two others
/// for a field of magnitude `b` at angle `alpha` to the NV axis.
pub fn transition_frequencies(b: f64, alpha: f64, params: &SpinParams) -> TransitionPair {
    let (s, c) = alpha.sin_cos();
    let h = electron_hamiltonian(b * c, b * s.abs(), params);
    let eig = SymmetricEigen::new(h);
    let ground = (0..3)
        .max_by(|&a, &b| {
            eig.eigenvectors[(1, a)]
                .abs()
                .total_cmp(&eig.eigenvectors[(1, b)].abs())
                .then(b.cmp(&a))
        })
        .unwrap_or(0);
    let e0 = eig.eigenvalues[ground];
    let mut others = (0..3)
        .filter(|&k| k != ground)
        .map(|k| eig.eigenvalues[k] - e0);
    let w1 = others.next().unwrap_or(0.0);
    let w2 = others.next().unwrap_or(0.0);
    TransitionPair::new(w1, w2)
}

fn kron(a: &Matrix3<Complex64>, b: &Matrix3<Complex64>) -> Matrix9 {
    let mut out = Matrix9::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let aij = a[(i, j)];
            if aij == c(0.0) {
                continue;
            }
            for k in 0..3 {
                for l in 0..3 {
                    out[(3 * i + k, 3 * j + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Electron (S = 1) times 14N (I = 1) Hamiltonian; index `3 * ms + mi` with
/// both factors in the basis {+1, 0, -1}. `b_nv` is the field in the NV frame
/// (z along the axis), in gauss.
pub fn full_hamiltonian(b_nv: &Vector3<f64>, params: &SpinParams) -> Matrix9 {
    let [sx, sy, sz] = spin_one();
    let one = Matrix3::<Complex64>::identity();
    let ge = params.gamma_e_mhz_per_g;
    let gn = params.gamma_n_mhz_per_g;

    let electron = sz * sz * c(params.d_mhz) + (sx * c(b_nv.x) + sy * c(b_nv.y) + sz * c(b_nv.z)) * c(ge);
    let nuclear = sz * sz * c(params.q_mhz) + (sx * c(b_nv.x) + sy * c(b_nv.y) + sz * c(b_nv.z)) * c(gn);

    kron(&electron, &one)
        + kron(&one, &nuclear)
        + (kron(&sx, &sx) + kron(&sy, &sy)) * c(params.a_perp_mhz)
        + kron(&sz, &sz) * c(params.a_par_mhz)
}

/// One allowed `m_s = 0 -> +-1` line of the hyperfine-resolved spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub frequency: f64,
    /// -1 for the lower branch, +1 for the upper one.
    pub branch: i8,
    /// Microwave coupling `|<f|Sx|i>|^2 + |<f|Sy|i>|^2`.
    pub strength: f64,
}

/// The six nuclear-spin-conserving transitions, sorted by frequency.
///
/// The three eigenstates with the largest `m_s = 0` weight form the lower
/// manifold; each remaining state is paired with the lower state it couples
/// to most strongly under a transverse microwave drive.
pub fn hyperfine_transitions(b_nv: &Vector3<f64>, params: &SpinParams) -> Vec<Transition> {
    let h = full_hamiltonian(b_nv, params);
    let eig = SymmetricEigen::new(h);
    let vecs = &eig.eigenvectors;
    let zero_weight = |k: usize| (3..6).map(|r| vecs[(r, k)].norm_sqr()).sum::<f64>();

    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| zero_weight(b).total_cmp(&zero_weight(a)).then(a.cmp(&b)));
    let (lower, upper) = order.split_at(3);

    let [sx, sy, _] = spin_one();
    let one = Matrix3::<Complex64>::identity();
    let drive_x = kron(&sx, &one);
    let drive_y = kron(&sy, &one);

    let mut lines: Vec<Transition> = upper
        .iter()
        .map(|&f| {
            let vf = vecs.column(f);
            let (i, strength) = lower
                .iter()
                .map(|&i| {
                    let vi = vecs.column(i);
                    let mx = vf.dotc(&(drive_x * vi));
                    let my = vf.dotc(&(drive_y * vi));
                    (i, mx.norm_sqr() + my.norm_sqr())
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("three lower states");
            Transition {
                frequency: eig.eigenvalues[f] - eig.eigenvalues[i],
                branch: 0,
                strength,
            }
        })
        .collect();
    lines.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    for (k, line) in lines.iter_mut().enumerate() {
        line.branch = if k < 3 { -1 } else { 1 };
    }
    lines
}
