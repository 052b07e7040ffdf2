//! Field direction from the cones of several NV centers.
//!
//! Each NV constrains the field direction `b` to the cone `n_i . b = cos(alpha_i)`.
//! ODMR leaves `alpha_i` and `pi - alpha_i` indistinguishable, so every branch
//! combination is tried: a linear solve gives a seed, which is then refined on
//! the unit sphere. Flipping every branch at once maps a solution onto its
//! antipode with the same residual, so only combinations with the first
//! constraint on its given branch are searched and the antipode is reported
//! as the mirror solution.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::NVOrientation;
use crate::simplex::{nelder_mead_with_steps, SimplexSettings};

pub const MAX_CONSTRAINTS: usize = 6;
const TIE_TOLERANCE: f64 = 1e-20;

/// One NV's measurement: its axis, the cone angle and the field magnitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeConstraint {
    pub axis: NVOrientation,
    /// Angle between field and axis (rad), in [0, pi].
    pub alpha: f64,
    pub alpha_sigma: f64,
    pub b_gauss: f64,
    pub b_sigma: f64,
}

impl ConeConstraint {
    pub fn new(axis: NVOrientation, alpha: f64, b_gauss: f64) -> Self {
        Self {
            axis,
            alpha,
            alpha_sigma: 0.0,
            b_gauss,
            b_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=std::f64::consts::PI).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("cone angle {} outside [0, pi]", self.alpha)));
        }
        if !(self.b_gauss >= 0.0) || !(self.alpha_sigma >= 0.0) || !(self.b_sigma >= 0.0) {
            return Err(Error::InvalidParameter(
                "field magnitude and uncertainties must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconSettings {
    /// Largest accepted condition number of the axis Gram matrix.
    pub condition_bound: f64,
    /// Largest accepted sum of squared cosine residuals.
    pub residual_gate: f64,
    pub bootstrap_samples: usize,
    pub seed: u64,
}

impl Default for ReconSettings {
    fn default() -> Self {
        Self {
            condition_bound: 1e6,
            residual_gate: 0.1,
            bootstrap_samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    /// `true` where `pi - alpha` was used instead of `alpha`.
    pub flipped: Vec<bool>,
    pub direction: [f64; 3],
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldResult {
    pub direction: [f64; 3],
    pub theta_b: f64,
    pub phi_b: f64,
    /// The antipodal solution `-b`, indistinguishable by ODMR.
    pub mirror_theta: f64,
    pub mirror_phi: f64,
    pub b_mean: f64,
    pub b_std: f64,
    pub residual: f64,
    /// Per constraint, whether the solution sits on the `pi - alpha` branch.
    pub branch_choice: Vec<bool>,
    pub branches: Vec<BranchOutcome>,
    pub triangle: Option<TriangleDiagnostic>,
    /// RMS angular deviation (rad) over the parametric bootstrap; `None` when
    /// no cone angle carries an uncertainty.
    pub direction_sigma: Option<f64>,
}

impl VectorFieldResult {
    pub fn direction_vector(&self) -> Vector3<f64> {
        Vector3::from(self.direction)
    }
}

/// Angle between two vectors, accurate also for nearly parallel ones.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn cone_residual(axes: &[Vector3<f64>], cosines: &[f64], b: &Vector3<f64>) -> f64 {
    axes.iter().zip(cosines).map(|(n, c)| (n.dot(b) - c).powi(2)).sum()
}

/// Checks that the axes span 3-space well enough; returns the Gram condition number.
pub fn axis_condition(axes: &[Vector3<f64>]) -> f64 {
    let gram: Matrix3<f64> = axes.iter().map(|n| n * n.transpose()).sum();
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let max = eig.max();
    let min = eig.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Unit vector minimizing the cone residual for fixed cosines: linear seed,
/// then Nelder-Mead on the sphere in a frame where the seed sits on the equator.
fn solve_fixed_branch(axes: &[Vector3<f64>], cosines: &[f64]) -> Result<(Vector3<f64>, f64)> {
    let a = DMatrix::from_fn(axes.len(), 3, |i, j| axes[i][j]);
    let rhs = DVector::from_column_slice(cosines);
    let raw = if axes.len() == 3 {
        a.clone().lu().solve(&rhs)
    } else {
        a.clone().svd(true, true).solve(&rhs, 1e-14).ok()
    }
    .ok_or(Error::DegenerateAxes(f64::INFINITY))?;
    let raw = Vector3::new(raw[0], raw[1], raw[2]);
    let seed = if raw.norm() > 1e-12 { raw.normalize() } else { axes[0] };

    let helper = if seed.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - seed * helper.dot(&seed)).normalize();
    let e2 = seed.cross(&e1);
    let point = |p: &[f64]| -> Vector3<f64> {
        let (st, ct) = p[0].sin_cos();
        let (sp, cp) = p[1].sin_cos();
        (seed * (st * cp) + e1 * (st * sp) + e2 * ct).normalize()
    };
    let settings = SimplexSettings {
        x_tolerance: 1e-13,
        f_tolerance: 0.0,
        max_iterations: 4000,
        ..Default::default()
    };
    let start = [std::f64::consts::FRAC_PI_2, 0.0];
    let r = nelder_mead_with_steps(|p| cone_residual(axes, cosines, &point(p)), &start, &[0.02, 0.02], &settings)?;
    let b = point(&r.argmin);
    Ok((b, cone_residual(axes, cosines, &b)))
}

fn validate_constraints(constraints: &[ConeConstraint]) -> Result<()> {
    if constraints.len() < 3 {
        return Err(Error::TooFewConstraints {
            needed: 3,
            got: constraints.len(),
        });
    }
    if constraints.len() > MAX_CONSTRAINTS {
        return Err(Error::InvalidParameter(format!(
            "at most {MAX_CONSTRAINTS} constraints are supported, got {}",
            constraints.len()
        )));
    }
    constraints.iter().try_for_each(ConeConstraint::validate)
}

pub fn solve_direction(constraints: &[ConeConstraint], settings: &ReconSettings) -> Result<VectorFieldResult> {
    validate_constraints(constraints)?;
    let n = constraints.len();
    let axes: Vec<Vector3<f64>> = constraints.iter().map(|c| c.axis.axis()).collect();
    let cond = axis_condition(&axes);
    if !(cond <= settings.condition_bound) {
        return Err(Error::DegenerateAxes(cond));
    }
    let base: Vec<f64> = constraints.iter().map(|c| c.alpha.cos()).collect();

    let masks: Vec<u32> = (0..1u32 << (n - 1)).map(|m| m << 1).collect();
    let flipped = |mask: u32| -> Vec<bool> { (0..n).map(|i| mask & (1 << i) != 0).collect() };
    let branches = masks
        .par_iter()
        .map(|&mask| {
            let flips = flipped(mask);
            let cosines: Vec<f64> = base.iter().zip(&flips).map(|(c, &f)| if f { -c } else { *c }).collect();
            let (b, residual) = solve_fixed_branch(&axes, &cosines)?;
            Ok(BranchOutcome {
                flipped: flips,
                direction: b.into(),
                residual,
            })
        })
        .collect::<Result<Vec<BranchOutcome>>>()?;

    // residuals equal up to roundoff count as a tie, resolved by branch order
    let lowest = branches.iter().map(|b| b.residual).fold(f64::INFINITY, f64::min);
    let best = branches
        .iter()
        .find(|b| b.residual <= lowest + TIE_TOLERANCE)
        .cloned()
        .expect("at least one branch");
    if !(best.residual <= settings.residual_gate) {
        return Err(Error::NoSolution(best.residual));
    }

    let b = Vector3::from(best.direction);
    let resolved: Vec<ConeConstraint> = constraints
        .iter()
        .zip(&best.flipped)
        .map(|(c, &f)| ConeConstraint {
            alpha: if f { std::f64::consts::PI - c.alpha } else { c.alpha },
            ..c.clone()
        })
        .collect();
    let triangle = if n == 3 {
        Some(triangle_diagnostic(&resolved, &b)?)
    } else {
        None
    };
    let direction_sigma = bootstrap_sigma(&axes, &resolved, &b, settings)?;

    let (b_mean, b_std) = aggregate_magnitude(constraints)?;
    let primary = NVOrientation::from_vector(&b);
    let mirror = NVOrientation::from_vector(&(-b));
    Ok(VectorFieldResult {
        direction: best.direction,
        theta_b: primary.theta,
        phi_b: primary.phi,
        mirror_theta: mirror.theta,
        mirror_phi: mirror.phi,
        b_mean,
        b_std,
        residual: best.residual,
        branch_choice: best.flipped.clone(),
        branches,
        triangle,
        direction_sigma,
    })
}

fn bootstrap_sigma(
    axes: &[Vector3<f64>],
    resolved: &[ConeConstraint],
    nominal: &Vector3<f64>,
    settings: &ReconSettings,
) -> Result<Option<f64>> {
    if settings.bootstrap_samples == 0 || resolved.iter().all(|c| c.alpha_sigma == 0.0) {
        return Ok(None);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let samples: Vec<Vec<f64>> = (0..settings.bootstrap_samples)
        .map(|_| {
            resolved
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c.alpha + c.alpha_sigma * z).cos()
                })
                .collect()
        })
        .collect();
    let angles = samples
        .par_iter()
        .map(|cosines| {
            let (b, _) = solve_fixed_branch(axes, cosines)?;
            Ok(angle_between(&b, nominal))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_sq = angles.iter().map(|a| a * a).sum::<f64>() / angles.len() as f64;
    Ok(Some(mean_sq.sqrt()))
}

/// Mean and sample standard deviation of the per-NV magnitudes. The mean is
/// inverse-variance weighted when every constraint carries a positive sigma.
pub fn aggregate_magnitude(constraints: &[ConeConstraint]) -> Result<(f64, f64)> {
    if constraints.is_empty() {
        return Err(Error::TooFewConstraints { needed: 1, got: 0 });
    }
    let values: Vec<f64> = constraints.iter().map(|c| c.b_gauss).collect();
    let n = values.len() as f64;
    let weighted = constraints.iter().all(|c| c.b_sigma > 0.0);
    let mean = if weighted {
        let (num, den) = constraints.iter().fold((0.0, 0.0), |(num, den), c| {
            let w = 1.0 / (c.b_sigma * c.b_sigma);
            (num + w * c.b_gauss, den + w)
        });
        num / den
    } else {
        values.iter().sum::<f64>() / n
    };
    let std = if values.len() < 2 {
        0.0
    } else {
        let arithmetic = values.iter().sum::<f64>() / n;
        (values.iter().map(|v| (v - arithmetic).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok((mean, std))
}

/// Unit vectors lying on both cones `n1 . b = c1` and `n2 . b = c2`.
pub fn pair_intersections(n1: &Vector3<f64>, c1: f64, n2: &Vector3<f64>, c2: f64) -> Result<Vec<Vector3<f64>>> {
    let g = n1.dot(n2);
    let det = 1.0 - g * g;
    if det < 1e-12 {
        return Err(Error::DegenerateAxes(f64::INFINITY));
    }
    let a = (c1 - c2 * g) / det;
    let b = (c2 - c1 * g) / det;
    let v = n1 * a + n2 * b;
    let h = 1.0 - v.norm_squared();
    if h < 0.0 {
        return Ok(Vec::new());
    }
    let w = n1.cross(n2).normalize();
    let t = h.sqrt();
    Ok(vec![v + w * t, v - w * t])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangleDiagnostic {
    /// Vertices for the pairs (0,1), (0,2), (1,2); `None` where the two cones miss.
    pub vertices: Vec<Option<[f64; 3]>>,
    /// Angle (rad) from each vertex to the reference solution.
    pub distances: Vec<Option<f64>>,
    /// Largest great-circle distance between any two vertices (rad).
    pub spread: f64,
    /// Pairs whose cones do not intersect.
    pub missing_pairs: Vec<(usize, usize)>,
}

/// Pairwise cone intersections of exactly three constraints, each taking the
/// candidate nearest `reference`.
pub fn triangle_diagnostic(constraints: &[ConeConstraint], reference: &Vector3<f64>) -> Result<TriangleDiagnostic> {
    if constraints.len() != 3 {
        return Err(Error::InvalidParameter(format!(
            "triangle diagnostic needs exactly 3 constraints, got {}",
            constraints.len()
        )));
    }
    let axes: Vec<Vector3<f64>> = constraints.iter().map(|c| c.axis.axis()).collect();
    let cosines: Vec<f64> = constraints.iter().map(|c| c.alpha.cos()).collect();
    let mut vertices = Vec::new();
    let mut distances = Vec::new();
    let mut missing_pairs = Vec::new();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let candidates = pair_intersections(&axes[i], cosines[i], &axes[j], cosines[j])?;
        match candidates
            .into_iter()
            .max_by(|a, b| a.dot(reference).total_cmp(&b.dot(reference)))
        {
            Some(v) => {
                distances.push(Some(angle_between(&v, reference)));
                vertices.push(Some(v));
            }
            None => {
                missing_pairs.push((i, j));
                distances.push(None);
                vertices.push(None);
            }
        }
    }
    let present: Vec<&Vector3<f64>> = vertices.iter().flatten().collect();
    let mut spread = 0.0f64;
    for a in 0..present.len() {
        for b in (a + 1)..present.len() {
            spread = spread.max(angle_between(present[a], present[b]));
        }
    }
    Ok(TriangleDiagnostic {
        vertices: vertices.into_iter().map(|v| v.map(Into::into)).collect(),
        distances,
        spread,
        missing_pairs,
    })
}
