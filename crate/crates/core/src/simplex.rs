//! Nelder-Mead downhill simplex minimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimplexSettings {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_iterations: usize,
    /// Stop when every vertex is within this distance (max-norm) of the best one.
    pub x_tolerance: f64,
    /// Stop when the objective spread over the simplex falls below this.
    pub f_tolerance: f64,
    /// Edge length of the initial simplex when no per-coordinate steps are given.
    pub initial_step: f64,
}

impl Default for SimplexSettings {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_iterations: 5000,
            x_tolerance: 1e-6,
            f_tolerance: 1e-10,
            initial_step: 0.1,
        }
    }
}

impl SimplexSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.x_tolerance >= 0.0
            && self.f_tolerance >= 0.0
            && self.initial_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid simplex settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub argmin: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// False when the iteration budget ran out first.
    pub converged: bool,
}

pub fn nelder_mead<F>(objective: F, start: &[f64], settings: &SimplexSettings) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let steps = vec![settings.initial_step; start.len()];
    nelder_mead_with_steps(objective, start, &steps, settings)
}

/// Same as [`nelder_mead`] with a per-coordinate initial simplex edge.
pub fn nelder_mead_with_steps<F>(
    mut objective: F,
    start: &[f64],
    steps: &[f64],
    settings: &SimplexSettings,
) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    settings.validate()?;
    let dim = start.len();
    if dim == 0 {
        return Err(Error::InvalidParameter("cannot minimize over zero parameters".into()));
    }
    if steps.len() != dim {
        return Err(Error::InvalidParameter("one initial step per coordinate required".into()));
    }

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        evaluations += 1;
        let v = objective(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::ObjectiveNotFinite)
        }
    };

    let mut vertices: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    vertices.push(start.to_vec());
    for (i, &step) in steps.iter().enumerate() {
        let mut v = start.to_vec();
        v[i] += step;
        vertices.push(v);
    }
    let mut values = vertices.iter().map(|v| eval(v)).collect::<Result<Vec<f64>>>()?;

    let mut iterations = 0;
    let mut converged = false;
    loop {
        order(&mut vertices, &mut values);
        if has_converged(&vertices, &values, settings) {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations {
            break;
        }
        iterations += 1;

        let worst = dim;
        let centroid = centroid_without(&vertices, worst);
        let reflected = affine(&centroid, &vertices[worst], -settings.reflection);
        let f_reflected = eval(&reflected)?;

        if f_reflected < values[0] {
            let expanded = affine(&centroid, &reflected, settings.expansion);
            let f_expanded = eval(&expanded)?;
            if f_expanded < f_reflected {
                vertices[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                vertices[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if f_reflected < values[worst - 1] {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }

        let (candidate, threshold) = if f_reflected < values[worst] {
            (affine(&centroid, &reflected, settings.contraction), f_reflected)
        } else {
            (affine(&centroid, &vertices[worst], settings.contraction), values[worst])
        };
        let f_candidate = eval(&candidate)?;
        if f_candidate < threshold {
            vertices[worst] = candidate;
            values[worst] = f_candidate;
            continue;
        }

        let best = vertices[0].clone();
        for k in 1..=dim {
            vertices[k] = affine(&best, &vertices[k], settings.shrink);
            values[k] = eval(&vertices[k])?;
        }
    }

    Ok(NelderMeadResult {
        argmin: vertices.swap_remove(0),
        value: values[0],
        iterations,
        evaluations,
        converged,
    })
}

/// `base + scale * (toward - base)`
fn affine(base: &[f64], toward: &[f64], scale: f64) -> Vec<f64> {
    base.iter().zip(toward).map(|(b, t)| b + scale * (t - b)).collect()
}

fn centroid_without(vertices: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let dim = vertices[0].len();
    let mut c = vec![0.0; dim];
    for (k, v) in vertices.iter().enumerate() {
        if k == skip {
            continue;
        }
        for (ci, vi) in c.iter_mut().zip(v) {
            *ci += vi;
        }
    }
    let n = (vertices.len() - 1) as f64;
    c.iter_mut().for_each(|ci| *ci /= n);
    c
}

fn order(vertices: &mut Vec<Vec<f64>>, values: &mut Vec<f64>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    *vertices = idx.iter().map(|&i| vertices[i].clone()).collect();
    *values = idx.iter().map(|&i| values[i]).collect();
}

fn has_converged(vertices: &[Vec<f64>], values: &[f64], settings: &SimplexSettings) -> bool {
    let best = &vertices[0];
    let diameter = vertices[1..]
        .iter()
        .flat_map(|v| v.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    let spread = values[values.len() - 1] - values[0];
    diameter < settings.x_tolerance || spread < settings.f_tolerance
}
