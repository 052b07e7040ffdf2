//! Hyperfine-resolved ODMR spectra: synthesis from the full Hamiltonian and
//! two-triplet Lorentzian fitting.
//!
//! The fit model is
//!
//! `y(f) = baseline - sum_k depth_k * L(f; center_k, w)`
//!
//! with each group of three lines at `c - s, c, c + s` sharing one linewidth
//! `w` (FWHM). Baseline and depths enter linearly and are eliminated in closed
//! form, so the simplex only sees `(c1, s1, c2, s2, ln w)`.

use nalgebra::{DMatrix, DVector, SMatrix, SVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{hyperfine_transitions, SpinParams, TransitionPair};
use crate::error::{Error, Result};
use crate::pattern::NVOrientation;
use crate::simplex::{nelder_mead_with_steps, NelderMeadResult, SimplexSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
}

impl Sweep {
    pub fn frequencies(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.stop_mhz > self.start_mhz) {
            return Err(Error::InvalidParameter(format!("invalid sweep {self:?}")));
        }
        let step = (self.stop_mhz - self.start_mhz) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| self.start_mhz + step * i as f64).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectrumMetadata {
    pub linewidth_mhz: Option<f64>,
    pub contrast_depth: Option<f64>,
    pub sweep: Option<Sweep>,
    pub noise_sigma: Option<f64>,
}

/// Contrast versus microwave frequency; 1 means no dip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub contrast: Vec<f64>,
    #[serde(default)]
    pub metadata: SpectrumMetadata,
}

impl Spectrum {
    pub fn new(frequencies: Vec<f64>, contrast: Vec<f64>) -> Result<Self> {
        if frequencies.len() != contrast.len() {
            return Err(Error::InvalidParameter(format!(
                "{} frequencies but {} contrast values",
                frequencies.len(),
                contrast.len()
            )));
        }
        if frequencies.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("frequencies must be strictly increasing".into()));
        }
        if !frequencies.iter().chain(&contrast).all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter("spectrum contains non-finite values".into()));
        }
        Ok(Self {
            frequencies,
            contrast,
            metadata: SpectrumMetadata::default(),
        })
    }

    /// Copy with additive Gaussian noise of standard deviation `sigma`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        let normal = Normal::new(0.0, sigma)
            .map_err(|_| Error::InvalidParameter(format!("invalid noise sigma {sigma}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = self.clone();
        for c in &mut out.contrast {
            *c += normal.sample(&mut rng);
        }
        out.metadata.noise_sigma = Some(sigma);
        Ok(out)
    }
}

/// Unit-height Lorentzian of full width `w`.
fn lorentzian(f: f64, center: f64, w: f64) -> f64 {
    let x = 2.0 * (f - center) / w;
    1.0 / (1.0 + x * x)
}

/// Components of a lab-frame vector in the NV frame (z along the axis).
pub(crate) fn to_nv_frame(v: &Vector3<f64>, orientation: &NVOrientation) -> Vector3<f64> {
    let n = orientation.axis();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let e1 = (helper - n * helper.dot(&n)).normalize();
    let e2 = n.cross(&e1);
    Vector3::new(v.dot(&e1), v.dot(&e2), v.dot(&n))
}

pub fn simulate_odmr_spectrum(
    b_lab: &Vector3<f64>,
    orientation: &NVOrientation,
    params: &SpinParams,
    linewidth_mhz: f64,
    contrast_depth: f64,
    sweep: &Sweep,
) -> Result<Spectrum> {
    params.validate()?;
    if !(linewidth_mhz > 0.0) {
        return Err(Error::InvalidParameter(format!("linewidth must be positive, got {linewidth_mhz}")));
    }
    if !(contrast_depth > 0.0 && contrast_depth < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "contrast depth must lie in (0, 1), got {contrast_depth}"
        )));
    }
    let frequencies = sweep.frequencies()?;
    let lines = hyperfine_transitions(&to_nv_frame(b_lab, orientation), params);
    let contrast = frequencies
        .iter()
        .map(|&f| {
            1.0 - lines
                .iter()
                .map(|l| contrast_depth * lorentzian(f, l.frequency, linewidth_mhz))
                .sum::<f64>()
        })
        .collect();
    let mut spectrum = Spectrum::new(frequencies, contrast)?;
    spectrum.metadata = SpectrumMetadata {
        linewidth_mhz: Some(linewidth_mhz),
        contrast_depth: Some(contrast_depth),
        sweep: Some(*sweep),
        noise_sigma: None,
    };
    Ok(spectrum)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdmrFit {
    /// Middle-line centers with covariance-derived sigmas.
    pub pair: TransitionPair,
    pub linewidth_mhz: f64,
    pub linewidth_sigma: f64,
    /// All six line centers, lower group first.
    pub centers: [f64; 6],
    pub spacings: [f64; 2],
    pub depths: [f64; 6],
    pub baseline: f64,
    pub rms_residual: f64,
}

const N_LINEAR: usize = 7;
const N_NONLINEAR: usize = 7;

/// Equal spacing per group: (c1, s1, c2, s2, ln w).
fn equal_centers(p: &[f64]) -> ([f64; 6], f64) {
    ([p[0] - p[1], p[0], p[0] + p[1], p[2] - p[3], p[2], p[2] + p[3]], p[4].exp())
}

/// Separate lower and upper spacing per group: (c1, l1, u1, c2, l2, u2, ln w).
fn free_centers(p: &[f64]) -> ([f64; 6], f64) {
    ([p[0] - p[1], p[0], p[0] + p[2], p[3] - p[4], p[3], p[3] + p[5]], p[6].exp())
}

/// Design matrix columns: baseline, then minus each unit Lorentzian.
fn design(freqs: &[f64], centers: &[f64; 6], w: f64) -> DMatrix<f64> {
    DMatrix::from_fn(freqs.len(), N_LINEAR, |i, j| {
        if j == 0 {
            1.0
        } else {
            -lorentzian(freqs[i], centers[j - 1], w)
        }
    })
}

fn solve_linear(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let ata = a.transpose() * a;
    let aty = a.transpose() * y;
    if let Some(ch) = ata.clone().cholesky() {
        return Some(ch.solve(&aty));
    }
    a.clone().svd(true, true).solve(y, 1e-14).ok()
}

/// Sum of squared residuals after eliminating the linear parameters. `y` is
/// the contrast minus a baseline estimate, which keeps the normal-equation
/// form `y.y - h.c` free of cancellation.
fn projected_sse(freqs: &[f64], y: &[f64], yy: f64, layout: fn(&[f64]) -> ([f64; 6], f64), p: &[f64]) -> f64 {
    let (centers, w) = layout(p);
    let mut gram = SMatrix::<f64, N_LINEAR, N_LINEAR>::zeros();
    let mut h = SVector::<f64, N_LINEAR>::zeros();
    let mut col = [0.0; N_LINEAR];
    col[0] = 1.0;
    for (&f, &v) in freqs.iter().zip(y) {
        for k in 0..6 {
            col[k + 1] = -lorentzian(f, centers[k], w);
        }
        for a in 0..N_LINEAR {
            h[a] += col[a] * v;
            for b in 0..=a {
                gram[(a, b)] += col[a] * col[b];
            }
        }
    }
    gram.fill_upper_triangle_with_lower_triangle();
    match gram.cholesky() {
        Some(ch) => (yy - h.dot(&ch.solve(&h))).max(0.0),
        None => f64::MAX,
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct Dip {
    center: f64,
    width: f64,
}

/// Contiguous runs deeper than half the deepest point.
fn find_dips(freqs: &[f64], depth: &[f64], threshold: f64) -> Vec<Dip> {
    let mut dips = Vec::new();
    let mut i = 0;
    while i < depth.len() {
        if depth[i] <= threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < depth.len() && depth[i] > threshold {
            i += 1;
        }
        let run = start..i;
        let weight: f64 = depth[run.clone()].iter().sum();
        let center = run.clone().map(|k| freqs[k] * depth[k]).sum::<f64>() / weight;
        let lo = if start > 0 { freqs[start - 1] } else { freqs[start] };
        let hi = if i < freqs.len() { freqs[i] } else { freqs[i - 1] };
        dips.push(Dip {
            center,
            width: 0.5 * (hi - lo + freqs[i - 1] - freqs[start]),
        });
    }
    dips
}

fn group_guess(dips: &[Dip], default_spacing: f64) -> (f64, f64) {
    match dips.len() {
        0 => unreachable!("groups are never empty"),
        1 => (dips[0].center, default_spacing),
        n => {
            let first = dips[0].center;
            let last = dips[n - 1].center;
            let middle = if n == 3 { dips[1].center } else { 0.5 * (first + last) };
            (middle, 0.5 * (last - first))
        }
    }
}

/// Restarts the simplex around its last optimum until it stops improving.
fn polish<F: Fn(&[f64]) -> f64>(
    objective: F,
    mut best: NelderMeadResult,
    settings: &SimplexSettings,
    max_restarts: usize,
) -> Result<NelderMeadResult> {
    for _ in 0..max_restarts {
        let w = best.argmin[best.argmin.len() - 1].exp();
        let steps: Vec<f64> = (0..best.argmin.len())
            .map(|k| if k + 1 == best.argmin.len() { 0.05 } else { 0.05 * w })
            .collect();
        let again = nelder_mead_with_steps(&objective, &best.argmin, &steps, settings)?;
        let improved = again.value < best.value * (1.0 - 1e-10);
        best = again;
        if !improved {
            break;
        }
    }
    Ok(best)
}

pub fn fit_odmr_spectrum(spectrum: &Spectrum) -> Result<OdmrFit> {
    let freqs = &spectrum.frequencies;
    let n = freqs.len();
    if n < 4 * (N_LINEAR + N_NONLINEAR) {
        return Err(Error::FitFailed(format!("{n} samples are too few")));
    }
    let y = DVector::from_column_slice(&spectrum.contrast);

    let baseline = median(&mut spectrum.contrast.clone());
    let depth: Vec<f64> = spectrum.contrast.iter().map(|c| baseline - c).collect();
    let max_depth = depth.iter().cloned().fold(f64::MIN, f64::max);
    let mut diffs: Vec<f64> = spectrum.contrast.windows(2).map(|w| w[1] - w[0]).collect();
    let center_diff = median(&mut diffs.clone());
    let mut abs_dev: Vec<f64> = diffs.iter_mut().map(|d| (*d - center_diff).abs()).collect();
    let noise = 1.4826 * median(&mut abs_dev) / std::f64::consts::SQRT_2;
    if !(max_depth > 5.0 * noise && max_depth > 1e-9) {
        return Err(Error::FitFailed("no resonance above the noise floor".into()));
    }

    let dips = find_dips(freqs, &depth, 0.5 * max_depth);
    let default_spacing = 2.2;
    let width0 = dips
        .iter()
        .map(|d| d.width)
        .fold(f64::MAX, f64::min)
        .max(2.0 * (freqs[1] - freqs[0]));

    // split at the widest gap between neighbouring dips when it stands out
    let gaps: Vec<f64> = dips.windows(2).map(|w| w[1].center - w[0].center).collect();
    let split = gaps
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .filter(|(k, &g)| {
            let others = gaps.iter().enumerate().filter(|(j, _)| j != k).map(|(_, v)| *v);
            others.fold(0.0, f64::max) * 2.0 < g
        })
        .map(|(k, _)| k + 1);
    let (g1, g2) = match split {
        Some(k) => (group_guess(&dips[..k], default_spacing), group_guess(&dips[k..], default_spacing)),
        None => {
            let g = group_guess(&dips, default_spacing);
            let half = g.1.max(width0);
            ((g.0 - 0.5 * half, default_spacing), (g.0 + 0.5 * half, default_spacing))
        }
    };

    let settings = SimplexSettings {
        max_iterations: 20_000,
        x_tolerance: 1e-7,
        f_tolerance: 1e-14 * y.map(|v| (v - baseline).powi(2)).sum().max(1e-30),
        ..Default::default()
    };
    let centered: Vec<f64> = spectrum.contrast.iter().map(|c| c - baseline).collect();
    let yy: f64 = centered.iter().map(|v| v * v).sum();
    let equal = |p: &[f64]| projected_sse(freqs, &centered, yy, equal_centers, p);
    // a dip may be a blend of unresolved hyperfine lines, so its width only
    // bounds the linewidth from above
    let min_width = 2.0 * (freqs[1] - freqs[0]);
    let mut best: Option<NelderMeadResult> = None;
    for scale in [1.0, 0.5, 0.25] {
        let w0 = (scale * width0).max(min_width);
        let start = [g1.0, g1.1, g2.0, g2.1, w0.ln()];
        let steps = [0.5 * w0, 0.2 * w0, 0.5 * w0, 0.2 * w0, 0.2];
        let r = polish(equal, nelder_mead_with_steps(equal, &start, &steps, &settings)?, &settings, 6)?;
        if r.converged && best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let Some(mut best) = best else {
        return Err(Error::FitFailed("simplex did not converge".into()));
    };
    let mut p = best.argmin.clone();
    p[1] = p[1].abs();
    p[3] = p[3].abs();
    if p[2] < p[0] {
        p.swap(0, 2);
        p.swap(1, 3);
    }
    let w = p[4].exp();
    if p[2] - p[0] < 3.0 * w {
        return Err(Error::TripletsOverlap {
            center1: p[0],
            center2: p[2],
            linewidth: w,
        });
    }

    // second-order hyperfine terms make real triplets slightly asymmetric
    let free = |q: &[f64]| projected_sse(freqs, &centered, yy, free_centers, q);
    let seed = [p[0], p[1], p[1], p[2], p[3], p[3], p[4]];
    let free_steps = [0.05 * w, 0.02 * w, 0.02 * w, 0.05 * w, 0.02 * w, 0.02 * w, 0.02];
    best = polish(free, nelder_mead_with_steps(free, &seed, &free_steps, &settings)?, &settings, 6)?;
    if !best.converged {
        return Err(Error::FitFailed("simplex did not converge".into()));
    }
    let p = best.argmin.clone();
    let (centers, w) = free_centers(&p);
    if !(centers.windows(2).all(|c| c[1] > c[0])) {
        return Err(Error::FitFailed("hyperfine lines collapsed".into()));
    }
    let a = design(freqs, &centers, w);
    let coef = solve_linear(&a, &y).ok_or_else(|| Error::FitFailed("singular line basis".into()))?;
    if coef[2] <= 0.0 || coef[5] <= 0.0 {
        return Err(Error::FitFailed("middle lines have non-positive depth".into()));
    }

    let residual = &y - &a * &coef;
    let sse = residual.norm_squared();
    let dof = (n - N_LINEAR - N_NONLINEAR) as f64;
    let s2 = sse / dof;

    // Jacobian of the model in (c1, l1, u1, c2, l2, u2, w, baseline, depths)
    let model = |q: &[f64]| -> DVector<f64> {
        let (c, w) = free_centers(q);
        design(freqs, &c, w) * &coef
    };
    let mut jac = DMatrix::zeros(n, N_LINEAR + N_NONLINEAR);
    let natural = [p[0], p[1], p[2], p[3], p[4], p[5], w];
    for k in 0..N_NONLINEAR {
        let h = 1e-6 * natural[k].abs().max(1.0);
        let to_internal = |v: [f64; 7]| [v[0], v[1], v[2], v[3], v[4], v[5], v[6].ln()];
        let mut up = natural;
        let mut down = natural;
        up[k] += h;
        down[k] -= h;
        let diff = (model(&to_internal(up)) - model(&to_internal(down))) / (2.0 * h);
        jac.set_column(k, &diff);
    }
    for k in 0..N_LINEAR {
        jac.set_column(N_NONLINEAR + k, &a.column(k));
    }
    let jtj = jac.transpose() * &jac;
    let cov = match jtj.clone().try_inverse() {
        Some(inv) => inv * s2,
        None => jtj
            .pseudo_inverse(1e-14)
            .map_err(|e| Error::FitFailed(e.to_string()))?
            * s2,
    };
    let sigma = |k: usize| cov[(k, k)].max(0.0).sqrt();

    let mut depths = [0.0; 6];
    depths.copy_from_slice(&coef.as_slice()[1..]);
    Ok(OdmrFit {
        pair: TransitionPair::with_sigmas(p[0], sigma(0), p[3], sigma(3)),
        linewidth_mhz: w,
        linewidth_sigma: sigma(6),
        centers,
        spacings: [0.5 * (p[1] + p[2]), 0.5 * (p[4] + p[5])],
        depths,
        baseline: coef[0],
        rms_residual: (sse / n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::transition_frequencies;

    fn sweep() -> Sweep {
        Sweep {
            start_mhz: 2650.0,
            stop_mhz: 3090.0,
            points: 8801,
        }
    }

    fn table_like(alpha_deg: f64) -> Spectrum {
        let nv = NVOrientation::from_degrees(0.0, 0.0).unwrap();
        let a = alpha_deg.to_radians();
        let b = Vector3::new(59.5 * a.sin(), 0.0, 59.5 * a.cos());
        simulate_odmr_spectrum(&b, &nv, &SpinParams::default(), 0.5, 0.05, &sweep()).unwrap()
    }

    #[test]
    fn contrast_bounded_and_dips_near_d_at_zero_field() {
        let nv = NVOrientation::from_degrees(30.0, 40.0).unwrap();
        let s = simulate_odmr_spectrum(
            &Vector3::zeros(),
            &nv,
            &SpinParams::default(),
            0.5,
            0.05,
            &Sweep { start_mhz: 2850.0, stop_mhz: 2890.0, points: 4001 },
        )
        .unwrap();
        assert!(s.contrast.iter().all(|&c| c >= 1.0 - 6.0 * 0.05));
        let (imin, _) = s
            .contrast
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!((s.frequencies[imin] - 2870.0).abs() < 5.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let nv = NVOrientation::from_degrees(0.0, 0.0).unwrap();
        let p = SpinParams::default();
        let b = Vector3::new(0.0, 0.0, 10.0);
        assert!(simulate_odmr_spectrum(&b, &nv, &p, 0.0, 0.05, &sweep()).is_err());
        assert!(simulate_odmr_spectrum(&b, &nv, &p, 0.5, 1.0, &sweep()).is_err());
        assert!(Spectrum::new(vec![1.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(Spectrum::new(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn noiseless_fit_recovers_middle_lines() {
        let s = table_like(117.62);
        let fit = fit_odmr_spectrum(&s).unwrap();
        let nv = NVOrientation::from_degrees(0.0, 0.0).unwrap();
        let a = 117.62f64.to_radians();
        let b = Vector3::new(59.5 * a.sin(), 0.0, 59.5 * a.cos());
        let lines = hyperfine_transitions(&to_nv_frame(&b, &nv), &SpinParams::default());
        assert!((fit.pair.omega1 - lines[1].frequency).abs() < 1e-3, "{fit:?} {lines:?}");
        assert!((fit.pair.omega2 - lines[4].frequency).abs() < 1e-3, "{fit:?} {lines:?}");
        assert!((fit.linewidth_mhz - 0.5).abs() < 1e-3);
        // mI = 0 lines sit close to the bare electron transitions
        let bare = transition_frequencies(59.5, a, &SpinParams::default());
        assert!((fit.pair.omega1 - bare.omega1).abs() < 0.02);
    }

    #[test]
    fn flat_spectrum_fails() {
        let f = sweep().frequencies().unwrap();
        let s = Spectrum::new(f.clone(), vec![1.0; f.len()]).unwrap();
        assert!(matches!(fit_odmr_spectrum(&s), Err(Error::FitFailed(_))));
        let noisy = s.with_noise(0.002, 9).unwrap();
        assert!(matches!(fit_odmr_spectrum(&noisy), Err(Error::FitFailed(_))));
    }

    #[test]
    fn zero_field_triplets_overlap() {
        let nv = NVOrientation::from_degrees(0.0, 0.0).unwrap();
        for field in [0.0, 1.0] {
            let b = Vector3::new(0.0, 0.0, field);
            let s = simulate_odmr_spectrum(&b, &nv, &SpinParams::default(), 3.0, 0.05, &sweep()).unwrap();
            let r = fit_odmr_spectrum(&s);
            assert!(matches!(r, Err(Error::TripletsOverlap { .. })), "{field} {r:?}");
        }
    }
}
