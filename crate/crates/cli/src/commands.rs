use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Deserialize;
use serde_json::{json, Value};
use vortexmag::crystal::{nearest_tetrahedral_axis, CrystalMatch};
use vortexmag::io::{scan_from_csv, scan_to_csv, spectrum_from_csv, spectrum_to_csv, write_pgm};
use vortexmag::orient_fit::{fit_orientation, OrientationFit};
use vortexmag::pattern::{simulate_pattern, NVOrientation};
use vortexmag::spin::{
    estimate_field_hyperfine, fit_odmr_spectrum, simulate_odmr_spectrum, FieldEstimate, OdmrFit, Spectrum,
};
use vortexmag::vector_recon::{solve_direction, ConeConstraint, ReconSettings, VectorFieldResult};
use vortexmag::{Error, Result};

use crate::config::RunConfig;
use crate::report::{deg2, deg4, write_atomic, write_json, Envelope};

pub struct Context {
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Context {
    pub fn envelope<'a>(&'a self, command: &'a str) -> Envelope<'a> {
        Envelope {
            command,
            config_hash: &self.config_hash,
            seed: self.seed,
        }
    }

    fn recon_settings(&self) -> ReconSettings {
        ReconSettings {
            seed: self.seed,
            ..self.config.recon.clone()
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Crystal reference used to label fitted axes.
#[derive(Debug, Clone, Copy)]
pub struct Crystal {
    pub azimuth_deg: f64,
}

// ---------------------------------------------------------------- patterns

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabeledOrientation {
    label: String,
    theta_deg: f64,
    phi_deg: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrientationList {
    orientations: Vec<LabeledOrientation>,
}

pub struct SimulateRequest {
    pub theta_deg: Option<f64>,
    pub phi_deg: Option<f64>,
    pub orientations: Option<PathBuf>,
    pub amplitude: Option<f64>,
    pub background: Option<f64>,
    pub noise: bool,
    pub name: String,
    pub bits: u8,
}

pub fn simulate_patterns(ctx: &Context, req: &SimulateRequest) -> Result<Value> {
    let targets = match (&req.orientations, req.theta_deg, req.phi_deg) {
        (Some(path), None, None) => parse_json::<OrientationList>(path)?.orientations,
        (None, Some(theta_deg), Some(phi_deg)) => vec![LabeledOrientation {
            label: req.name.clone(),
            theta_deg,
            phi_deg,
        }],
        _ => {
            return Err(Error::InvalidParameter(
                "give either --theta and --phi, or --orientations <file>".into(),
            ))
        }
    };
    if ![8, 16].contains(&req.bits) {
        return Err(Error::InvalidParameter(format!("--bits must be 8 or 16, got {}", req.bits)));
    }
    let out = ctx.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let grid = ctx.config.scan.grid()?;
    let amplitude = req.amplitude.unwrap_or(ctx.config.scan.amplitude);
    let background = req.background.unwrap_or(ctx.config.scan.background);
    let noise_seed = req.noise.then_some(ctx.seed);

    let mut written = Vec::new();
    for target in &targets {
        let orientation = NVOrientation::from_degrees(target.theta_deg, target.phi_deg)?;
        let image = simulate_pattern(orientation, &grid, &ctx.config.optics, amplitude, background, noise_seed)?;
        let csv_path = out.join(format!("{}.csv", target.label));
        let pgm_path = out.join(format!("{}.pgm", target.label));
        let meta_path = out.join(format!("{}.json", target.label));
        write_atomic(&csv_path, scan_to_csv(&image).as_bytes())?;
        let mut pgm = Vec::new();
        let scaling = write_pgm(&image, req.bits, &mut pgm)?;
        write_atomic(&pgm_path, &pgm)?;
        let meta = json!({
            "label": target.label,
            "theta_deg": target.theta_deg,
            "phi_deg": target.phi_deg,
            "grid": image.grid,
            "amplitude": amplitude,
            "background": background,
            "noise_seed": noise_seed,
            "min": image.min(),
            "max": image.max(),
            "graymap": scaling,
            "files": { "csv": csv_path, "pgm": pgm_path },
        });
        write_json(&meta_path, &ctx.envelope("simulate-pattern").wrap(&meta))?;
        written.push(meta);
    }
    Ok(json!({ "patterns": written }))
}

// ------------------------------------------------------------- orientation

fn crystal_json(m: &CrystalMatch) -> Value {
    json!({
        "axis_index": m.index,
        "axis_theta_deg": deg4(m.crystal_axis.theta),
        "axis_phi_deg": deg4(m.crystal_axis.phi),
        "unfolded_theta_deg": deg4(m.unfolded.theta),
        "unfolded_phi_deg": deg4(m.unfolded.phi),
        "deviation_deg": deg4(m.deviation),
    })
}

fn orientation_json(fit: &OrientationFit, crystal: Option<&CrystalMatch>) -> Value {
    let mut v = json!({
        "theta_deg": deg4(fit.theta),
        "phi_deg": deg4(fit.phi),
        "mirror_phi_deg": deg4(fit.mirror_phi),
        "phi_identifiable": fit.phi_identifiable,
        "center_nm": fit.center_nm,
        "amplitude": fit.amplitude,
        "background": fit.background,
        "residual": fit.residual,
        "converged": fit.converged,
        "n_starts": fit.n_starts_used,
        "iterations": fit.iterations,
    });
    if let Some(m) = crystal {
        v["crystal_111"] = crystal_json(m);
    }
    v
}

fn fit_file(ctx: &Context, image_path: &Path) -> Result<OrientationFit> {
    let image = scan_from_csv(&read_text(image_path)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", image_path.display())))?;
    fit_orientation(
        &image,
        &ctx.config.optics,
        ctx.config.fit.n_starts,
        ctx.seed,
        &ctx.config.fit.simplex,
    )
}

pub fn fit_orientation_cmd(ctx: &Context, image_path: &Path, crystal: Option<Crystal>) -> Result<Value> {
    let fit = fit_file(ctx, image_path)?;
    let label = crystal.map(|c| nearest_tetrahedral_axis(&fit, c.azimuth_deg.to_radians()));
    let mut v = orientation_json(&fit, label.as_ref());
    v["image"] = json!(image_path);
    Ok(v)
}

// -------------------------------------------------------------------- odmr

pub struct OdmrRequest {
    pub spectrum: Option<PathBuf>,
    pub field_gauss: Option<f64>,
    pub alpha_deg: Option<f64>,
    pub noise: Option<f64>,
}

/// Zero-field spectra come back from the fit as two groups no further apart
/// than one hyperfine spacing.
fn classify_fit_error(err: Error, ctx: &Context) -> Error {
    match err {
        Error::TripletsOverlap { center1, center2, .. }
            if (center2 - center1).abs() <= 1.05 * ctx.config.spin.a_par_mhz.abs() =>
        {
            Error::DegenerateField
        }
        other => other,
    }
}

fn fit_and_invert(ctx: &Context, spectrum: &Spectrum) -> Result<(OdmrFit, FieldEstimate)> {
    let fit = fit_odmr_spectrum(spectrum).map_err(|e| classify_fit_error(e, ctx))?;
    let est = estimate_field_hyperfine(&fit.pair, &ctx.config.spin)?;
    Ok((fit, est))
}

fn odmr_json(fit: &OdmrFit, est: &FieldEstimate) -> Value {
    json!({
        "omega1_mhz": fit.pair.omega1,
        "omega1_sigma_mhz": fit.pair.sigma1,
        "omega2_mhz": fit.pair.omega2,
        "omega2_sigma_mhz": fit.pair.sigma2,
        "linewidth_mhz": fit.linewidth_mhz,
        "linewidth_sigma_mhz": fit.linewidth_sigma,
        "b_gauss": est.b_gauss,
        "b_sigma_gauss": est.b_sigma,
        "alpha_candidates_deg": [deg4(est.alpha_candidates[0]), deg4(est.alpha_candidates[1])],
        "alpha_sigma_deg": deg4(est.alpha_sigma),
        "centers_mhz": fit.centers,
        "hyperfine_spacings_mhz": fit.spacings,
        "depths": fit.depths,
        "baseline": fit.baseline,
        "rms_residual": fit.rms_residual,
    })
}

pub fn odmr_cmd(ctx: &Context, req: &OdmrRequest) -> Result<Value> {
    let (spectrum, source) = match (&req.spectrum, req.field_gauss, req.alpha_deg) {
        (Some(path), None, None) => {
            let s = spectrum_from_csv(&read_text(path)?).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            (s, json!({ "file": path }))
        }
        (None, Some(b), Some(alpha_deg)) => {
            let odmr = &ctx.config.odmr;
            let alpha = alpha_deg.to_radians();
            let nv = NVOrientation::new(0.0, 0.0)?;
            let b_lab = Vector3::new(b * alpha.sin(), 0.0, b * alpha.cos());
            let clean = simulate_odmr_spectrum(
                &b_lab,
                &nv,
                &ctx.config.spin,
                odmr.linewidth_mhz,
                odmr.contrast_depth,
                &odmr.sweep(),
            )?;
            let sigma = req.noise.unwrap_or(odmr.noise_sigma);
            let s = if sigma > 0.0 { clean.with_noise(sigma, ctx.seed)? } else { clean };
            if let Some(out) = &ctx.out {
                write_atomic(&out.join("spectrum.csv"), spectrum_to_csv(&s).as_bytes())?;
            }
            (s, json!({ "simulated": { "field_gauss": b, "alpha_deg": alpha_deg, "noise_sigma": sigma } }))
        }
        _ => {
            return Err(Error::InvalidParameter(
                "give either --spectrum <file>, or --field-gauss and --alpha-deg".into(),
            ))
        }
    };
    let (fit, est) = fit_and_invert(ctx, &spectrum)?;
    let mut v = odmr_json(&fit, &est);
    v["source"] = source;
    Ok(v)
}

// ------------------------------------------------------------- reconstruct

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintInput {
    #[serde(default)]
    pub label: Option<String>,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub alpha_deg: f64,
    #[serde(default)]
    pub alpha_sigma_deg: f64,
    pub b_gauss: f64,
    #[serde(default)]
    pub b_sigma_gauss: f64,
}

impl ConstraintInput {
    fn to_constraint(&self) -> Result<ConeConstraint> {
        let c = ConeConstraint {
            axis: NVOrientation::from_degrees(self.theta_deg, self.phi_deg)?,
            alpha: self.alpha_deg.to_radians(),
            alpha_sigma: self.alpha_sigma_deg.to_radians(),
            b_gauss: self.b_gauss,
            b_sigma: self.b_sigma_gauss,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ConstraintFile {
    List(Vec<ConstraintInput>),
    Wrapped {
        constraints: Vec<ConstraintInput>,
    },
}

fn vector_deg(v: &[f64; 3]) -> [f64; 2] {
    let o = NVOrientation::from_vector(&Vector3::from(*v));
    [deg2(o.theta), deg2(o.phi)]
}

fn reconstruction_json(r: &VectorFieldResult, labels: &[String], weighted: bool) -> Value {
    let branch: Vec<Value> = labels
        .iter()
        .zip(&r.branch_choice)
        .map(|(l, &f)| json!({ "label": l, "branch": if f { "pi-alpha" } else { "alpha" } }))
        .collect();
    let branches: Vec<Value> = r
        .branches
        .iter()
        .map(|b| {
            json!({
                "flipped": b.flipped,
                "direction_deg": vector_deg(&b.direction),
                "residual": b.residual,
            })
        })
        .collect();
    let triangle = r.triangle.as_ref().map(|t| {
        json!({
            "vertices_deg": t.vertices.iter().map(|v| v.as_ref().map(vector_deg)).collect::<Vec<_>>(),
            "distances_deg": t.distances.iter().map(|d| d.map(deg2)).collect::<Vec<_>>(),
            "spread_deg": deg2(t.spread),
            "missing_pairs": t.missing_pairs,
        })
    });
    json!({
        "theta_b_deg": deg2(r.theta_b),
        "phi_b_deg": deg2(r.phi_b),
        "mirror": { "theta_b_deg": deg2(r.mirror_theta), "phi_b_deg": deg2(r.mirror_phi) },
        "direction": r.direction,
        "b_mean_gauss": r.b_mean,
        "b_std_gauss": r.b_std,
        "b_mean_weighting": if weighted { "inverse-variance" } else { "arithmetic" },
        "residual": r.residual,
        "branch_choice": branch,
        "branches": branches,
        "triangle": triangle,
        "direction_sigma_deg": r.direction_sigma.map(deg2),
    })
}

pub fn reconstruct_cmd(ctx: &Context, path: &Path) -> Result<Value> {
    let inputs = match parse_json::<ConstraintFile>(path)? {
        ConstraintFile::List(v) => v,
        ConstraintFile::Wrapped { constraints } => constraints,
    };
    let constraints = inputs.iter().map(ConstraintInput::to_constraint).collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = inputs
        .iter()
        .enumerate()
        .map(|(i, c)| c.label.clone().unwrap_or_else(|| format!("#{i}")))
        .collect();
    let r = solve_direction(&constraints, &ctx.recon_settings())?;
    let weighted = constraints.iter().all(|c| c.b_sigma > 0.0);
    Ok(reconstruction_json(&r, &labels, weighted))
}

// ---------------------------------------------------------------- pipeline

fn csv_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

struct Sensor {
    label: String,
    fit: OrientationFit,
    crystal: Option<CrystalMatch>,
    field: FieldEstimate,
}

/// The fitted azimuth is only known modulo 180 degrees. Without a crystal
/// reference every relative choice is tried and the most consistent kept;
/// flipping all of them at once rotates the solution by 180 degrees about z
/// and is reported as a partner.
fn reconstruct_sensors(
    sensors: &[Sensor],
    settings: &ReconSettings,
) -> Result<(VectorFieldResult, Vec<NVOrientation>, bool)> {
    let base = |s: &Sensor, flip: bool| -> ConeConstraint {
        let axis = match &s.crystal {
            Some(m) => m.unfolded,
            None if flip => s.fit.mirror_orientation(),
            None => s.fit.orientation(),
        };
        ConeConstraint {
            axis,
            alpha: s.field.alpha_candidates[0],
            alpha_sigma: s.field.alpha_sigma,
            b_gauss: s.field.b_gauss,
            b_sigma: s.field.b_sigma,
        }
    };
    let resolved = sensors.iter().all(|s| s.crystal.is_some());
    let n = sensors.len();
    let masks: Vec<u32> = if resolved { vec![0] } else { (0..1u32 << (n - 1)).map(|m| m << 1).collect() };
    let mut best: Option<(VectorFieldResult, Vec<NVOrientation>)> = None;
    let mut first_error = None;
    for mask in masks {
        let cs: Vec<ConeConstraint> = sensors
            .iter()
            .enumerate()
            .map(|(i, s)| base(s, mask & (1 << i) != 0))
            .collect();
        match solve_direction(&cs, settings) {
            Ok(r) => {
                if best.as_ref().is_none_or(|(b, _)| r.residual < b.residual) {
                    best = Some((r, cs.iter().map(|c| c.axis).collect()));
                }
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match best {
        Some((r, axes)) => Ok((r, axes, resolved)),
        None => Err(first_error.unwrap_or(Error::NoSolution(f64::INFINITY))),
    }
}

pub struct PipelineOutcome {
    pub report: Value,
    pub error: Option<Error>,
}

pub fn pipeline_cmd(ctx: &Context, scans: &Path, spectra: &Path, crystal: Option<Crystal>) -> Result<PipelineOutcome> {
    let scan_files = csv_files(scans)?;
    let spectrum_files = csv_files(spectra)?;
    if scan_files.is_empty() || spectrum_files.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no .csv files found in {} or {}",
            scans.display(),
            spectra.display()
        )));
    }

    let mut errors = Vec::new();
    let mut orientations = Vec::new();
    let mut fits = Vec::new();
    for path in &scan_files {
        match fit_file(ctx, path) {
            Ok(fit) => {
                let label = crystal.map(|c| nearest_tetrahedral_axis(&fit, c.azimuth_deg.to_radians()));
                let mut v = orientation_json(&fit, label.as_ref());
                v["file"] = json!(path);
                orientations.push(v);
                fits.push((stem(path), fit, label));
            }
            Err(e) => errors.push(json!({ "file": path, "error": e.to_string() })),
        }
    }

    let mut fields = Vec::new();
    let mut estimates = Vec::new();
    for path in &spectrum_files {
        let outcome = read_text(path)
            .and_then(|t| spectrum_from_csv(&t).map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
            .and_then(|s| fit_and_invert(ctx, &s));
        match outcome {
            Ok((fit, est)) => {
                let mut v = odmr_json(&fit, &est);
                v["file"] = json!(path);
                fields.push(v);
                estimates.push((stem(path), est));
            }
            Err(e) => errors.push(json!({ "file": path, "error": e.to_string() })),
        }
    }

    let mut sensors = Vec::new();
    for (name, fit, label) in fits {
        match estimates.iter().find(|(s, _)| *s == name) {
            Some((_, est)) => sensors.push(Sensor {
                label: name,
                fit,
                crystal: label,
                field: est.clone(),
            }),
            None => errors.push(json!({ "file": name, "error": "no spectrum with a matching name" })),
        }
    }

    let mut report = json!({
        "orientations": orientations,
        "spectra": fields,
        "errors": errors,
        "paired": sensors.iter().map(|s| s.label.clone()).collect::<Vec<_>>(),
    });
    if sensors.len() < 3 {
        let err = Error::TooFewConstraints {
            needed: 3,
            got: sensors.len(),
        };
        report["reconstruction_error"] = json!(err.to_string());
        return Ok(PipelineOutcome { report, error: Some(err) });
    }
    match reconstruct_sensors(&sensors, &ctx.recon_settings()) {
        Ok((r, axes, resolved)) => {
            let labels: Vec<String> = sensors.iter().map(|s| s.label.clone()).collect();
            let weighted = sensors.iter().all(|s| s.field.b_sigma > 0.0);
            let mut v = reconstruction_json(&r, &labels, weighted);
            v["axes_used_deg"] = json!(axes.iter().map(|a| [deg4(a.theta), deg4(a.phi)]).collect::<Vec<_>>());
            if !resolved {
                let partner = |theta: f64, phi: f64| json!({ "theta_b_deg": deg2(theta), "phi_b_deg": deg2((phi + PI) % (2.0 * PI)) });
                v["azimuth_partner"] = partner(r.theta_b, r.phi_b);
                v["azimuth_partner_mirror"] = partner(r.mirror_theta, r.mirror_phi);
            }
            report["reconstruction"] = v;
            Ok(PipelineOutcome { report, error: None })
        }
        Err(e) => {
            report["reconstruction_error"] = json!(e.to_string());
            Ok(PipelineOutcome { report, error: Some(e) })
        }
    }
}
