use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vortexmag"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn result(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", stderr(out));
    let doc: Value = serde_json::from_slice(&out.stdout).expect("json on stdout");
    doc["result"].clone()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn axis(theta_deg: f64, phi_deg: f64) -> [f64; 3] {
    let (t, p) = (theta_deg.to_radians(), phi_deg.to_radians());
    [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
}

/// Angle between two axes, ignoring sign and the azimuth mirror.
fn ambiguity_deg(a: (f64, f64), b: (f64, f64)) -> f64 {
    let u = axis(a.0, a.1);
    [b.1, b.1 + 180.0]
        .iter()
        .map(|&phi| {
            let v = axis(b.0, phi);
            let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
            dot.abs().min(1.0).acos().to_degrees()
        })
        .fold(f64::MAX, f64::min)
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn unknown_config_key_is_named_and_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"optics": {"wavelenght_nm": 532}}"#);
    let out = run(&["--config", s(&cfg), "reconstruct", s(&fixture("cones.json"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("wavelenght_nm"), "{}", stderr(&out));
}

#[test]
fn invalid_config_value_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "cfg.json", r#"{"optics": {"numerical_aperture": 1.6, "immersion_index": 1.5}}"#);
    let out = run(&["--config", s(&cfg), "reconstruct", s(&fixture("cones.json"))]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn missing_arguments_are_usage_errors() {
    assert_eq!(code(&run(&["fit-orientation"])), 2);
    assert_eq!(code(&run(&["simulate-pattern", "--theta", "10"])), 2);
    assert_eq!(code(&run(&["odmr", "--field-gauss", "10"])), 2);
}

#[test]
fn reconstruct_reproduces_the_reference_direction() {
    let dir = TempDir::new().unwrap();
    let out = run(&["--out", s(dir.path()), "reconstruct", s(&fixture("cones.json"))]);
    let r = result(&out);
    let got = (num(&r["theta_b_deg"]), num(&r["phi_b_deg"]));
    let u = axis(got.0, got.1);
    let v = axis(8.59, 182.56);
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    assert!(dot.min(1.0).acos().to_degrees() < 1.0, "{got:?}");
    assert!(r["mirror"]["theta_b_deg"].is_number());
    assert_eq!(r["branches"].as_array().unwrap().len(), 4);
    assert_eq!(r["triangle"]["vertices_deg"].as_array().unwrap().len(), 3);
    assert!(num(&r["direction_sigma_deg"]) > 0.0);
    assert!((num(&r["b_mean_gauss"]) - 59.52).abs() < 0.01);

    // the report file matches stdout
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("reconstruct.json")).unwrap()).unwrap();
    assert_eq!(saved["result"], r);
    assert_eq!(saved["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn reconstruct_accepts_a_bare_list_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let wrapped: Value = serde_json::from_str(&std::fs::read_to_string(fixture("cones.json")).unwrap()).unwrap();
    let bare = write(dir.path(), "bare.json", &wrapped["constraints"].to_string());
    let a = result(&run(&["--seed", "5", "reconstruct", s(&bare)]));
    let b = result(&run(&["--seed", "5", "reconstruct", s(&fixture("cones.json"))]));
    assert_eq!(a, b);
}

#[test]
fn too_few_constraints_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let p = write(
        dir.path(),
        "two.json",
        r#"[{"theta_deg": 109.84, "phi_deg": 20.6, "alpha_deg": 117.62, "b_gauss": 59.53},
            {"theta_deg": 109.25, "phi_deg": 260.51, "alpha_deg": 106.96, "b_gauss": 59.48}]"#,
    );
    let out = run(&["reconstruct", s(&p)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("at least 3"), "{}", stderr(&out));
}

#[test]
fn coplanar_axes_are_degenerate() {
    let dir = TempDir::new().unwrap();
    let p = write(
        dir.path(),
        "flat.json",
        r#"[{"theta_deg": 90, "phi_deg": 0, "alpha_deg": 80, "b_gauss": 10},
            {"theta_deg": 90, "phi_deg": 60, "alpha_deg": 70, "b_gauss": 10},
            {"theta_deg": 90, "phi_deg": 120, "alpha_deg": 100, "b_gauss": 10}]"#,
    );
    let out = run(&["reconstruct", s(&p)]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("degenerate"), "{}", stderr(&out));
}

#[test]
fn malformed_constraint_file_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let p = write(dir.path(), "broken.json", r#"[{"theta_deg": 90, "phi_deg": "#);
    assert_eq!(code(&run(&["reconstruct", s(&p)])), 4);
    assert_eq!(code(&run(&["reconstruct", s(&dir.path().join("missing.json"))])), 4);
}

#[test]
fn simulated_patterns_fit_back() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        s(dir.path()),
        "simulate-pattern",
        "--orientations",
        s(&fixture("nv_orientations.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for (label, theta, phi) in [("NV1", 109.84, 20.60), ("NV2", 109.25, 260.51), ("NV3", 109.31, 140.74)] {
        for ext in ["csv", "pgm", "json"] {
            assert!(dir.path().join(format!("{label}.{ext}")).exists());
        }
        let r = result(&run(&["fit-orientation", s(&dir.path().join(format!("{label}.csv")))]));
        let fitted = (num(&r["theta_deg"]), num(&r["phi_deg"]));
        assert!(ambiguity_deg(fitted, (theta, phi)) < 0.5, "{label}: {fitted:?}");
        assert_eq!(r["phi_identifiable"], true);
    }
}

#[test]
fn crystal_labels_recover_the_full_axis() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        s(dir.path()),
        "simulate-pattern",
        "--theta",
        "109.25",
        "--phi",
        "260.51",
        "--name",
        "nv",
        "--noise",
        "--amplitude",
        "2000",
        "--background",
        "50",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let r = result(&run(&[
        "fit-orientation",
        s(&dir.path().join("nv.csv")),
        "--crystal",
        "111",
        "--crystal-azimuth",
        "20.6",
    ]));
    let c = &r["crystal_111"];
    assert_eq!(c["axis_index"], 3);
    let unfolded = (num(&c["unfolded_theta_deg"]), num(&c["unfolded_phi_deg"]));
    assert!((unfolded.0 - 109.25).abs() < 1.0 && (unfolded.1 - 260.51).abs() < 1.0, "{unfolded:?}");
}

#[test]
fn zero_amplitude_gives_a_flat_image() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "--out",
        s(dir.path()),
        "simulate-pattern",
        "--theta",
        "30",
        "--phi",
        "40",
        "--amplitude",
        "0",
        "--background",
        "3",
        "--name",
        "flat",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(dir.path().join("flat.csv")).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(2)
        .flat_map(|l| l.split(','))
        .map(|v| v.trim().parse().unwrap())
        .collect();
    assert!(!values.is_empty() && values.iter().all(|&v| v == 3.0), "{:?}", &values[..3]);
    let fit = run(&["fit-orientation", s(&dir.path().join("flat.csv"))]);
    assert_eq!(code(&fit), 3, "{}", stderr(&fit));
}

#[test]
fn truncated_scan_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let out = run(&["--out", s(dir.path()), "simulate-pattern", "--theta", "50", "--phi", "10"]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(dir.path().join("pattern.csv")).unwrap();
    let cut = write(dir.path(), "cut.csv", &text[..text.len() / 2]);
    let fit = run(&["fit-orientation", s(&cut)]);
    assert_eq!(code(&fit), 4, "{}", stderr(&fit));
    assert!(stderr(&fit).contains("cut.csv"));
}

#[test]
fn odmr_recovers_table_rows() {
    let table: Value = serde_json::from_str(&std::fs::read_to_string(fixture("nv_fields.json")).unwrap()).unwrap();
    for row in table["nvs"].as_array().unwrap() {
        let (b, alpha) = (num(&row["b_gauss"]), num(&row["alpha_deg"]));
        let dir = TempDir::new().unwrap();
        let r = result(&run(&[
            "--out",
            s(dir.path()),
            "odmr",
            "--field-gauss",
            &b.to_string(),
            "--alpha-deg",
            &alpha.to_string(),
            "--noise",
            "0.002",
        ]));
        assert!((num(&r["b_gauss"]) - b).abs() < num(&row["b_sigma_gauss"]), "{r}");
        let alphas = r["alpha_candidates_deg"].as_array().unwrap();
        assert!((num(&alphas[1]) - alpha).abs() < num(&row["alpha_sigma_deg"]), "{r}");
        assert!(num(&r["alpha_sigma_deg"]) > 0.0);

        // the written spectrum fits to the same answer
        let again = result(&run(&["odmr", "--spectrum", s(&dir.path().join("spectrum.csv"))]));
        assert_eq!(again["b_gauss"], r["b_gauss"]);
    }
}

#[test]
fn zero_field_is_degenerate() {
    let out = run(&["odmr", "--field-gauss", "0", "--alpha-deg", "30"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("field magnitude is zero"), "{}", stderr(&out));
}

#[test]
fn unresolved_triplets_are_reported() {
    let out = run(&["odmr", "--field-gauss", "1", "--alpha-deg", "0", "--linewidth", "3"]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("overlap"), "{}", stderr(&out));
}

struct Synthetic {
    dir: TempDir,
}

impl Synthetic {
    fn scans(&self) -> PathBuf {
        self.dir.path().join("scans")
    }
    fn spectra(&self) -> PathBuf {
        self.dir.path().join("spectra")
    }
}

/// Scans and spectra for the three tilted fixture axes under a field at
/// (8.59, 182.54) degrees.
fn synthetic_run() -> Synthetic {
    let dir = TempDir::new().unwrap();
    let syn = Synthetic { dir };
    let out = run(&[
        "--out",
        s(&syn.scans()),
        "simulate-pattern",
        "--orientations",
        s(&fixture("nv_orientations.json")),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["NV0.csv", "NV0.pgm", "NV0.json"] {
        std::fs::remove_file(syn.scans().join(f)).unwrap();
    }
    std::fs::create_dir_all(syn.spectra()).unwrap();
    let b = axis(8.59, 182.54);
    for (label, theta, phi) in [("NV1", 109.84, 20.60), ("NV2", 109.25, 260.51), ("NV3", 109.31, 140.74)] {
        let n = axis(theta, phi);
        let cos: f64 = n.iter().zip(&b).map(|(x, y)| x * y).sum();
        let alpha = cos.acos().to_degrees().to_string();
        let tmp = syn.dir.path().join(format!("tmp_{label}"));
        let out = run(&["--out", s(&tmp), "odmr", "--field-gauss", "59.5", "--alpha-deg", &alpha]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        std::fs::copy(tmp.join("spectrum.csv"), syn.spectra().join(format!("{label}.csv"))).unwrap();
    }
    syn
}

/// Spectra fix the field only up to sign.
fn field_error_deg(r: &Value, expected: (f64, f64)) -> f64 {
    let u = axis(num(&r["theta_b_deg"]), num(&r["phi_b_deg"]));
    let v = axis(expected.0, expected.1);
    let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
    dot.abs().min(1.0).acos().to_degrees()
}

#[test]
fn pipeline_end_to_end() {
    let syn = synthetic_run();

    let r = result(&run(&[
        "pipeline",
        "--scans",
        s(&syn.scans()),
        "--spectra",
        s(&syn.spectra()),
        "--crystal",
        "111",
        "--crystal-azimuth",
        "20.6",
    ]));
    assert_eq!(r["errors"].as_array().unwrap().len(), 0, "{}", r["errors"]);
    let rec = &r["reconstruction"];
    assert!(field_error_deg(rec, (8.59, 182.54)) < 0.1, "{rec}");
    assert!((num(&rec["b_mean_gauss"]) - 59.5).abs() < 0.01);

    // without a crystal reference the answer is known up to a half turn about z
    let r = result(&run(&["pipeline", "--scans", s(&syn.scans()), "--spectra", s(&syn.spectra())]));
    let rec = &r["reconstruction"];
    let direct = field_error_deg(rec, (8.59, 182.54));
    let partner = field_error_deg(&rec["azimuth_partner"], (8.59, 182.54));
    assert!(direct.min(partner) < 0.1, "{rec}");
}

#[test]
fn pipeline_reports_bad_files_and_keeps_going() {
    let syn = synthetic_run();
    write(&syn.scans(), "broken.csv", "x_nm,y_nm,intensity\n1,2\n");
    write(&syn.spectra(), "lonely.csv", "frequency_mhz,contrast\n2800,1\n2801,1\n");
    std::fs::copy(syn.scans().join("NV1.csv"), syn.scans().join("orphan.csv")).unwrap();

    let out = run(&["pipeline", "--scans", s(&syn.scans()), "--spectra", s(&syn.spectra())]);
    let r = result(&out);
    let errors: Vec<String> = r["errors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["file"].as_str().unwrap().to_owned())
        .collect();
    assert!(errors.iter().any(|f| f.ends_with("broken.csv")), "{errors:?}");
    assert!(errors.iter().any(|f| f.ends_with("lonely.csv")), "{errors:?}");
    assert!(errors.iter().any(|f| f == "orphan"), "{errors:?}");
    assert_eq!(r["paired"].as_array().unwrap().len(), 3);
    assert!(r["reconstruction"].is_object());
}

#[test]
fn pipeline_with_too_few_pairs_keeps_partial_results() {
    let syn = synthetic_run();
    std::fs::remove_file(syn.spectra().join("NV3.csv")).unwrap();
    let out = run(&["pipeline", "--scans", s(&syn.scans()), "--spectra", s(&syn.spectra())]);
    assert_eq!(code(&out), 2);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["result"]["orientations"].as_array().unwrap().len(), 3);
    assert!(doc["result"]["reconstruction_error"].is_string());
}

#[test]
fn pipeline_rejects_empty_directories() {
    let dir = TempDir::new().unwrap();
    std::fs::create_dir_all(dir.path().join("a")).unwrap();
    std::fs::create_dir_all(dir.path().join("b")).unwrap();
    let out = run(&[
        "pipeline",
        "--scans",
        s(&dir.path().join("a")),
        "--spectra",
        s(&dir.path().join("b")),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}
