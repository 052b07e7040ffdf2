use std::f64::consts::PI;

use vortexmag::crystal::nearest_tetrahedral_axis;
use vortexmag::focal_field::OpticalConfig;
use vortexmag::io::{scan_from_csv, scan_to_csv};
use vortexmag::orient_fit::{ambiguity_distance, fit_orientation};
use vortexmag::pattern::{simulate_pattern, NVOrientation, ScanGrid, ScanImage};
use vortexmag::simplex::SimplexSettings;

fn setup() -> (OpticalConfig, ScanGrid) {
    (OpticalConfig::default(), ScanGrid::centered(25, 25, 60.0).unwrap())
}

#[test]
fn fit_of_rotated_copy_agrees() {
    let (optics, grid) = setup();
    let truth = NVOrientation::from_degrees(109.25, 260.51).unwrap();
    let img = simulate_pattern(truth, &grid, &optics, 1.0, 0.05, None).unwrap();
    let mut rotated = img.values.clone();
    rotated.reverse();
    let rotated = ScanImage::new(grid.clone(), rotated).unwrap();
    let settings = SimplexSettings::default();
    let a = fit_orientation(&img, &optics, 8, 1, &settings).unwrap();
    let b = fit_orientation(&rotated, &optics, 8, 1, &settings).unwrap();
    assert!(ambiguity_distance(&a.orientation(), &b.orientation()) < 1e-3);
    assert!((a.mirror_phi - a.phi - PI).abs() < 1e-15);
}

#[test]
fn doughnut_fit_flags_azimuth() {
    let (optics, grid) = setup();
    let img = simulate_pattern(NVOrientation::new(0.0, 0.0).unwrap(), &grid, &optics, 1.0, 0.05, None).unwrap();
    let fit = fit_orientation(&img, &optics, 8, 2, &SimplexSettings::default()).unwrap();
    assert!(fit.theta < 2f64.to_radians());
    assert!(!fit.phi_identifiable);
}

#[test]
fn csv_round_trip_then_fit_and_label() {
    let (optics, grid) = setup();
    let truth = NVOrientation::from_degrees(109.84, 20.60).unwrap();
    let img = simulate_pattern(truth, &grid, &optics, 2.0, 0.1, None).unwrap();
    let back = scan_from_csv(&scan_to_csv(&img)).unwrap();
    assert_eq!(back, img);
    let fit = fit_orientation(&back, &optics, 8, 5, &SimplexSettings::default()).unwrap();
    assert!(ambiguity_distance(&fit.orientation(), &truth).to_degrees() < 0.5);
    assert!((fit.amplitude - 2.0).abs() < 1e-3 && (fit.background - 0.1).abs() < 1e-3);
    let label = nearest_tetrahedral_axis(&fit, 20.60f64.to_radians());
    assert!(label.deviation.to_degrees() < 1.0, "{label:?}");
}

#[test]
fn off_center_nv_is_located() {
    let (optics, grid) = setup();
    let truth = NVOrientation::from_degrees(70.0, 45.0).unwrap();
    let pos = [55.0, -40.0];
    let img = vortexmag::pattern::simulate_pattern_at(truth, pos, &grid, &optics, 1.0, 0.0, None).unwrap();
    let fit = fit_orientation(&img, &optics, 8, 9, &SimplexSettings::default()).unwrap();
    assert!((fit.center_nm[0] - pos[0]).abs() < 0.5 && (fit.center_nm[1] - pos[1]).abs() < 0.5, "{fit:?}");
}
