//! NV axis families of a [111]-cut diamond.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::orient_fit::{ambiguity_distance, OrientationFit};
use crate::pattern::NVOrientation;

/// The four N->V directions of a [111]-cut crystal, with lab z along [111]
/// and the first tilted axis at azimuth `azimuth_offset` (rad).
pub fn tetrahedral_axes(azimuth_offset: f64) -> [Vector3<f64>; 4] {
    let tilt = (-1.0f64 / 3.0).acos();
    let mut axes = [Vector3::z(); 4];
    for (k, axis) in axes.iter_mut().enumerate().skip(1) {
        let phi = azimuth_offset + (k as f64 - 1.0) * 2.0 * PI / 3.0;
        *axis = NVOrientation { theta: tilt, phi }.axis();
    }
    axes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrystalMatch {
    /// Index into [`tetrahedral_axes`].
    pub index: usize,
    pub crystal_axis: NVOrientation,
    /// Member of the fit's ambiguity class closest to the crystal axis.
    pub unfolded: NVOrientation,
    /// Angle between `unfolded` and the crystal axis (rad).
    pub deviation: f64,
}

/// Labels a fitted axis with the nearest tetrahedral direction.
pub fn nearest_tetrahedral_axis(fit: &OrientationFit, azimuth_offset: f64) -> CrystalMatch {
    let fitted = fit.orientation();
    let axes = tetrahedral_axes(azimuth_offset);
    let (index, axis) = axes
        .iter()
        .enumerate()
        .map(|(i, a)| (i, NVOrientation::from_vector(a)))
        .min_by(|(_, a), (_, b)| {
            ambiguity_distance(&fitted, a).total_cmp(&ambiguity_distance(&fitted, b))
        })
        .expect("four axes");

    let u = fitted.axis();
    let target = axis.axis();
    let candidates = [u, -u, Vector3::new(-u.x, -u.y, u.z), Vector3::new(u.x, u.y, -u.z)];
    let best = candidates
        .iter()
        .max_by(|a, b| a.dot(&target).total_cmp(&b.dot(&target)))
        .expect("four candidates");
    CrystalMatch {
        index,
        crystal_axis: axis,
        unfolded: NVOrientation::from_vector(best),
        deviation: best.cross(&target).norm().atan2(best.dot(&target)),
    }
}
