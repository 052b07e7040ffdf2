use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vortexmag::focal_field::OpticalConfig;
use vortexmag::pattern::ScanGrid;
use vortexmag::simplex::SimplexSettings;
use vortexmag::spin::{SpinParams, Sweep};
use vortexmag::vector_recon::ReconSettings;
use vortexmag::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub optics: OpticalConfig,
    pub spin: SpinParams,
    pub fit: FitSection,
    pub scan: ScanSection,
    pub odmr: OdmrSection,
    pub recon: ReconSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub simplex: SimplexSettings,
    pub n_starts: usize,
    pub seed: u64,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            simplex: SimplexSettings::default(),
            n_starts: 12,
            seed: 0,
        }
    }
}

/// Scan used when simulating patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanSection {
    pub width_px: usize,
    pub height_px: usize,
    pub pitch_nm: f64,
    pub amplitude: f64,
    pub background: f64,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            width_px: 31,
            height_px: 31,
            pitch_nm: 50.0,
            amplitude: 1.0,
            background: 0.05,
        }
    }
}

impl ScanSection {
    pub fn grid(&self) -> Result<ScanGrid> {
        ScanGrid::centered(self.width_px, self.height_px, self.pitch_nm)
    }
}

/// Settings for simulated spectra.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OdmrSection {
    pub linewidth_mhz: f64,
    pub contrast_depth: f64,
    pub start_mhz: f64,
    pub stop_mhz: f64,
    pub points: usize,
    pub noise_sigma: f64,
}

impl Default for OdmrSection {
    fn default() -> Self {
        Self {
            linewidth_mhz: 0.5,
            contrast_depth: 0.05,
            start_mhz: 2650.0,
            stop_mhz: 3090.0,
            points: 8801,
            noise_sigma: 0.0,
        }
    }
}

impl OdmrSection {
    pub fn sweep(&self) -> Sweep {
        Sweep {
            start_mhz: self.start_mhz,
            stop_mhz: self.stop_mhz,
            points: self.points,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let config: RunConfig = match path {
            None => RunConfig::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::InvalidParameter(format!("config {}: {e}", p.display())))?
            }
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        self.spin.validate()?;
        self.fit.simplex.validate()?;
        if self.fit.n_starts == 0 {
            return Err(Error::InvalidParameter("fit.n_starts must be at least 1".into()));
        }
        self.scan.grid()?;
        if !(self.scan.amplitude >= 0.0 && self.scan.background >= 0.0) {
            return Err(Error::InvalidParameter("scan amplitude and background must be >= 0".into()));
        }
        self.odmr.sweep().frequencies()?;
        if !(self.odmr.linewidth_mhz > 0.0) || !(0.0..1.0).contains(&self.odmr.contrast_depth) {
            return Err(Error::InvalidParameter("odmr linewidth must be > 0 and depth in [0, 1)".into()));
        }
        if !(self.odmr.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter("odmr.noise_sigma must be >= 0".into()));
        }
        if !(self.recon.condition_bound > 1.0 && self.recon.residual_gate > 0.0) {
            return Err(Error::InvalidParameter(
                "recon.condition_bound must exceed 1 and recon.residual_gate be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
