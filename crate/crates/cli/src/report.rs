use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use vortexmag::Result;

pub fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

pub fn deg4(rad: f64) -> f64 {
    round_to(rad.to_degrees(), 4)
}

pub fn deg2(rad: f64) -> f64 {
    round_to(rad.to_degrees(), 2)
}

pub struct Envelope<'a> {
    pub command: &'a str,
    pub config_hash: &'a str,
    pub seed: u64,
}

impl Envelope<'_> {
    pub fn wrap<T: Serialize>(&self, result: T) -> Value {
        json!({
            "tool": "vortexmag",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "config_sha256": self.config_hash,
            "seed": self.seed,
            "result": result,
        })
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
