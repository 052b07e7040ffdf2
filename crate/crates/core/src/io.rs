//! Text and image formats for scans and spectra.
//!
//! Scan CSV layout:
//!
//! ```text
//! width,height,pitch_nm,origin_x_nm,origin_y_nm
//! 31,31,50,-750,-750
//! v(0,0),v(1,0),...          <- one line per image row, row 0 first
//! ```
//!
//! Spectrum CSV layout: a `frequency_mhz,contrast` header followed by one
//! sample per line.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pattern::{ScanGrid, ScanImage};
use crate::spin::Spectrum;

const SCAN_HEADER: &str = "width,height,pitch_nm,origin_x_nm,origin_y_nm";
const SPECTRUM_HEADER: &str = "frequency_mhz,contrast";

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse {:?} as a number", field.trim())))
}

fn parse_usize(field: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("line {line}: cannot parse {:?} as a count", field.trim())))
}

pub fn scan_to_csv(image: &ScanImage) -> String {
    let g = &image.grid;
    let mut out = String::new();
    out.push_str(SCAN_HEADER);
    out.push('\n');
    let _ = writeln!(
        out,
        "{},{},{},{},{}",
        g.width_px, g.height_px, g.pitch_nm, g.origin_nm[0], g.origin_nm[1]
    );
    for row in image.values.chunks(g.width_px) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn scan_from_csv(text: &str) -> Result<ScanImage> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (n, header) = lines.next().ok_or_else(|| Error::Parse("empty scan file".into()))?;
    if header.replace(' ', "") != SCAN_HEADER {
        return Err(Error::Parse(format!("line {n}: expected header {SCAN_HEADER:?}")));
    }
    let (n, meta) = lines
        .next()
        .ok_or_else(|| Error::Parse("missing grid description line".into()))?;
    let fields: Vec<&str> = meta.split(',').collect();
    if fields.len() != 5 {
        return Err(Error::Parse(format!("line {n}: expected 5 grid fields, got {}", fields.len())));
    }
    let grid = ScanGrid {
        width_px: parse_usize(fields[0], n)?,
        height_px: parse_usize(fields[1], n)?,
        pitch_nm: parse_f64(fields[2], n)?,
        origin_nm: [parse_f64(fields[3], n)?, parse_f64(fields[4], n)?],
    };
    grid.validate()?;

    let mut values = Vec::with_capacity(grid.len());
    let mut rows = 0;
    for (n, line) in lines {
        let row: Vec<&str> = line.split(',').collect();
        if row.len() != grid.width_px {
            return Err(Error::Parse(format!(
                "line {n}: expected {} values, got {}",
                grid.width_px,
                row.len()
            )));
        }
        for field in row {
            values.push(parse_f64(field, n)?);
        }
        rows += 1;
    }
    if rows != grid.height_px {
        return Err(Error::Parse(format!(
            "expected {} data rows, found {rows}",
            grid.height_px
        )));
    }
    ScanImage::new(grid, values)
}

/// Min-max scaling applied when writing a graymap preview.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraymapScaling {
    pub min: f64,
    pub max: f64,
    pub maxval: u16,
}

/// Writes a binary PGM (P5). `bits` must be 8 or 16.
pub fn write_pgm<W: Write>(image: &ScanImage, bits: u8, mut out: W) -> Result<GraymapScaling> {
    let maxval: u16 = match bits {
        8 => 255,
        16 => 65535,
        _ => return Err(Error::InvalidParameter(format!("graymap depth must be 8 or 16, got {bits}"))),
    };
    let (min, max) = (image.min(), image.max());
    let span = max - min;
    write!(out, "P5\n{} {}\n{}\n", image.grid.width_px, image.grid.height_px, maxval)?;
    let mut bytes = Vec::with_capacity(image.values.len() * if bits == 8 { 1 } else { 2 });
    for &v in &image.values {
        let scaled = if span > 0.0 { (v - min) / span } else { 0.0 };
        let level = (scaled * maxval as f64).round() as u16;
        if bits == 8 {
            bytes.push(level as u8);
        } else {
            bytes.extend_from_slice(&level.to_be_bytes());
        }
    }
    out.write_all(&bytes)?;
    Ok(GraymapScaling { min, max, maxval })
}

pub fn spectrum_to_csv(spectrum: &Spectrum) -> String {
    let mut out = String::from(SPECTRUM_HEADER);
    out.push('\n');
    for (f, c) in spectrum.frequencies.iter().zip(&spectrum.contrast) {
        let _ = writeln!(out, "{f},{c}");
    }
    out
}

pub fn spectrum_from_csv(text: &str) -> Result<Spectrum> {
    let mut frequencies = Vec::new();
    let mut contrast = Vec::new();
    let mut saw_header = false;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if !saw_header {
            if line.replace(' ', "") != SPECTRUM_HEADER {
                return Err(Error::Parse(format!("line {n}: expected header {SPECTRUM_HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Parse(format!("line {n}: expected 2 columns, got {}", fields.len())));
        }
        frequencies.push(parse_f64(fields[0], n)?);
        contrast.push(parse_f64(fields[1], n)?);
    }
    if !saw_header {
        return Err(Error::Parse("empty spectrum file".into()));
    }
    Spectrum::new(frequencies, contrast)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_image() -> ScanImage {
        let grid = ScanGrid::new(3, 2, 25.0, [-25.0, -12.5]).unwrap();
        ScanImage::new(grid, vec![0.0, 1.5, 2.0, 3.25, 4.0, 1e-3]).unwrap()
    }

    #[test]
    fn scan_csv_layout() {
        let text = scan_to_csv(&sample_image());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], SCAN_HEADER);
        assert_eq!(lines[1], "3,2,25,-25,-12.5");
        assert_eq!(lines[2], "0,1.5,2");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn truncated_scan_is_a_parse_error() {
        let text = scan_to_csv(&sample_image());
        let truncated: String = text.lines().take(3).collect::<Vec<_>>().join("\n");
        assert!(matches!(scan_from_csv(&truncated), Err(Error::Parse(_))));
        let short_row = text.replace("0,1.5,2", "0,1.5");
        assert!(matches!(scan_from_csv(&short_row), Err(Error::Parse(_))));
        assert!(matches!(scan_from_csv(""), Err(Error::Parse(_))));
    }

    #[test]
    fn negative_intensity_rejected() {
        let text = scan_to_csv(&sample_image()).replace("0,1.5,2", "0,-1.5,2");
        assert!(matches!(scan_from_csv(&text), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn pgm_header_and_scaling() {
        let mut buf = Vec::new();
        let s = write_pgm(&sample_image(), 8, &mut buf).unwrap();
        assert_eq!(s.min, 0.0);
        assert_eq!(s.max, 4.0);
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        let pixels = &buf[b"P5\n3 2\n255\n".len()..];
        assert_eq!(pixels, &[0, 96, 128, 207, 255, 0]);

        let mut buf16 = Vec::new();
        write_pgm(&sample_image(), 16, &mut buf16).unwrap();
        assert_eq!(buf16.len(), b"P5\n3 2\n65535\n".len() + 12);
        assert!(write_pgm(&sample_image(), 12, Vec::new()).is_err());
    }

    proptest! {
        #[test]
        fn scan_csv_round_trip(w in 1usize..6, h in 1usize..6, pitch in 0.5f64..200.0,
                               seed in proptest::collection::vec(0.0f64..1e6, 36)) {
            let grid = ScanGrid::centered(w, h, pitch).unwrap();
            let image = ScanImage::new(grid, seed[..w * h].to_vec()).unwrap();
            let back = scan_from_csv(&scan_to_csv(&image)).unwrap();
            prop_assert_eq!(back, image);
        }

        #[test]
        fn spectrum_csv_round_trip(start in 2500.0f64..3000.0, step in 0.01f64..5.0,
                                   contrast in proptest::collection::vec(0.5f64..1.0, 2..40)) {
            let freqs: Vec<f64> = (0..contrast.len()).map(|i| start + step * i as f64).collect();
            let s = Spectrum::new(freqs, contrast).unwrap();
            let back = spectrum_from_csv(&spectrum_to_csv(&s)).unwrap();
            prop_assert_eq!(back.frequencies, s.frequencies);
            prop_assert_eq!(back.contrast, s.contrast);
        }
    }
}
