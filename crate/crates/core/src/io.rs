//! On-disk formats for grid measures.
//!
//! WBGM layout (all little-endian): `b"WBGM"`, `u32` version (= 1), `u32`
//! height, `u32` width, then `height * width` `f32` masses in row-major order.
//! Binary P5 PGM files are accepted for ingestion; pixel values are taken as
//! unnormalized mass.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::measure::{normalize, GridMeasure, MASS_TOLERANCE};

pub const WBGM_MAGIC: &[u8; 4] = b"WBGM";
pub const WBGM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Drift beyond this total-mass error is rejected on load.
pub const LOAD_MASS_TOLERANCE: f64 = 1e-4;

/// What [`load_measure_with_report`] had to do to accept a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    /// Mass drifted beyond 1e-6 (but within 1e-4) and was rescaled.
    pub renormalized: bool,
}

pub fn encode_wbgm(m: &GridMeasure) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(WBGM_MAGIC);
    out.extend_from_slice(&WBGM_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.height() as u32).to_le_bytes());
    out.extend_from_slice(&(m.width() as u32).to_le_bytes());
    for &v in m.mass() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_wbgm(bytes: &[u8]) -> Result<(GridMeasure, LoadReport)> {
    if bytes.len() < 4 || &bytes[..4] != WBGM_MAGIC {
        return Err(Error::BadMagic { expected: "WBGM" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedFile {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != WBGM_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let height = word(8) as usize;
    let width = word(12) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(4))
        .ok_or(Error::DimensionMismatch {
            height,
            width,
            got: payload.len() / 4,
        })?;
    if payload.len() < expected {
        return Err(Error::TruncatedFile {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::DimensionMismatch {
            height,
            width,
            got: payload.len() / 4,
        });
    }
    let mass: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    accept_mass(height, width, mass)
}

fn accept_mass(height: usize, width: usize, mass: Vec<f64>) -> Result<(GridMeasure, LoadReport)> {
    let total: f64 = mass.iter().sum();
    if (total - 1.0).abs() <= MASS_TOLERANCE {
        return Ok((GridMeasure::new(height, width, mass)?, LoadReport::default()));
    }
    if (total - 1.0).abs() <= LOAD_MASS_TOLERANCE {
        log::warn!("measure mass {total} drifted from 1, renormalizing");
        let m = normalize(height, width, &mass)?;
        return Ok((m, LoadReport { renormalized: true }));
    }
    Err(Error::MassNotNormalized { total })
}

pub fn save_measure(m: &GridMeasure, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_wbgm(m))?;
    Ok(())
}

/// Loads a WBGM file, or a P5 PGM file (detected by its magic).
pub fn load_measure(path: impl AsRef<Path>) -> Result<GridMeasure> {
    load_measure_with_report(path).map(|(m, _)| m)
}

pub fn load_measure_with_report(path: impl AsRef<Path>) -> Result<(GridMeasure, LoadReport)> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P5") {
        return decode_pgm(&bytes).map(|m| (m, LoadReport::default()));
    }
    decode_wbgm(&bytes)
}

/// Decodes a binary P5 PGM into a normalized measure.
pub fn decode_pgm(bytes: &[u8]) -> Result<GridMeasure> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::BadMagic { expected: "P5" });
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        *field = pgm_header_number(bytes, &mut pos)?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::BadPgm(format!("maxval {maxval} out of range")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::BadPgm("missing raster separator".into())),
    }
    let sample = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n * sample {
        return Err(Error::TruncatedFile {
            expected: n * sample,
            found: raster.len(),
        });
    }
    let values: Vec<f64> = if sample == 1 {
        raster[..n].iter().map(|&v| v as f64).collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64)
            .collect()
    };
    normalize(height, width, &values)
}

fn pgm_header_number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::BadPgm("header ended early".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::BadPgm(format!("expected a number at byte {start}")))
}

/// 8-bit PGM preview scaled so the heaviest cell is white.
pub fn encode_pgm_preview(m: &GridMeasure) -> Vec<u8> {
    let max = m.mass().iter().cloned().fold(0.0, f64::max);
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.mass().iter().map(|&v| {
        if max > 0.0 {
            (v / max * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn save_pgm_preview(m: &GridMeasure, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pgm_preview(m))?;
    Ok(())
}
