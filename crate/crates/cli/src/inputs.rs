//! Shared argument handling: thread caps, measure loading, weights and output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gridbary_core::io::{decode_pgm, load_measure, save_measure, save_pgm_preview};
use gridbary_core::{BarycentricWeights, GridMeasure};

use crate::exit::config;

pub const THREADS_ENV: &str = "GRIDBARY_THREADS";

/// Caps the global worker pool at `GRIDBARY_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .with_context(|| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn load_input(path: &Path) -> Result<GridMeasure> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let m = if is_pgm {
        decode_pgm(&fs::read(path)?)?
    } else {
        load_measure(path)?
    };
    Ok(m)
}

pub fn load_inputs(paths: &[PathBuf]) -> Result<Vec<GridMeasure>> {
    let inputs = paths
        .iter()
        .map(|p| load_input(p).with_context(|| config(format!("reading {}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    for (m, p) in inputs.iter().zip(paths) {
        if m.shape() != inputs[0].shape() {
            return Err(anyhow::anyhow!(
                "{} is {:?} but {} is {:?}",
                p.display(),
                m.shape(),
                paths[0].display(),
                inputs[0].shape()
            ))
            .context(config("inputs differ in shape"));
        }
    }
    Ok(inputs)
}

/// Uniform weights by default; weights that do not sum to one are normalized with a warning.
pub fn weights(given: Option<Vec<f64>>, n: usize) -> Result<BarycentricWeights> {
    let w = match given {
        None => BarycentricWeights::uniform(n),
        Some(w) => {
            if w.len() != n {
                return Err(anyhow::anyhow!("{} weights for {n} inputs", w.len())).context(config("bad weights"));
            }
            BarycentricWeights::normalized(w).map(|(w, changed)| {
                if changed {
                    log::warn!("weights normalized to {:?}", w.as_slice());
                }
                w
            })
        }
    };
    w.context(config("bad weights"))
}

/// Writes `m` as WBGM and an 8-bit preview with the `.pgm` extension.
pub fn write_output(m: &GridMeasure, out: &Path) -> Result<PathBuf> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if out.extension().is_some_and(|e| e == "pgm") {
        bail!("output {} must not use the preview extension .pgm", out.display());
    }
    save_measure(m, out)?;
    let preview = out.with_extension("pgm");
    save_pgm_preview(m, &preview)?;
    Ok(preview)
}
