//! Paired barycenter datasets stored as a JSON-lines manifest next to WBGM
//! files.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.jsonl
//! shapes/shape_00000.wbgm ...
//! targets/target_00000.wbgm ...
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bary::{linearized_barycenter, precompute_maps, BaryMethod};
use crate::error::{Error, Result};
use crate::io::{decode_wbgm, encode_wbgm, load_measure, save_measure};
use crate::measure::{BarycentricWeights, GridMeasure};
use crate::ot::SolverConfig;
use crate::rng::{derive_seed, stream};
use crate::shapes::{compose_csg, sample_depth_branch, sobel_contour, ShapeGenConfig};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

/// One training pair. Paths are relative to the manifest directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub inputs: Vec<String>,
    pub weights: Vec<f64>,
    pub target: String,
    pub seed: u64,
    pub depths: Vec<u32>,
    pub oracle: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<DatasetRecord>,
}

/// Inputs, weights and target of one record, loaded from disk.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub inputs: Vec<GridMeasure>,
    pub weights: BarycentricWeights,
    pub target: GridMeasure,
}

impl DatasetManifest {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: DatasetRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Manifest(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    /// Checks that every referenced file exists and every weight vector sums to one.
    pub fn validate(&self, base: impl AsRef<Path>) -> Result<()> {
        let base = base.as_ref();
        for (i, r) in self.records.iter().enumerate() {
            if r.inputs.len() < 2 || r.inputs.len() != r.weights.len() {
                return Err(Error::Manifest(format!(
                    "record {i}: {} inputs and {} weights",
                    r.inputs.len(),
                    r.weights.len()
                )));
            }
            BarycentricWeights::new(r.weights.clone())
                .map_err(|e| Error::Manifest(format!("record {i}: {e}")))?;
            for p in r.inputs.iter().chain(std::iter::once(&r.target)) {
                if !base.join(p).is_file() {
                    return Err(Error::Manifest(format!("record {i}: missing file {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn load_record(&self, base: impl AsRef<Path>, index: usize) -> Result<LoadedRecord> {
        let base = base.as_ref();
        let r = self
            .records
            .get(index)
            .ok_or_else(|| Error::Manifest(format!("no record {index}")))?;
        let inputs = r
            .inputs
            .iter()
            .map(|p| load_measure(base.join(p)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LoadedRecord {
            inputs,
            weights: BarycentricWeights::new(r.weights.clone())?,
            target: load_measure(base.join(&r.target))?,
        })
    }
}

/// One random contour measure and its composition depth.
pub fn generate_shape(cfg: &ShapeGenConfig, index: u64) -> Result<(GridMeasure, u32)> {
    let mut rng = stream(cfg.seed, "shape", index);
    let (depth, _) = sample_depth_branch(&mut rng, &cfg.depth);
    let mask = compose_csg(&mut rng, depth, cfg)?;
    Ok((sobel_contour(&mask)?, depth))
}

/// The input indices and weights of pair `index`.
pub fn sample_pair(seed: u64, index: u64, n_shapes: usize) -> (usize, usize, f64) {
    let mut rng = stream(seed, "pair", index);
    let a = rng.gen_range(0..n_shapes);
    let b = rng.gen_range(0..n_shapes);
    let l = rng.gen_range(0.05..0.95);
    (a, b, l)
}

fn shape_path(i: usize) -> String {
    format!("shapes/shape_{i:05}.wbgm")
}

fn target_path(i: usize) -> String {
    format!("targets/target_{i:05}.wbgm")
}

/// Generates `n_shapes` contours and `n_pairs` barycenter targets under `out`,
/// writes the manifest and returns it. The output depends only on the seed.
pub fn generate_dataset(
    cfg: &ShapeGenConfig,
    n_shapes: usize,
    n_pairs: usize,
    oracle: BaryMethod,
    solver: &SolverConfig,
    out: impl AsRef<Path>,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    if n_shapes == 0 || n_pairs == 0 {
        return Err(Error::InvalidConfig("n_shapes and n_pairs must be at least 1".into()));
    }
    let out: PathBuf = out.as_ref().to_path_buf();
    fs::create_dir_all(out.join("shapes"))?;
    fs::create_dir_all(out.join("targets"))?;

    let shapes = (0..n_shapes)
        .into_par_iter()
        .map(|i| generate_shape(cfg, i as u64))
        .collect::<Result<Vec<_>>>()?;
    for (i, (m, _)) in shapes.iter().enumerate() {
        save_measure(m, out.join(shape_path(i)))?;
    }
    log::info!("generated {n_shapes} shapes");

    let pairs: Vec<(usize, usize, f64)> = (0..n_pairs).map(|p| sample_pair(cfg.seed, p as u64, n_shapes)).collect();
    // Targets are computed from the shapes as stored (f32), not the f64 originals.
    let measures = shapes
        .iter()
        .map(|(m, _)| Ok(decode_wbgm(&encode_wbgm(m))?.0))
        .collect::<Result<Vec<GridMeasure>>>()?;

    // Linearized targets reuse one map per shape instead of one per pair.
    let maps = if oracle == BaryMethod::Linearized {
        let mut used: Vec<usize> = pairs.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        used.sort_unstable();
        used.dedup();
        let computed = used
            .par_iter()
            .map(|&i| Ok((i, precompute_maps(std::slice::from_ref(&measures[i]), solver)?.remove(0))))
            .collect::<Result<Vec<_>>>()?;
        let mut maps = vec![None; n_shapes];
        for (i, m) in computed {
            maps[i] = Some(m);
        }
        Some(maps)
    } else {
        None
    };

    let targets = pairs
        .par_iter()
        .map(|&(a, b, l)| {
            let weights = BarycentricWeights::new(vec![l, 1.0 - l])?;
            match &maps {
                Some(maps) => {
                    let pair = [maps[a].clone().expect("map computed"), maps[b].clone().expect("map computed")];
                    linearized_barycenter(&pair, &weights)
                }
                None => oracle.compute(&[measures[a].clone(), measures[b].clone()], &weights, solver),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = DatasetManifest::default();
    for (p, (&(a, b, l), target)) in pairs.iter().zip(&targets).enumerate() {
        save_measure(target, out.join(target_path(p)))?;
        manifest.records.push(DatasetRecord {
            inputs: vec![shape_path(a), shape_path(b)],
            weights: vec![l, 1.0 - l],
            target: target_path(p),
            seed: derive_seed(cfg.seed, "pair", p as u64),
            depths: vec![shapes[a].1, shapes[b].1],
            oracle: oracle.to_string(),
        });
    }
    manifest.write(out.join(MANIFEST_FILE))?;
    log::info!("generated {n_pairs} pairs with {oracle}");
    Ok(manifest)
}
