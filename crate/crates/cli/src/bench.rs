//! Wall-clock timing of barycenter methods on generated contour pairs.

use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use gridbary_core::bary::BaryMethod;
use gridbary_core::dataset::generate_shape;
use gridbary_core::ot::SolverConfig;
use gridbary_core::shapes::ShapeGenConfig;
use gridbary_core::{BarycentricWeights, GridMeasure};
use gridbary_dcnn::{load_checkpoint, ModelConfig, ModelWeights};

use crate::exit::config;
use crate::BenchArgs;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub size: usize,
    pub n_inputs: usize,
    pub reps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub threads: String,
    pub hardware: String,
    pub reference: String,
    pub note: String,
}

/// Timings reported for 512x512 inputs on a GPU machine; shown, never compared.
const PUBLISHED_ROWS: [(&str, f64); 4] = [
    ("model", 9.2),
    ("dense", 1410.0),
    ("sparse", 589.0),
    ("radon", 200.0),
];

fn hardware() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{}-{} {} cores", std::env::consts::OS, std::env::consts::ARCH, cores)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 * q).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Times `f` once untimed, then `reps` times.
pub fn time_reps(reps: usize, mut f: impl FnMut() -> Result<GridMeasure>) -> Result<Vec<f64>> {
    f()?;
    (0..reps)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64() * 1e3)
        })
        .collect()
}

enum Runner {
    Model(Box<ModelWeights<f32>>),
    Oracle(BaryMethod),
}

fn runner(method: &str, size: usize, args: &BenchArgs) -> Result<Runner> {
    if method != "model" {
        return Ok(Runner::Oracle(method.parse()?));
    }
    let w = match &args.model {
        Some(p) => {
            let w = load_checkpoint(p, None)?;
            anyhow::ensure!(
                w.config().size == size,
                "checkpoint is for {}x{} grids",
                w.config().size,
                w.config().size
            );
            w
        }
        None => ModelWeights::init(&ModelConfig::small(size)?, args.seed)?,
    };
    Ok(Runner::Model(Box::new(w)))
}

fn bench_one(method: &str, size: usize, inputs: &[GridMeasure], args: &BenchArgs, threads: &str) -> BenchRow {
    let lambda = BarycentricWeights::uniform(inputs.len()).expect("two inputs");
    let solver = SolverConfig::with_eps(args.eps);
    let mut row = BenchRow {
        method: method.to_string(),
        size,
        n_inputs: inputs.len(),
        reps: 0,
        mean_ms: f64::NAN,
        median_ms: f64::NAN,
        p95_ms: f64::NAN,
        threads: threads.to_string(),
        hardware: hardware(),
        reference: String::new(),
        note: String::new(),
    };
    let reps = if method == "model" {
        args.reps
    } else {
        args.oracle_reps.unwrap_or(args.reps)
    };
    let timed = runner(method, size, args).and_then(|r| {
        time_reps(reps, || match &r {
            Runner::Model(w) => Ok(gridbary_dcnn::predict(w, inputs, &lambda)?),
            Runner::Oracle(m) => Ok(m.compute(inputs, &lambda, &solver)?),
        })
    });
    match timed {
        Ok(mut t) => {
            t.sort_by(f64::total_cmp);
            row.reps = t.len();
            row.mean_ms = t.iter().sum::<f64>() / t.len() as f64;
            row.median_ms = percentile(&t, 0.5);
            row.p95_ms = percentile(&t, 0.95);
        }
        Err(e) => {
            log::warn!("{method} at {size}x{size} skipped: {e:#}");
            row.note = format!("skipped: {e:#}");
        }
    }
    row
}

pub fn bench_rows(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    anyhow::ensure!(args.reps >= 1, "reps must be at least 1");
    let threads = args.threads.as_str();
    let pool = match threads {
        "single" => Some(rayon::ThreadPoolBuilder::new().num_threads(1).build()?),
        "max" => None,
        other => anyhow::bail!("unknown thread mode `{other}` (single or max)"),
    };
    let mut rows = Vec::new();
    for &size in &args.sizes {
        let shapes = ShapeGenConfig::new(size, args.seed)?;
        let inputs = vec![generate_shape(&shapes, 0)?.0, generate_shape(&shapes, 1)?.0];
        for method in &args.methods {
            let run = || bench_one(method, size, &inputs, args, threads);
            rows.push(match &pool {
                Some(p) => p.install(run),
                None => run(),
            });
        }
    }
    for (method, ms) in PUBLISHED_ROWS {
        rows.push(BenchRow {
            method: method.into(),
            size: 512,
            n_inputs: 2,
            reps: 1000,
            mean_ms: ms,
            median_ms: f64::NAN,
            p95_ms: f64::NAN,
            threads: String::new(),
            hardware: "GPU".into(),
            reference: "published".into(),
            note: "published timing, not measured here".into(),
        });
    }
    Ok(rows)
}

pub fn run(args: BenchArgs) -> Result<()> {
    let rows = bench_rows(&args).context(config("bench settings"))?;
    println!(
        "{:<16} {:>5} {:>3} {:>6} {:>12} {:>12} {:>12}  note",
        "method", "size", "n", "reps", "mean ms", "median ms", "p95 ms"
    );
    for r in &rows {
        let note = if r.reference.is_empty() {
            r.note.clone()
        } else {
            format!("reference={} {}", r.reference, r.note)
        };
        println!(
            "{:<16} {:>5} {:>3} {:>6} {:>12.3} {:>12.3} {:>12.3}  {}",
            r.method, r.size, r.n_inputs, r.reps, r.mean_ms, r.median_ms, r.p95_ms, note
        );
    }
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out)?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
