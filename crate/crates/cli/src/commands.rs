use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Deserialize;

use gridbary_core::bary::BaryMethod;
use gridbary_core::dataset::{generate_dataset, DatasetManifest, MANIFEST_FILE};
use gridbary_core::ot::SolverConfig;
use gridbary_core::shapes::ShapeGenConfig;
use gridbary_core::{BarycentricWeights, GridMeasure};
use gridbary_dcnn::{load_checkpoint, ModelConfig, TrainConfig};

use crate::exit::{config, generation};
use crate::inputs::{load_inputs, weights, write_output};
use crate::{BaryArgs, EvalArgs, GenDatasetArgs, PredictArgs, TrainArgs};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenConfig {
    size: usize,
    #[serde(default)]
    seed: u64,
    n_shapes: usize,
    n_pairs: usize,
    #[serde(default = "default_oracle")]
    oracle: String,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn default_oracle() -> String {
    "linearized".into()
}

fn default_eps() -> f64 {
    1e-3
}

pub fn gen_dataset(args: GenDatasetArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).with_context(|| config(format!("reading {}", args.config.display())))?;
    let cfg: GenConfig = serde_json::from_str(&text).context(config("parsing dataset config"))?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let shapes = ShapeGenConfig::new(cfg.size, seed).context(config("shape settings"))?;
    let oracle: BaryMethod = cfg.oracle.parse().context(config("oracle"))?;
    let solver = SolverConfig::with_eps(cfg.eps);
    solver.validate().context(config("solver settings"))?;
    let out = args
        .out
        .or(cfg.out)
        .context(config("no output directory in the config or on the command line"))?;
    if cfg.n_shapes == 0 || cfg.n_pairs == 0 {
        return Err(anyhow::anyhow!("n_shapes and n_pairs must be positive")).context(config("dataset size"));
    }

    let start = Instant::now();
    let manifest = generate_dataset(&shapes, cfg.n_shapes, cfg.n_pairs, oracle, &solver, &out)
        .context(generation("dataset generation failed"))?;
    manifest.validate(&out).context(generation("generated dataset failed validation"))?;
    println!(
        "wrote {} shapes and {} pairs ({} targets) to {} in {:.1}s",
        cfg.n_shapes,
        manifest.records.len(),
        oracle,
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn predict_with(model: &Path, inputs: &[GridMeasure], w: &BarycentricWeights) -> Result<GridMeasure> {
    let weights = load_checkpoint(model, None).with_context(|| config(format!("loading {}", model.display())))?;
    let expected = weights.config().size;
    if inputs[0].shape() != (expected, expected) {
        return Err(anyhow::anyhow!(
            "model expects {expected}x{expected} inputs, got {:?}",
            inputs[0].shape()
        ))
        .context(config("input size"));
    }
    Ok(gridbary_dcnn::predict(&weights, inputs, w)?)
}

pub fn bary(args: BaryArgs) -> Result<()> {
    let inputs = load_inputs(&args.inputs)?;
    let w = weights(args.weights, inputs.len())?;
    let start = Instant::now();
    let out = if args.method == "model" {
        let model = args.model.as_deref().context(config("method `model` needs --model"))?;
        predict_with(model, &inputs, &w)?
    } else {
        let method: BaryMethod = args.method.parse().context(config("method"))?;
        let solver = SolverConfig::with_eps(args.eps);
        solver.validate().context(config("solver settings"))?;
        method.compute(&inputs, &w, &solver)?
    };
    let preview = write_output(&out, &args.out)?;
    let (r, c) = out.argmax();
    println!(
        "{} barycenter of {} inputs in {:.3}s, peak at ({r}, {c}); wrote {} and {}",
        args.method,
        inputs.len(),
        start.elapsed().as_secs_f64(),
        args.out.display(),
        preview.display()
    );
    Ok(())
}

fn read_manifest(data: &Path) -> Result<DatasetManifest> {
    let path = data.join(MANIFEST_FILE);
    let m = DatasetManifest::read(&path).with_context(|| config(format!("reading {}", path.display())))?;
    if m.records.is_empty() {
        return Err(anyhow::anyhow!("{} has no records", path.display())).context(config("empty dataset"));
    }
    Ok(m)
}

fn grid_size(data: &Path, m: &DatasetManifest) -> Result<usize> {
    let first = gridbary_core::io::load_measure(data.join(&m.records[0].target)).context(config("reading the first target"))?;
    let (h, w) = first.shape();
    if h != w {
        return Err(anyhow::anyhow!("targets are {h}x{w}, the model needs square grids")).context(config("grid shape"));
    }
    Ok(h)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let manifest = read_manifest(&args.data)?;
    let size = grid_size(&args.data, &manifest)?;
    let model = ModelConfig::new(size, args.depth, args.widths.clone()).context(config("model settings"))?;
    let mut cfg = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| config(format!("reading {}", p.display())))?)
            .context(config("parsing training config"))?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = args.$field { cfg.$field = v; })* };
    }
    set!(epochs, batch_size, lr_max, lr_min, t0, t_mult, momentum, seed);
    if args.checkpoint_every.is_some() {
        cfg.checkpoint_every = args.checkpoint_every;
    }
    if args.checkpoint_dir.is_some() {
        cfg.checkpoint_dir = args.checkpoint_dir.clone();
    }
    if args.log.is_some() {
        cfg.log_path = args.log.clone();
    }
    if args.max_steps.is_some() {
        cfg.max_steps = args.max_steps;
    }
    cfg.validate().context(config("training settings"))?;
    let samples = gridbary_dcnn::load_samples(&manifest, &args.data, size).context(config("loading the dataset"))?;

    let start = Instant::now();
    let (weights, log) = gridbary_dcnn::train(&model, &cfg, &samples)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    gridbary_dcnn::save_checkpoint(&weights, &args.out)?;
    println!(
        "trained on {} records for {} steps in {:.1}s: loss {:.5} -> {:.5}; wrote {}",
        samples.len(),
        log.entries.len(),
        start.elapsed().as_secs_f64(),
        log.first_loss().unwrap_or(f64::NAN),
        log.last_loss().unwrap_or(f64::NAN),
        args.out.display()
    );
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let inputs = load_inputs(&args.inputs)?;
    let w = weights(args.weights, inputs.len())?;
    let out = predict_with(&args.model, &inputs, &w)?;
    let preview = write_output(&out, &args.out)?;
    println!("wrote {} and {}", args.out.display(), preview.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let manifest = read_manifest(&args.data)?;
    let size = grid_size(&args.data, &manifest)?;
    let samples = gridbary_dcnn::load_samples(&manifest, &args.data, size).context(config("loading the dataset"))?;
    let report = if args.self_targets {
        let targets: Vec<GridMeasure> = samples.iter().map(|s| s.target.clone()).collect();
        gridbary_dcnn::evaluate_predictions(&targets, &samples)?
    } else {
        let path = args.model.as_deref().context(config("--model is required"))?;
        let weights = load_checkpoint(path, None).with_context(|| config(format!("loading {}", path.display())))?;
        if weights.config().size != size {
            return Err(anyhow::anyhow!(
                "model size {} vs dataset size {size}",
                weights.config().size
            ))
            .context(config("grid size"));
        }
        gridbary_dcnn::evaluate(&weights, &samples)?
    };
    report.write_csv(&args.out)?;
    println!(
        "{} records: mean KL {:.5}, median KL {:.5}, uniform baseline mean KL {:.5}; wrote {}",
        report.rows.len(),
        report.mean_kl(),
        report.median_kl(),
        report.uniform_mean_kl(),
        args.out.display()
    );
    Ok(())
}
