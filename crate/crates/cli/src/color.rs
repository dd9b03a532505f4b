use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;

use gridbary_core::bary::BaryMethod;
use gridbary_core::color::{
    chroma_histogram, color_transfer, lab_to_srgb, load_png, psnr, save_png, srgb_to_lab, ColorTransferConfig,
    HistogramSpec,
};
use gridbary_core::io::save_measure;
use gridbary_core::ot::SolverConfig;
use gridbary_core::{l1_distance, GridMeasure};
use gridbary_dcnn::load_checkpoint;

use crate::exit::{config, generation};
use crate::inputs::weights;
use crate::ColorArgs;

#[derive(Debug, Serialize)]
struct Diagnostics {
    method: String,
    n_sources: usize,
    weights: Vec<f64>,
    bins: usize,
    eps: f64,
    source_histogram_totals: Vec<f64>,
    barycenter_total: f64,
    /// L1 between the model's and the oracle's barycenter histograms.
    model_vs_oracle_l1: Option<f64>,
    psnr_vs_target: f64,
    timings_ms: BTreeMap<&'static str, f64>,
}

fn oracle_method(name: &str) -> Result<BaryMethod> {
    let name = if name == "oracle" { "linearized" } else { name };
    Ok(name.parse()?)
}

pub fn run(args: ColorArgs) -> Result<()> {
    let mut timings = BTreeMap::new();
    let clock = Instant::now();
    let target_rgb = load_png(&args.target).with_context(|| config(format!("reading {}", args.target.display())))?;
    let mut sources_rgb = args
        .sources
        .iter()
        .map(|p| load_png(p).with_context(|| config(format!("reading {}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    // A single source with weight 1 runs as two duplicates with weights 1/2.
    let lambda = if sources_rgb.len() == 1 {
        sources_rgb.push(sources_rgb[0].clone());
        weights(None, 2)?
    } else {
        weights(args.weights.clone(), sources_rgb.len())?
    };
    let spec = HistogramSpec::new(args.bins).context(config("histogram bins"))?;
    let mut cfg = ColorTransferConfig {
        histogram: spec,
        ..ColorTransferConfig::default()
    };
    if let Some(eps) = args.eps {
        anyhow::ensure!(eps > 0.0 && eps.is_finite(), config(format!("bad chroma eps {eps}")));
        cfg.eps = eps;
    }
    let solver = SolverConfig::with_eps(args.oracle_eps);
    solver.validate().context(config("oracle settings"))?;
    let model = if args.method == "model" {
        let path = args.model.as_deref().context(config("method `model` needs --model"))?;
        let w = load_checkpoint(path, None).with_context(|| config(format!("loading {}", path.display())))?;
        anyhow::ensure!(
            w.config().size == args.bins,
            config(format!(
                "model expects {}x{} histograms but --bins is {}",
                w.config().size,
                w.config().size,
                args.bins
            ))
        );
        Some(w)
    } else {
        oracle_method(&args.method).context(config("method"))?;
        None
    };

    let target = srgb_to_lab(&target_rgb);
    let sources: Vec<_> = sources_rgb.iter().map(srgb_to_lab).collect();
    let hists = sources
        .iter()
        .map(|s| chroma_histogram(s, &spec))
        .collect::<gridbary_core::Result<Vec<_>>>()
        .context(generation("source histograms"))?;
    timings.insert("load_and_histograms", clock.elapsed().as_secs_f64() * 1e3);

    let t = Instant::now();
    let oracle = |name: &str| -> Result<GridMeasure> {
        oracle_method(name)?
            .compute(&hists, &lambda, &solver)
            .context(generation("barycenter"))
    };
    let (barycenter, model_vs_oracle) = match &model {
        Some(w) => {
            let predicted = gridbary_dcnn::predict(w, &hists, &lambda).context(generation("model barycenter"))?;
            timings.insert("barycenter", t.elapsed().as_secs_f64() * 1e3);
            let reference = oracle("oracle")?;
            let d = l1_distance(&predicted, &reference)?;
            log::info!("L1 between model and oracle histograms: {d:.4}");
            (predicted, Some((d, reference)))
        }
        None => {
            let b = oracle(&args.method)?;
            timings.insert("barycenter", t.elapsed().as_secs_f64() * 1e3);
            (b, None)
        }
    };

    let t = Instant::now();
    let out_lab = color_transfer(&target, &sources, &lambda, &barycenter, &cfg).context(generation("color transfer"))?;
    let out_rgb = lab_to_srgb(&out_lab);
    timings.insert("transfer", t.elapsed().as_secs_f64() * 1e3);
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_png(&out_rgb, &args.out)?;

    if let Some(dir) = &args.keep_intermediates {
        fs::create_dir_all(dir)?;
        for (i, h) in hists.iter().enumerate() {
            save_measure(h, dir.join(format!("source_{i}.wbgm")))?;
        }
        save_measure(&chroma_histogram(&target, &spec)?, dir.join("target.wbgm"))?;
        save_measure(&barycenter, dir.join("barycenter.wbgm"))?;
        if let Some((_, reference)) = &model_vs_oracle {
            save_measure(reference, dir.join("oracle_barycenter.wbgm"))?;
        }
    }
    let quality = psnr(&out_rgb, &target_rgb)?;
    if let Some(path) = &args.diag {
        let diag = Diagnostics {
            method: args.method.clone(),
            n_sources: sources.len(),
            weights: lambda.as_slice().to_vec(),
            bins: args.bins,
            eps: cfg.eps,
            source_histogram_totals: hists.iter().map(|h| h.total()).collect(),
            barycenter_total: barycenter.total(),
            model_vs_oracle_l1: model_vs_oracle.as_ref().map(|m| m.0),
            psnr_vs_target: quality,
            timings_ms: timings,
        };
        fs::write(path, serde_json::to_string_pretty(&diag)?)?;
    }
    println!(
        "recolored {} from {} sources with {}: PSNR vs input {:.2} dB; wrote {}",
        args.target.display(),
        sources.len(),
        args.method,
        quality,
        args.out.display()
    );
    Ok(())
}
