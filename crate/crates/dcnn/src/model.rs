//! The multi-input network: one contractive path per input (shared weights),
//! λ-weighted fusion of their activations at every depth, and one expansive
//! path ending in a softmax over the grid.

use std::cmp::Ordering;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use gridbary_core::rng::stream;
use gridbary_core::{BarycentricWeights, GridMeasure};

use crate::error::{Error, Result};
use crate::layers::*;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Side length of the square input grids.
    pub size: usize,
    pub depth: usize,
    pub widths: Vec<usize>,
}

impl ModelConfig {
    pub fn new(size: usize, depth: usize, widths: Vec<usize>) -> Result<Self> {
        let cfg = Self { size, depth, widths };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Depth 3 with widths `[16, 32, 64]`.
    pub fn small(size: usize) -> Result<Self> {
        Self::new(size, 3, vec![16, 32, 64])
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.widths.len() != self.depth {
            return Err(Error::InvalidConfig(format!(
                "depth {} with {} widths",
                self.depth,
                self.widths.len()
            )));
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|p| p[1] < p[0]) {
            return Err(Error::InvalidConfig(format!(
                "widths {:?} must be positive and nondecreasing",
                self.widths
            )));
        }
        let step = 1usize << (self.depth - 1);
        if self.size < 2 || !self.size.is_multiple_of(step) || self.size / step < 2 {
            return Err(Error::InvalidConfig(format!(
                "grid size {} is not a multiple of {step} with a coarsest level of at least 2",
                self.size
            )));
        }
        Ok(())
    }

    /// Input and output channels of decoder block `j`.
    fn decoder_channels(&self, j: usize) -> (usize, usize) {
        let cin = if j + 1 == self.depth {
            self.widths[j]
        } else {
            2 * self.widths[j]
        };
        (cin, self.widths[j.saturating_sub(1)])
    }
}

/// conv-norm-ReLU-conv-norm-ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T> {
    pub conv1: ConvParams<T>,
    pub norm1: NormParams<T>,
    pub conv2: ConvParams<T>,
    pub norm2: NormParams<T>,
}

impl<T: Scalar> Block<T> {
    fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            conv1: ConvParams::zeros(cin, cout),
            norm1: NormParams::zeros(cout),
            conv2: ConvParams::zeros(cout, cout),
            norm2: NormParams::zeros(cout),
        }
    }
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    c1: ConvCache<T>,
    n1: NormCache<T>,
    r1: Tensor<T>,
    c2: ConvCache<T>,
    n2: NormCache<T>,
    out: Tensor<T>,
}

fn block_forward<T: Scalar>(b: &Block<T>, x: &Tensor<T>) -> Result<BlockCache<T>> {
    let (y, c1) = conv2d_forward(x, &b.conv1)?;
    let (mut r1, n1) = instance_norm_forward(&y, &b.norm1)?;
    relu_forward(&mut r1);
    let (y, c2) = conv2d_forward(&r1, &b.conv2)?;
    let (mut out, n2) = instance_norm_forward(&y, &b.norm2)?;
    relu_forward(&mut out);
    Ok(BlockCache { c1, n1, r1, c2, n2, out })
}

fn block_backward<T: Scalar>(
    b: &Block<T>,
    cache: &BlockCache<T>,
    mut g: Tensor<T>,
    need_input: bool,
) -> Result<(Tensor<T>, Block<T>)> {
    relu_backward(&mut g, &cache.out);
    let (g, norm2) = instance_norm_backward(&g, &cache.n2, &b.norm2)?;
    let (mut g, conv2) = conv2d_backward(&g, &cache.c2, &b.conv2, true)?;
    relu_backward(&mut g, &cache.r1);
    let (g, norm1) = instance_norm_backward(&g, &cache.n1, &b.norm1)?;
    let (gx, conv1) = conv2d_backward(&g, &cache.c1, &b.conv1, need_input)?;
    Ok((gx, Block { conv1, norm1, conv2, norm2 }))
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    config: ModelConfig,
    encoder: Vec<Block<T>>,
    decoder: Vec<Block<T>>,
    head: ConvParams<T>,
    generation: u64,
}

/// A named tensor view: `(name, dims, values)`.
pub type NamedTensor<'a, T> = (String, Vec<usize>, &'a [T]);

impl<T: Scalar> ModelWeights<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let encoder = (0..config.depth)
            .map(|j| Block::zeros(if j == 0 { 1 } else { w[j - 1] }, w[j]))
            .collect();
        let decoder = (0..config.depth)
            .map(|j| {
                let (cin, cout) = config.decoder_channels(j);
                Block::zeros(cin, cout)
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
            head: ConvParams::zeros(w[0], 1),
            generation: 0,
        })
    }

    /// He-normal kernels (`std = sqrt(2 / fan_in)`), zero biases, `γ = 1`, `β = 0`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = stream(seed, "init", 0);
        w.visit_mut(|name, _, values, cin| {
            if name.ends_with(".weight") {
                let normal = Normal::new(0.0, (2.0 / (9 * cin) as f64).sqrt()).expect("positive std");
                values.iter_mut().for_each(|v| *v = T::from_f64_lossy(normal.sample(&mut rng)));
            } else if name.ends_with(".gamma") {
                values.iter_mut().for_each(|v| *v = T::one());
            }
        });
        Ok(w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Bumped by every mutable access; feature caches remember the value they saw.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    fn blocks(&self) -> impl Iterator<Item = (String, &Block<T>)> {
        let enc = self.encoder.iter().enumerate().map(|(j, b)| (format!("encoder.{j}"), b));
        let dec = self.decoder.iter().enumerate().map(|(j, b)| (format!("decoder.{j}"), b));
        enc.chain(dec)
    }

    /// Tensors in a fixed order with their names and dims.
    pub fn tensors(&self) -> Vec<NamedTensor<'_, T>> {
        fn conv<'a, T>(out: &mut Vec<NamedTensor<'a, T>>, name: String, c: &'a ConvParams<T>) {
            out.push((format!("{name}.weight"), vec![c.cout, c.cin, 3, 3], &c.weight[..]));
            out.push((format!("{name}.bias"), vec![c.cout], &c.bias[..]));
        }
        fn norm<'a, T>(out: &mut Vec<NamedTensor<'a, T>>, name: String, n: &'a NormParams<T>) {
            out.push((format!("{name}.gamma"), vec![n.gamma.len()], &n.gamma[..]));
            out.push((format!("{name}.beta"), vec![n.beta.len()], &n.beta[..]));
        }
        let mut out = Vec::new();
        for (p, b) in self.blocks() {
            conv(&mut out, format!("{p}.conv1"), &b.conv1);
            norm(&mut out, format!("{p}.norm1"), &b.norm1);
            conv(&mut out, format!("{p}.conv2"), &b.conv2);
            norm(&mut out, format!("{p}.norm2"), &b.norm2);
        }
        conv(&mut out, "head".into(), &self.head);
        out
    }

    /// Visits tensors in the order of [`tensors`](Self::tensors); the last
    /// argument is the input channel count of the owning layer.
    fn visit_mut(&mut self, mut f: impl FnMut(&str, &[usize], &mut [T], usize)) {
        self.generation += 1;
        let conv = |name: String, c: &mut ConvParams<T>, f: &mut dyn FnMut(&str, &[usize], &mut [T], usize)| {
            f(&format!("{name}.weight"), &[c.cout, c.cin, 3, 3], &mut c.weight, c.cin);
            f(&format!("{name}.bias"), &[c.cout], &mut c.bias, c.cin);
        };
        let norm = |name: String, n: &mut NormParams<T>, f: &mut dyn FnMut(&str, &[usize], &mut [T], usize)| {
            let len = n.gamma.len();
            f(&format!("{name}.gamma"), &[len], &mut n.gamma, len);
            f(&format!("{name}.beta"), &[len], &mut n.beta, len);
        };
        let blocks = self
            .encoder
            .iter_mut()
            .enumerate()
            .map(|(j, b)| (format!("encoder.{j}"), b))
            .chain(self.decoder.iter_mut().enumerate().map(|(j, b)| (format!("decoder.{j}"), b)));
        for (p, b) in blocks {
            conv(format!("{p}.conv1"), &mut b.conv1, &mut f);
            norm(format!("{p}.norm1"), &mut b.norm1, &mut f);
            conv(format!("{p}.conv2"), &mut b.conv2, &mut f);
            norm(format!("{p}.norm2"), &mut b.norm2, &mut f);
        }
        conv("head".into(), &mut self.head, &mut f);
    }

    /// Mutable access to every tensor, in the order of [`tensors`](Self::tensors).
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        self.visit_mut(|name, _, values, _| f(name, values));
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &Self, s: T) -> Result<()> {
        self.ensure_config(other)?;
        let mut src = other.tensors().into_iter().map(|t| t.2);
        self.for_each_tensor_mut(|_, dst| {
            let from = src.next().expect("same layout");
            for (a, &b) in dst.iter_mut().zip(from) {
                *a = *a + s * b;
            }
        });
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        self.for_each_tensor_mut(|_, v| v.iter_mut().for_each(|x| *x = *x * s));
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelWeights<U> {
        let mut out = ModelWeights::<U>::zeros(&self.config).expect("validated config");
        let mut src = self.tensors().into_iter().map(|t| t.2);
        out.for_each_tensor_mut(|_, dst| {
            for (a, &b) in dst.iter_mut().zip(src.next().expect("same layout")) {
                *a = U::from_f64_lossy(b.to_f64_lossy());
            }
        });
        out.generation = 0;
        out
    }

    fn ensure_config(&self, other: &Self) -> Result<()> {
        if self.config != other.config {
            return Err(Error::ConfigMismatch {
                expected: format!("{:?}", self.config),
                found: format!("{:?}", other.config),
            });
        }
        Ok(())
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct FeatureStack<T> {
    generation: u64,
    /// Merged, canonically ordered inputs with their summed weights.
    lambdas: Vec<f64>,
    /// `encoder[i][j]`: block `j` of input `i`; its output is `F_ij`.
    encoder: Vec<Vec<BlockCache<T>>>,
    fused: Vec<Tensor<T>>,
    decoder: Vec<BlockCache<T>>,
    head: ConvCache<T>,
    logits: Tensor<T>,
    prediction: GridMeasure,
}

impl<T: Scalar> FeatureStack<T> {
    pub fn prediction(&self) -> &GridMeasure {
        &self.prediction
    }

    /// Number of distinct inputs with positive weight that were run.
    pub fn paths(&self) -> usize {
        self.lambdas.len()
    }

    pub fn fused(&self, depth: usize) -> &Tensor<T> {
        &self.fused[depth]
    }

    pub fn logits(&self) -> &Tensor<T> {
        &self.logits
    }

    /// `KL(target || prediction)` computed from the logits.
    pub fn loss(&self, target: &GridMeasure) -> Result<f64> {
        Ok(softmax_kl_forward(&self.logits, target)?.1)
    }
}

fn compare_masses(a: &GridMeasure, b: &GridMeasure) -> Ordering {
    a.mass()
        .iter()
        .zip(b.mass())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Merges bitwise-identical inputs and orders the rest canonically, so the
/// fused sums do not depend on how the inputs were listed.
fn canonical_inputs<'a>(inputs: &'a [GridMeasure], weights: &BarycentricWeights) -> Vec<(&'a GridMeasure, f64)> {
    let mut groups: Vec<(&GridMeasure, Vec<f64>)> = Vec::new();
    for (m, &l) in inputs.iter().zip(weights.as_slice()) {
        if l == 0.0 {
            continue;
        }
        match groups.iter_mut().find(|g| compare_masses(g.0, m).is_eq()) {
            Some(g) => g.1.push(l),
            None => groups.push((m, vec![l])),
        }
    }
    groups.sort_by(|a, b| compare_masses(a.0, b.0));
    groups
        .into_iter()
        .map(|(m, mut ls)| {
            ls.sort_by(f64::total_cmp);
            (m, ls.iter().sum())
        })
        .collect()
}

/// Runs the network. Inputs are scaled so the uniform measure reads 1.
pub fn forward<T: Scalar>(
    w: &ModelWeights<T>,
    inputs: &[GridMeasure],
    weights: &BarycentricWeights,
) -> Result<(GridMeasure, FeatureStack<T>)> {
    let cfg = &w.config;
    if inputs.is_empty() || inputs.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} inputs with {} weights",
            inputs.len(),
            weights.len()
        )));
    }
    for m in inputs {
        if m.shape() != (cfg.size, cfg.size) {
            return Err(Error::ShapeMismatch(format!(
                "input {:?} for a model of size {}",
                m.shape(),
                cfg.size
            )));
        }
    }
    let n = cfg.size;
    let scale = (n * n) as f64;
    let paths = canonical_inputs(inputs, weights);

    let mut encoder = Vec::with_capacity(paths.len());
    for (m, _) in &paths {
        let data = m.mass().iter().map(|&v| T::from_f64_lossy(v * scale)).collect();
        let mut x = Tensor::from_vec(1, n, n, data)?;
        let mut caches: Vec<BlockCache<T>> = Vec::with_capacity(cfg.depth);
        for (j, b) in w.encoder.iter().enumerate() {
            let c = block_forward(b, &x)?;
            if j + 1 < cfg.depth {
                x = avgpool2_forward(&c.out)?;
            }
            caches.push(c);
        }
        encoder.push(caches);
    }

    let fused: Vec<Tensor<T>> = (0..cfg.depth)
        .map(|j| {
            let first = &encoder[0][j].out;
            let mut f = Tensor::zeros(first.channels, first.height, first.width);
            for (caches, &(_, l)) in encoder.iter().zip(&paths) {
                f.add_scaled(&caches[j].out, T::from_f64_lossy(l));
            }
            f
        })
        .collect();

    let mut decoder: Vec<Option<BlockCache<T>>> = vec![None; cfg.depth];
    let mut y: Option<Tensor<T>> = None;
    for j in (0..cfg.depth).rev() {
        let z = match y.take() {
            None => fused[j].clone(),
            Some(prev) => upsample2_forward(&prev).concat(&fused[j])?,
        };
        let c = block_forward(&w.decoder[j], &z)?;
        y = Some(c.out.clone());
        decoder[j] = Some(c);
    }
    let (logits, head) = conv2d_forward(&y.expect("depth >= 1"), &w.head)?;
    let prediction = softmax(&logits)?;
    let stack = FeatureStack {
        generation: w.generation,
        lambdas: paths.iter().map(|p| p.1).collect(),
        encoder,
        fused,
        decoder: decoder.into_iter().map(|c| c.expect("every depth decoded")).collect(),
        head,
        logits,
        prediction: prediction.clone(),
    };
    Ok((prediction, stack))
}

/// Prediction only.
pub fn predict<T: Scalar>(w: &ModelWeights<T>, inputs: &[GridMeasure], weights: &BarycentricWeights) -> Result<GridMeasure> {
    Ok(forward(w, inputs, weights)?.0)
}

/// Gradients of `KL(target || prediction)` with respect to every weight.
pub fn backward<T: Scalar>(w: &ModelWeights<T>, stack: &FeatureStack<T>, target: &GridMeasure) -> Result<ModelWeights<T>> {
    if stack.generation != w.generation {
        return Err(Error::StaleCache {
            cached: stack.generation,
            current: w.generation,
        });
    }
    let cfg = &w.config;
    let mut grads = ModelWeights::zeros(cfg)?;

    let g = softmax_kl_backward::<T>(&stack.prediction, target)?;
    let (mut g, head) = conv2d_backward(&g, &stack.head, &w.head, true)?;
    grads.head = head;

    let mut g_fused: Vec<Option<Tensor<T>>> = vec![None; cfg.depth];
    for j in 0..cfg.depth {
        let (gz, gb) = block_backward(&w.decoder[j], &stack.decoder[j], g, true)?;
        grads.decoder[j] = gb;
        if j + 1 == cfg.depth {
            g_fused[j] = Some(gz);
            break;
        }
        let (gu, gf) = gz.split(cfg.widths[j]);
        g_fused[j] = Some(gf);
        g = upsample2_backward(&gu)?;
    }
    let g_fused: Vec<Tensor<T>> = g_fused.into_iter().map(|g| g.expect("every depth")).collect();

    for (caches, &l) in stack.encoder.iter().zip(&stack.lambdas) {
        let l = T::from_f64_lossy(l);
        let mut from_below: Option<Tensor<T>> = None;
        for j in (0..cfg.depth).rev() {
            let mut gf = g_fused[j].scaled(l);
            if let Some(gb) = from_below.take() {
                gf.add_scaled(&avgpool2_backward(&gb), T::one());
            }
            let (gx, gb) = block_backward(&w.encoder[j], &caches[j], gf, j > 0)?;
            add_block(&mut grads.encoder[j], &gb);
            from_below = Some(gx);
        }
    }
    Ok(grads)
}

fn add_block<T: Scalar>(dst: &mut Block<T>, src: &Block<T>) {
    let add = |a: &mut [T], b: &[T]| a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
    add(&mut dst.conv1.weight, &src.conv1.weight);
    add(&mut dst.conv1.bias, &src.conv1.bias);
    add(&mut dst.norm1.gamma, &src.norm1.gamma);
    add(&mut dst.norm1.beta, &src.norm1.beta);
    add(&mut dst.conv2.weight, &src.conv2.weight);
    add(&mut dst.conv2.bias, &src.conv2.bias);
    add(&mut dst.norm2.gamma, &src.norm2.gamma);
    add(&mut dst.norm2.beta, &src.norm2.beta);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::tests::rel_err;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_measure(rng: &mut StdRng, n: usize) -> GridMeasure {
        let m: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0f64..1.0).powi(4)).collect();
        gridbary_core::normalize(n, n, &m).unwrap()
    }

    fn w2(a: f64) -> BarycentricWeights {
        BarycentricWeights::new(vec![a, 1.0 - a]).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(32, 3, vec![16, 32, 64]).is_ok());
        assert!(ModelConfig::new(30, 3, vec![16, 32, 64]).is_err());
        assert!(ModelConfig::new(32, 3, vec![16, 8, 64]).is_err());
        assert!(ModelConfig::new(32, 2, vec![16, 32, 64]).is_err());
        assert!(ModelConfig::new(4, 3, vec![1, 1, 1]).is_err());
    }

    #[test]
    fn he_init_statistics() {
        let cfg = ModelConfig::new(16, 2, vec![16, 32]).unwrap();
        let w = ModelWeights::<f64>::init(&cfg, 3).unwrap();
        assert_eq!(w, ModelWeights::<f64>::init(&cfg, 3).unwrap());
        assert_ne!(w, ModelWeights::<f64>::init(&cfg, 4).unwrap());
        // Every kernel with 16 input channels has fan-in 144.
        let mut samples = Vec::new();
        for (name, dims, v) in w.tensors() {
            if name.ends_with(".weight") && dims[1] * 9 == 144 {
                samples.extend_from_slice(v);
            }
            if name.ends_with(".bias") || name.ends_with(".beta") {
                assert!(v.iter().all(|&x| x == 0.0));
            }
            if name.ends_with(".gamma") {
                assert!(v.iter().all(|&x| x == 1.0));
            }
        }
        assert!(samples.len() >= 10_000, "{}", samples.len());
        let var = samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64;
        assert!((var / (2.0 / 144.0) - 1.0).abs() < 0.2, "variance {var}");
    }

    #[test]
    fn output_is_a_measure() {
        let cfg = ModelConfig::new(16, 3, vec![4, 8, 8]).unwrap();
        let w = ModelWeights::<f32>::init(&cfg, 1).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let ins = [random_measure(&mut rng, 16), random_measure(&mut rng, 16)];
        let p = predict(&w, &ins, &w2(0.3)).unwrap();
        assert!((p.total() - 1.0).abs() < 1e-12);
        assert!(p.mass().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn duplicates_merge_and_order_is_irrelevant() {
        let cfg = ModelConfig::new(16, 2, vec![4, 8]).unwrap();
        let w = ModelWeights::<f32>::init(&cfg, 2).unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        let (mu, nu) = (random_measure(&mut rng, 16), random_measure(&mut rng, 16));
        let three = BarycentricWeights::new(vec![0.3, 0.2, 0.5]).unwrap();
        let a = predict(&w, &[mu.clone(), mu.clone(), nu.clone()], &three).unwrap();
        let b = predict(&w, &[mu.clone(), nu.clone()], &w2(0.5)).unwrap();
        assert_eq!(a, b);
        let c = predict(&w, &[nu.clone(), mu.clone()], &w2(0.25)).unwrap();
        let d = predict(&w, &[mu.clone(), nu.clone()], &w2(0.75)).unwrap();
        assert_eq!(c, d);
        let e = predict(&w, &[mu.clone(), mu.clone()], &w2(0.4)).unwrap();
        let f = predict(&w, &[mu.clone(), mu], &w2(0.7)).unwrap();
        assert_eq!(e, f);
    }

    #[test]
    fn rejects_wrong_shapes() {
        let cfg = ModelConfig::new(16, 2, vec![4, 8]).unwrap();
        let w = ModelWeights::<f32>::init(&cfg, 2).unwrap();
        let u = GridMeasure::uniform(8, 8).unwrap();
        assert!(matches!(
            predict(&w, &[u.clone(), u], &w2(0.5)),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn stale_cache_is_detected() {
        let cfg = ModelConfig::new(8, 2, vec![2, 2]).unwrap();
        let mut w = ModelWeights::<f64>::init(&cfg, 2).unwrap();
        let u = GridMeasure::uniform(8, 8).unwrap();
        let (_, stack) = forward(&w, &[u.clone(), u.clone()], &w2(0.5)).unwrap();
        w.scale(0.5);
        assert!(matches!(backward(&w, &stack, &u), Err(Error::StaleCache { .. })));
    }

    fn loss_at(w: &ModelWeights<f64>, ins: &[GridMeasure], l: &BarycentricWeights, t: &GridMeasure) -> f64 {
        forward(w, ins, l).unwrap().1.loss(t).unwrap()
    }

    #[test]
    fn network_gradient_matches_differences() {
        let cfg = ModelConfig::new(16, 2, vec![4, 8]).unwrap();
        let w = ModelWeights::<f64>::init(&cfg, 11).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let ins = [random_measure(&mut rng, 16), random_measure(&mut rng, 16)];
        let t = random_measure(&mut rng, 16);
        let l = w2(0.35);
        let (_, stack) = forward(&w, &ins, &l).unwrap();
        let grads = backward(&w, &stack, &t).unwrap();
        let flat: Vec<(String, usize, f64)> = grads
            .tensors()
            .into_iter()
            .flat_map(|(name, _, v)| v.iter().enumerate().map(move |(i, &g)| (name.clone(), i, g)).collect::<Vec<_>>())
            .collect();
        let h = 1e-5;
        for _ in 0..50 {
            let (name, i, g) = flat[rng.gen_range(0..flat.len())].clone();
            let perturbed = |d: f64| {
                let mut p = w.clone();
                p.for_each_tensor_mut(|n, v| {
                    if n == name {
                        v[i] += d;
                    }
                });
                loss_at(&p, &ins, &l, &t)
            };
            let fd = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            assert!(rel_err(fd, g) <= 5e-3, "{name}[{i}]: fd {fd} vs {g}");
        }
    }

    #[test]
    fn zero_weight_branch_contributes_nothing() {
        let cfg = ModelConfig::new(8, 2, vec![2, 4]).unwrap();
        let w = ModelWeights::<f64>::init(&cfg, 5).unwrap();
        let mut rng = StdRng::seed_from_u64(5);
        let (mu, nu, t) = (random_measure(&mut rng, 8), random_measure(&mut rng, 8), random_measure(&mut rng, 8));
        let one = BarycentricWeights::new(vec![1.0, 0.0]).unwrap();
        let (pa, sa) = forward(&w, &[mu.clone(), nu], &one).unwrap();
        let (pb, sb) = forward(&w, &[mu.clone(), mu.clone()], &w2(0.5)).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(sa.paths(), 1);
        assert_eq!(backward(&w, &sa, &t).unwrap(), backward(&w, &sb, &t).unwrap());
    }

    #[test]
    fn logit_shift_leaves_loss_and_gradient() {
        let cfg = ModelConfig::new(8, 2, vec![2, 4]).unwrap();
        let w = ModelWeights::<f64>::init(&cfg, 6).unwrap();
        let mut shifted = w.clone();
        shifted.for_each_tensor_mut(|n, v| {
            if n == "head.bias" {
                v[0] += 3.0;
            }
        });
        let mut rng = StdRng::seed_from_u64(6);
        let ins = [random_measure(&mut rng, 8), random_measure(&mut rng, 8)];
        let t = random_measure(&mut rng, 8);
        let l = w2(0.6);
        let (_, sa) = forward(&w, &ins, &l).unwrap();
        let (_, sb) = forward(&shifted, &ins, &l).unwrap();
        assert!((sa.loss(&t).unwrap() - sb.loss(&t).unwrap()).abs() < 1e-12);
        let (ga, gb) = (backward(&w, &sa, &t).unwrap(), backward(&shifted, &sb, &t).unwrap());
        for (a, b) in ga.tensors().iter().zip(gb.tensors()) {
            for (x, y) in a.2.iter().zip(b.2) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
