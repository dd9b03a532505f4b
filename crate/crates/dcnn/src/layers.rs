//! Layers of the network, each with an explicit cache and exact backward pass.

use gridbary_core::GridMeasure;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NORM_EPS: f64 = 1e-5;

/// A `channels x height x width` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    fn ensure_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Channel-wise concatenation.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "concat: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Self {
            channels: self.channels + other.channels,
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Splits off the first `channels` channels.
    pub fn split(mut self, channels: usize) -> (Self, Self) {
        let rest = self.data.split_off(channels * self.plane());
        let tail = Self {
            channels: self.channels - channels,
            height: self.height,
            width: self.width,
            data: rest,
        };
        self.channels = channels;
        (self, tail)
    }

    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            data: self.data.iter().map(|&v| v * s).collect(),
            ..*self
        }
    }
}

/// 3x3 kernels and biases of a convolution, stored `[cout][cin][3][3]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub cin: usize,
    pub cout: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvParams<T> {
    pub fn zeros(cin: usize, cout: usize) -> Self {
        Self {
            cin,
            cout,
            weight: vec![T::zero(); cout * cin * 9],
            bias: vec![T::zero(); cout],
        }
    }
}

/// Unfolded input patches, `[cin * 9][h * w]`.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    shape: [usize; 3],
}

fn im2col<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (h, w) = (x.height, x.width);
    let plane = h * w;
    let mut cols = vec![T::zero(); x.channels * 9 * plane];
    for c in 0..x.channels {
        let src = x.channel(c);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * w..][..w];
                    let drow = &mut row[y * w..][..w];
                    // Columns shift by kx - 1 with zero fill at the border.
                    match kx {
                        0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                        1 => drow.copy_from_slice(srow),
                        _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], shape: [usize; 3]) -> Tensor<T> {
    let [ch, h, w] = shape;
    let plane = h * w;
    let mut x = Tensor::zeros(ch, h, w);
    for c in 0..ch {
        let dst = &mut x.data[c * plane..][..plane];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(c * 9 + ky * 3 + kx) * plane..][..plane];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..][..w];
                    let srow = &row[y * w..][..w];
                    let (d, s) = match kx {
                        0 => (&mut drow[..w - 1], &srow[1..]),
                        1 => (&mut drow[..], srow),
                        _ => (&mut drow[1..], &srow[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
    if x.channels != p.cin || p.weight.len() != p.cout * p.cin * 9 || p.bias.len() != p.cout {
        return Err(Error::ShapeMismatch(format!(
            "conv {}->{} applied to {:?}",
            p.cin,
            p.cout,
            x.shape()
        )));
    }
    let plane = x.plane();
    let cols = im2col(x);
    let mut y = Tensor::zeros(p.cout, x.height, x.width);
    for (c, &b) in p.bias.iter().enumerate() {
        y.data[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = b);
    }
    T::gemm(p.cout, p.cin * 9, plane, &p.weight, false, &cols, false, &mut y.data, true);
    Ok((y, ConvCache { cols, shape: x.shape() }))
}

/// Returns `(grad_x, grad_params)`. With `need_input = false` the input
/// gradient is skipped and returned as zeros.
pub fn conv2d_backward<T: Scalar>(
    gy: &Tensor<T>,
    cache: &ConvCache<T>,
    p: &ConvParams<T>,
    need_input: bool,
) -> Result<(Tensor<T>, ConvParams<T>)> {
    let [_, h, w] = cache.shape;
    if gy.shape() != [p.cout, h, w] {
        return Err(Error::ShapeMismatch(format!(
            "conv gradient {:?}, expected {:?}",
            gy.shape(),
            [p.cout, h, w]
        )));
    }
    let plane = h * w;
    let k = p.cin * 9;
    let mut g = ConvParams::zeros(p.cin, p.cout);
    T::gemm(p.cout, plane, k, &gy.data, false, &cache.cols, true, &mut g.weight, false);
    for (c, b) in g.bias.iter_mut().enumerate() {
        *b = gy.channel(c).iter().copied().sum();
    }
    let gx = if need_input {
        let mut gcols = vec![T::zero(); k * plane];
        T::gemm(k, p.cout, plane, &p.weight, true, &gy.data, false, &mut gcols, false);
        col2im(&gcols, cache.shape)
    } else {
        Tensor::zeros(cache.shape[0], h, w)
    };
    Ok((gx, g))
}

/// Per-channel affine parameters of an instance normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> NormParams<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            gamma: vec![T::zero(); channels],
            beta: vec![T::zero(); channels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<f64>,
}

pub fn instance_norm_forward<T: Scalar>(x: &Tensor<T>, p: &NormParams<T>) -> Result<(Tensor<T>, NormCache<T>)> {
    if p.gamma.len() != x.channels || p.beta.len() != x.channels {
        return Err(Error::ShapeMismatch(format!(
            "norm over {} channels applied to {:?}",
            p.gamma.len(),
            x.shape()
        )));
    }
    let n = x.plane() as f64;
    let mut xhat = Tensor::zeros(x.channels, x.height, x.width);
    let mut y = Tensor::zeros(x.channels, x.height, x.width);
    let mut inv_std = Vec::with_capacity(x.channels);
    let plane = x.plane();
    for c in 0..x.channels {
        let src = x.channel(c);
        let mean = src.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let var = src.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
        let is = 1.0 / (var + NORM_EPS).sqrt();
        inv_std.push(is);
        let (g, b) = (p.gamma[c], p.beta[c]);
        for i in 0..plane {
            let h = T::from_f64_lossy((src[i].to_f64_lossy() - mean) * is);
            xhat.data[c * plane + i] = h;
            y.data[c * plane + i] = g * h + b;
        }
    }
    Ok((y, NormCache { xhat, inv_std }))
}

pub fn instance_norm_backward<T: Scalar>(
    gy: &Tensor<T>,
    cache: &NormCache<T>,
    p: &NormParams<T>,
) -> Result<(Tensor<T>, NormParams<T>)> {
    cache.xhat.ensure_shape(gy, "norm gradient")?;
    let plane = gy.plane();
    let n = plane as f64;
    let mut gx = Tensor::zeros(gy.channels, gy.height, gy.width);
    let mut g = NormParams::zeros(gy.channels);
    for c in 0..gy.channels {
        let dy = gy.channel(c);
        let xh = cache.xhat.channel(c);
        let sum_dy: f64 = dy.iter().map(|v| v.to_f64_lossy()).sum();
        let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy()).sum();
        g.beta[c] = T::from_f64_lossy(sum_dy);
        g.gamma[c] = T::from_f64_lossy(sum_dy_xh);
        let k = p.gamma[c].to_f64_lossy() * cache.inv_std[c];
        let (m1, m2) = (sum_dy / n, sum_dy_xh / n);
        for i in 0..plane {
            let v = k * (dy[i].to_f64_lossy() - m1 - xh[i].to_f64_lossy() * m2);
            gx.data[c * plane + i] = T::from_f64_lossy(v);
        }
    }
    Ok((gx, g))
}

pub fn relu_forward<T: Scalar>(x: &mut Tensor<T>) {
    x.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Masks `g` where the ReLU output `y` is not positive.
pub fn relu_backward<T: Scalar>(g: &mut Tensor<T>, y: &Tensor<T>) {
    for (a, &b) in g.data.iter_mut().zip(&y.data) {
        if b <= T::zero() {
            *a = T::zero();
        }
    }
}

pub fn avgpool2_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if !x.height.is_multiple_of(2) || !x.width.is_multiple_of(2) {
        return Err(Error::OddDimension {
            height: x.height,
            width: x.width,
        });
    }
    let (h, w) = (x.height / 2, x.width / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut y = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.channel(c);
        for r in 0..h {
            for q in 0..w {
                let i = 2 * r * x.width + 2 * q;
                let s = src[i] + src[i + 1] + src[i + x.width] + src[i + x.width + 1];
                y.data[(c * h + r) * w + q] = s * quarter;
            }
        }
    }
    Ok(y)
}

pub fn avgpool2_backward<T: Scalar>(gy: &Tensor<T>) -> Tensor<T> {
    let quarter = T::from_f64_lossy(0.25);
    let (h, w) = (gy.height * 2, gy.width * 2);
    let mut gx = Tensor::zeros(gy.channels, h, w);
    for c in 0..gy.channels {
        for r in 0..h {
            for q in 0..w {
                gx.data[(c * h + r) * w + q] = gy.data[(c * gy.height + r / 2) * gy.width + q / 2] * quarter;
            }
        }
    }
    gx
}

pub fn upsample2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut y = Tensor::zeros(x.channels, h, w);
    for c in 0..x.channels {
        for r in 0..h {
            for q in 0..w {
                y.data[(c * h + r) * w + q] = x.data[(c * x.height + r / 2) * x.width + q / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(gy: &Tensor<T>) -> Result<Tensor<T>> {
    if !gy.height.is_multiple_of(2) || !gy.width.is_multiple_of(2) {
        return Err(Error::OddDimension {
            height: gy.height,
            width: gy.width,
        });
    }
    let four = T::from_f64_lossy(4.0);
    let mut g = avgpool2_forward(gy)?;
    g.data.iter_mut().for_each(|v| *v = *v * four);
    Ok(g)
}

/// Softmax over every cell of a one-channel logit map, in `f64`.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<GridMeasure> {
    if logits.channels != 1 {
        return Err(Error::ShapeMismatch(format!("softmax over {:?}", logits.shape())));
    }
    let z: Vec<f64> = logits.data.iter().map(|v| v.to_f64_lossy()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    Ok(gridbary_core::normalize(logits.height, logits.width, &e)?)
}

/// Prediction and `KL(target || prediction)`.
pub fn softmax_kl_forward<T: Scalar>(logits: &Tensor<T>, target: &GridMeasure) -> Result<(GridMeasure, f64)> {
    if (logits.channels, logits.height, logits.width) != (1, target.height(), target.width()) {
        return Err(Error::ShapeMismatch(format!(
            "logits {:?} vs target {:?}",
            logits.shape(),
            target.shape()
        )));
    }
    let z: Vec<f64> = logits.data.iter().map(|v| v.to_f64_lossy()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    let loss = target
        .mass()
        .iter()
        .zip(&z)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &v)| t * (t.ln() - (v - lse)))
        .sum();
    Ok((softmax(logits)?, loss))
}

pub fn softmax_kl_backward<T: Scalar>(prediction: &GridMeasure, target: &GridMeasure) -> Result<Tensor<T>> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            prediction.shape(),
            target.shape()
        )));
    }
    let g = prediction
        .mass()
        .iter()
        .zip(target.mass())
        .map(|(p, t)| T::from_f64_lossy(p - t))
        .collect();
    Tensor::from_vec(1, target.height(), target.width(), g)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::rngs::StdRng as Rng64;
    use rand::{Rng, SeedableRng};

    pub(crate) fn random_tensor(rng: &mut Rng64, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_vec(rng: &mut Rng64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Relative error with a small absolute floor for near-zero gradients.
    pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    /// Checks `grad` against central differences of `loss` at every coordinate of `x`.
    fn check(x: &mut [f64], grad: &[f64], loss: &mut dyn FnMut(&[f64]) -> f64) {
        let h = 1e-6;
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let up = loss(x);
            x[i] = orig - h;
            let down = loss(x);
            x[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(rel_err(fd, grad[i]) <= 1e-3, "coordinate {i}: fd {fd} vs analytic {}", grad[i]);
        }
    }

    /// Scalar probe `sum(r * y)` used to turn layer outputs into a loss.
    fn probe(y: &Tensor<f64>, r: &[f64]) -> f64 {
        y.data.iter().zip(r).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut rng = Rng64::seed_from_u64(1);
        let x = random_tensor(&mut rng, 1, 4, 5);
        let mut p = ConvParams::zeros(1, 1);
        p.weight[4] = 1.0;
        assert_eq!(conv2d_forward(&x, &p).unwrap().0, x);
    }

    #[test]
    fn ones_kernel_sums_neighborhoods() {
        let x = Tensor::from_vec(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        let mut p = ConvParams::zeros(1, 1);
        p.weight.iter_mut().for_each(|v| *v = 1.0);
        let y = conv2d_forward(&x, &p).unwrap().0;
        // cell (1,1): rows 0..3, cols 0..3 of 0..15 = 0+1+2+4+5+6+8+9+10
        assert_eq!(y.data[5], 45.0);
        // corner (0,0): 0+1+4+5
        assert_eq!(y.data[0], 10.0);
    }

    #[test]
    fn conv_gradients_match_differences() {
        let mut rng = Rng64::seed_from_u64(2);
        let x = random_tensor(&mut rng, 2, 4, 5);
        let mut p = ConvParams::zeros(2, 3);
        p.weight = random_vec(&mut rng, p.weight.len());
        p.bias = random_vec(&mut rng, 3);
        let r = random_vec(&mut rng, 3 * 20);
        let (_, cache) = conv2d_forward(&x, &p).unwrap();
        let gy = Tensor::from_vec(3, 4, 5, r.clone()).unwrap();
        let (gx, gp) = conv2d_backward(&gy, &cache, &p, true).unwrap();

        let mut xs = x.data.clone();
        check(&mut xs, &gx.data, &mut |v| {
            probe(&conv2d_forward(&Tensor::from_vec(2, 4, 5, v.to_vec()).unwrap(), &p).unwrap().0, &r)
        });
        let mut ws = p.weight.clone();
        check(&mut ws, &gp.weight, &mut |v| {
            let q = ConvParams { weight: v.to_vec(), ..p.clone() };
            probe(&conv2d_forward(&x, &q).unwrap().0, &r)
        });
        let mut bs = p.bias.clone();
        check(&mut bs, &gp.bias, &mut |v| {
            let q = ConvParams { bias: v.to_vec(), ..p.clone() };
            probe(&conv2d_forward(&x, &q).unwrap().0, &r)
        });
    }

    #[test]
    fn conv_rejects_wrong_channels() {
        let x = Tensor::<f64>::zeros(2, 4, 4);
        assert!(matches!(conv2d_forward(&x, &ConvParams::zeros(3, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn norm_standardizes_channels() {
        let mut rng = Rng64::seed_from_u64(3);
        let x = random_tensor(&mut rng, 3, 6, 6);
        let y = instance_norm_forward(&x, &NormParams::identity(3)).unwrap().0;
        for c in 0..3 {
            let ch = y.channel(c);
            let mean = ch.iter().sum::<f64>() / 36.0;
            let var = ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 36.0;
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-4);
        }
        let flat = Tensor::from_vec(1, 3, 3, vec![2.5; 9]).unwrap();
        let y = instance_norm_forward(&flat, &NormParams::identity(1)).unwrap().0;
        assert!(y.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn norm_gradients_match_differences() {
        let mut rng = Rng64::seed_from_u64(4);
        let x = random_tensor(&mut rng, 2, 3, 4);
        let p = NormParams {
            gamma: random_vec(&mut rng, 2),
            beta: random_vec(&mut rng, 2),
        };
        let r = random_vec(&mut rng, 24);
        let (_, cache) = instance_norm_forward(&x, &p).unwrap();
        let gy = Tensor::from_vec(2, 3, 4, r.clone()).unwrap();
        let (gx, gp) = instance_norm_backward(&gy, &cache, &p).unwrap();
        let mut xs = x.data.clone();
        check(&mut xs, &gx.data, &mut |v| {
            probe(&instance_norm_forward(&Tensor::from_vec(2, 3, 4, v.to_vec()).unwrap(), &p).unwrap().0, &r)
        });
        let mut gs = p.gamma.clone();
        check(&mut gs, &gp.gamma, &mut |v| {
            let q = NormParams { gamma: v.to_vec(), beta: p.beta.clone() };
            probe(&instance_norm_forward(&x, &q).unwrap().0, &r)
        });
        let mut bs = p.beta.clone();
        check(&mut bs, &gp.beta, &mut |v| {
            let q = NormParams { gamma: p.gamma.clone(), beta: v.to_vec() };
            probe(&instance_norm_forward(&x, &q).unwrap().0, &r)
        });
    }

    #[test]
    fn pooling_and_upsampling_keep_constants() {
        let x = Tensor::from_vec(2, 4, 6, vec![1.5; 48]).unwrap();
        assert!(avgpool2_forward(&x).unwrap().data.iter().all(|&v| v == 1.5));
        assert!(upsample2_forward(&x).data.iter().all(|&v| v == 1.5));
        let mut rng = Rng64::seed_from_u64(5);
        let coarse = random_tensor(&mut rng, 2, 3, 2);
        let blocky = upsample2_forward(&coarse);
        assert_eq!(upsample2_forward(&avgpool2_forward(&blocky).unwrap()), blocky);
        assert!(matches!(
            avgpool2_forward(&Tensor::<f64>::zeros(1, 3, 4)),
            Err(Error::OddDimension { .. })
        ));
    }

    #[test]
    fn pooling_gradients_match_differences() {
        let mut rng = Rng64::seed_from_u64(6);
        let x = random_tensor(&mut rng, 2, 4, 6);
        let r = random_vec(&mut rng, 12);
        let gx = avgpool2_backward(&Tensor::from_vec(2, 2, 3, r.clone()).unwrap());
        let mut xs = x.data.clone();
        check(&mut xs, &gx.data, &mut |v| {
            probe(&avgpool2_forward(&Tensor::from_vec(2, 4, 6, v.to_vec()).unwrap()).unwrap(), &r)
        });

        let s = random_tensor(&mut rng, 2, 2, 3);
        let r = random_vec(&mut rng, 48);
        let gs = upsample2_backward(&Tensor::from_vec(2, 4, 6, r.clone()).unwrap()).unwrap();
        let mut ss = s.data.clone();
        check(&mut ss, &gs.data, &mut |v| {
            probe(&upsample2_forward(&Tensor::from_vec(2, 2, 3, v.to_vec()).unwrap()), &r)
        });
    }

    #[test]
    fn softmax_kl_closed_forms() {
        let delta = GridMeasure::delta(4, 4, 1, 2).unwrap();
        let (p, loss) = softmax_kl_forward(&Tensor::<f64>::zeros(1, 4, 4), &delta).unwrap();
        assert!((loss - 16f64.ln()).abs() < 1e-12);
        assert!((p.total() - 1.0).abs() < 1e-12);

        let mut rng = Rng64::seed_from_u64(7);
        let t = gridbary_core::normalize(4, 4, &(0..16).map(|_| rng.gen_range(0.1..1.0)).collect::<Vec<_>>()).unwrap();
        let logits = Tensor::from_vec(1, 4, 4, t.mass().iter().map(|v| v.ln() + 3.0).collect()).unwrap();
        let (p, loss) = softmax_kl_forward(&logits, &t).unwrap();
        assert!(loss.abs() <= 1e-10);
        let g: Tensor<f64> = softmax_kl_backward(&p, &t).unwrap();
        assert!(g.data.iter().all(|v| v.abs() <= 1e-10));
    }

    #[test]
    fn softmax_kl_gradient_matches_differences() {
        let mut rng = Rng64::seed_from_u64(8);
        let t = gridbary_core::normalize(3, 4, &(0..12).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>()).unwrap();
        let z = random_tensor(&mut rng, 1, 3, 4);
        let (p, _) = softmax_kl_forward(&z, &t).unwrap();
        let g: Tensor<f64> = softmax_kl_backward(&p, &t).unwrap();
        let mut zs = z.data.clone();
        check(&mut zs, &g.data, &mut |v| {
            softmax_kl_forward(&Tensor::from_vec(1, 3, 4, v.to_vec()).unwrap(), &t).unwrap().1
        });
        assert!(softmax_kl_forward(&Tensor::<f64>::zeros(1, 3, 3), &t).is_err());
    }
}
