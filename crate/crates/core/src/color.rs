//! Color transfer through chrominance histograms in CIE-Lab.
//!
//! Luminance is matched in 1-D by monotone rearrangement. Chrominance is moved
//! by the barycentric projection of an entropic plan between the image's
//! `(a, b)` histogram and a target histogram, then cleaned with a guided filter.

use std::path::Path;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{BarycentricWeights, Grid, GridMeasure};
use crate::ot::{accept_best_effort, barycentric_projection, sinkhorn_potentials, SolverConfig};

/// Kernel `exp(-|x - y|^2 / eps)` on the unit chroma square; equals a blur of
/// 0.05 under the half-squared-cost convention `eps' = blur^2`.
pub const DEFAULT_CHROMA_EPS: f64 = 5e-3;
const CHROMA_LO: f64 = -128.0;
const CHROMA_HI: f64 = 127.0;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub l: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LabImage {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn ensure_same_size(&self, other: &LabImage) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch {
                left: (self.height, self.width),
                right: (other.height, other.width),
            });
        }
        Ok(())
    }
}

fn white() -> [f64; 3] {
    let row = |i: usize| SRGB_TO_XYZ[i].iter().sum::<f64>();
    [row(0), row(1), row(2)]
}

fn to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn from_linear(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA.powi(3) {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t.powi(3)
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

pub fn rgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(to_linear);
    let w = white();
    let xyz: Vec<f64> = (0..3)
        .map(|i| SRGB_TO_XYZ[i].iter().zip(&lin).map(|(m, c)| m * c).sum::<f64>() / w[i])
        .collect();
    let (fx, fy, fz) = (lab_f(xyz[0]), lab_f(xyz[1]), lab_f(xyz[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Inverse of [`rgb_to_lab`]; out-of-gamut colors are clipped.
pub fn lab_to_rgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = white();
    let xyz = [lab_f_inv(fx) * w[0], lab_f_inv(fy) * w[1], lab_f_inv(fz) * w[2]];
    let inv = invert3(&SRGB_TO_XYZ);
    let lin: Vec<f64> = inv.iter().map(|row| row.iter().zip(&xyz).map(|(m, c)| m * c).sum()).collect();
    [from_linear(lin[0]), from_linear(lin[1]), from_linear(lin[2])]
}

pub fn srgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = img.dimensions();
    let mut out = LabImage {
        width: w as usize,
        height: h as usize,
        l: Vec::with_capacity((w * h) as usize),
        a: Vec::with_capacity((w * h) as usize),
        b: Vec::with_capacity((w * h) as usize),
    };
    for p in img.pixels() {
        let [l, a, b] = rgb_to_lab(p.0);
        out.l.push(l);
        out.a.push(a);
        out.b.push(b);
    }
    out
}

pub fn lab_to_srgb(img: &LabImage) -> RgbImage {
    RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        image::Rgb(lab_to_rgb([img.l[i], img.a[i], img.b[i]]))
    })
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::Image(e.to_string()))?.to_rgb8())
}

pub fn save_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(e.to_string()))
}

/// Chroma binning: `a` and `b` in `[-128, 127]` map linearly onto `bins x bins`
/// cells covering `[0, 1]^2`; rows index `a`, columns index `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { bins: 64 }
    }
}

impl HistogramSpec {
    pub fn new(bins: usize) -> Result<Self> {
        if bins < 8 {
            return Err(Error::InvalidConfig(format!("need at least 8 chroma bins, got {bins}")));
        }
        Ok(Self { bins })
    }

    /// Normalized `[x, y]` = `[b, a]` coordinate of a chroma pair.
    fn coords(&self, a: f64, b: f64) -> [f64; 2] {
        let u = |v: f64| ((v - CHROMA_LO) / (CHROMA_HI - CHROMA_LO)).clamp(0.0, 1.0);
        [u(b), u(a)]
    }

    fn bin(&self, a: f64, b: f64) -> usize {
        let [x, y] = self.coords(a, b);
        let k = |t: f64| ((t * self.bins as f64) as usize).min(self.bins - 1);
        k(y) * self.bins + k(x)
    }
}

pub fn chroma_histogram(img: &LabImage, spec: &HistogramSpec) -> Result<GridMeasure> {
    if img.is_empty() {
        return Err(Error::InvalidDimensions {
            height: img.height,
            width: img.width,
        });
    }
    let mut counts = vec![0.0; spec.bins * spec.bins];
    for (&a, &b) in img.a.iter().zip(&img.b) {
        counts[spec.bin(a, b)] += 1.0;
    }
    crate::measure::normalize(spec.bins, spec.bins, &counts)
}

/// A 1-D histogram with uniform density inside each bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram1d {
    pub lo: f64,
    pub hi: f64,
    pub mass: Vec<f64>,
}

impl Histogram1d {
    pub fn from_values(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if values.is_empty() || bins == 0 || !(hi > lo) {
            return Err(Error::InvalidConfig("empty luminance histogram".into()));
        }
        let mut mass = vec![0.0; bins];
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let k = (((v - lo) / width).max(0.0) as usize).min(bins - 1);
            mass[k] += 1.0;
        }
        let total = values.len() as f64;
        mass.iter_mut().for_each(|m| *m /= total);
        Ok(Self { lo, hi, mass })
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.mass.len() as f64
    }

    /// Quantile function; strictly increasing in `u` over bins with mass.
    pub fn quantile(&self, u: f64) -> f64 {
        let w = self.bin_width();
        let mut acc = 0.0;
        let mut last = 0;
        for (k, &m) in self.mass.iter().enumerate() {
            if m <= 0.0 {
                continue;
            }
            if u < acc + m {
                return self.lo + (k as f64 + ((u - acc) / m).clamp(0.0, 1.0)) * w;
            }
            acc += m;
            last = k;
        }
        self.lo + (last + 1) as f64 * w
    }
}

/// Weighted 1-D barycenter by averaging quantile functions at `samples`
/// evenly spaced levels, binned like the first input.
pub fn luminance_barycenter(hists: &[Histogram1d], weights: &BarycentricWeights, samples: usize) -> Result<Histogram1d> {
    if hists.is_empty() || hists.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} histograms",
            weights.len(),
            hists.len()
        )));
    }
    let first = &hists[0];
    let bins = first.mass.len();
    let mut mass = vec![0.0; bins];
    for s in 0..samples {
        let u = (s as f64 + 0.5) / samples as f64;
        let q: f64 = hists.iter().zip(weights.as_slice()).map(|(h, l)| l * h.quantile(u)).sum();
        let k = (((q - first.lo) / first.bin_width()).max(0.0) as usize).min(bins - 1);
        mass[k] += 1.0 / samples as f64;
    }
    Ok(Histogram1d {
        lo: first.lo,
        hi: first.hi,
        mass,
    })
}

/// Monotone rearrangement of `values` onto `target`: each value goes to the
/// target quantile at the midpoint of its own CDF step, so equal inputs stay
/// equal and larger inputs move strictly further.
pub fn luminance_transfer(values: &[f64], target: &Histogram1d) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let u = (start + end) as f64 / (2.0 * n as f64);
        let q = target.quantile(u);
        for &i in &order[start..end] {
            out[i] = q;
        }
        start = end;
    }
    out
}

/// Moves every pixel's chroma by the barycentric projection of the plan between
/// `source` (the image's own histogram) and `target`, interpolated bilinearly
/// over the surrounding occupied bins.
pub fn chroma_transfer(
    img: &LabImage,
    source: &GridMeasure,
    target: &GridMeasure,
    spec: &HistogramSpec,
    eps: f64,
) -> Result<LabImage> {
    source.ensure_same_shape(target)?;
    if source.shape() != (spec.bins, spec.bins) {
        return Err(Error::DimensionMismatch {
            height: spec.bins,
            width: spec.bins,
            got: source.len(),
        });
    }
    let cfg = SolverConfig::with_eps(eps);
    let sol = accept_best_effort(sinkhorn_potentials(source, target, &cfg))?;
    let t = barycentric_projection(&sol.potentials.g, target, eps);
    let grid: Grid = source.grid();
    let n = spec.bins;
    let range = CHROMA_HI - CHROMA_LO;

    let moved: Vec<(f64, f64)> = img
        .a
        .par_iter()
        .zip(img.b.par_iter())
        .map(|(&a, &b)| {
            let p = spec.coords(a, b);
            let (r, c) = grid.to_cell_coords(p);
            let (r, c) = (r.clamp(0.0, (n - 1) as f64), c.clamp(0.0, (n - 1) as f64));
            let r0 = (r.floor() as usize).min(n - 2);
            let c0 = (c.floor() as usize).min(n - 2);
            let (fr, fc) = (r - r0 as f64, c - c0 as f64);
            let mut d = [0.0; 2];
            let mut total = 0.0;
            for (dr, dc, w) in [
                (0, 0, (1.0 - fr) * (1.0 - fc)),
                (0, 1, (1.0 - fr) * fc),
                (1, 0, fr * (1.0 - fc)),
                (1, 1, fr * fc),
            ] {
                let j = (r0 + dr) * n + c0 + dc;
                if source.mass()[j] > 0.0 && w > 0.0 {
                    let q = grid.position(j);
                    d[0] += w * (t[j][0] - q[0]);
                    d[1] += w * (t[j][1] - q[1]);
                    total += w;
                }
            }
            if total == 0.0 {
                // Pixel sits exactly on its own bin center.
                let j = spec.bin(a, b);
                let q = grid.position(j);
                d = [t[j][0] - q[0], t[j][1] - q[1]];
                total = 1.0;
            }
            (a + d[1] / total * range, b + d[0] / total * range)
        })
        .collect();
    let mut out = img.clone();
    for (i, (a, b)) in moved.into_iter().enumerate() {
        out.a[i] = a.clamp(CHROMA_LO, CHROMA_HI);
        out.b[i] = b.clamp(CHROMA_LO, CHROMA_HI);
    }
    Ok(out)
}

/// Box mean over a `(2r+1)^2` window clipped to the image.
fn box_mean(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += v[y * w + x];
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            out[y * w + x] = s / ((y1 - y0) * (x1 - x0)) as f64;
        }
    }
    out
}

/// Guided filter of `p` with guide `g` (both row-major `w x h`).
pub fn guided_filter(g: &[f64], p: &[f64], w: usize, h: usize, radius: usize, eps: f64) -> Vec<f64> {
    if radius == 0 {
        return p.to_vec();
    }
    let mean = |v: &[f64]| box_mean(v, w, h, radius);
    let mg = mean(g);
    let mp = mean(p);
    let gp: Vec<f64> = g.iter().zip(p).map(|(a, b)| a * b).collect();
    let gg: Vec<f64> = g.iter().map(|a| a * a).collect();
    let mgp = mean(&gp);
    let mgg = mean(&gg);
    let a: Vec<f64> = (0..w * h)
        .map(|i| (mgp[i] - mg[i] * mp[i]) / (mgg[i] - mg[i] * mg[i] + eps))
        .collect();
    let b: Vec<f64> = (0..w * h).map(|i| mp[i] - a[i] * mg[i]).collect();
    let ma = mean(&a);
    let mb = mean(&b);
    (0..w * h).map(|i| ma[i] * g[i] + mb[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedFilterConfig {
    pub radius: usize,
    /// Regularization on the guide scaled to `[0, 1]`.
    pub eps: f64,
    pub iterations: usize,
}

impl Default for GuidedFilterConfig {
    fn default() -> Self {
        Self {
            radius: 4,
            eps: 1e-3,
            iterations: 2,
        }
    }
}

/// Smooths the chroma change `transferred - original` with the original
/// luminance as guide, keeping the transferred luminance.
pub fn guided_filter_post(original: &LabImage, transferred: &LabImage, cfg: &GuidedFilterConfig) -> Result<LabImage> {
    original.ensure_same_size(transferred)?;
    let (w, h) = (original.width, original.height);
    let guide: Vec<f64> = original.l.iter().map(|l| l / 100.0).collect();
    let mut out = transferred.clone();
    for (orig, chan) in [(&original.a, &mut out.a), (&original.b, &mut out.b)] {
        let mut residual: Vec<f64> = chan.iter().zip(orig.iter()).map(|(t, o)| t - o).collect();
        for _ in 0..cfg.iterations {
            residual = guided_filter(&guide, &residual, w, h, cfg.radius, cfg.eps);
        }
        for ((c, o), r) in chan.iter_mut().zip(orig.iter()).zip(&residual) {
            *c = o + r;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorTransferConfig {
    pub histogram: HistogramSpec,
    pub eps: f64,
    pub luminance_bins: usize,
    pub guided: GuidedFilterConfig,
}

impl Default for ColorTransferConfig {
    fn default() -> Self {
        Self {
            histogram: HistogramSpec::default(),
            eps: DEFAULT_CHROMA_EPS,
            luminance_bins: 256,
            guided: GuidedFilterConfig::default(),
        }
    }
}

/// Recolors `target` towards the weighted palette of `sources`. The chroma
/// barycenter is supplied by the caller (model or oracle); the luminance
/// target is the 1-D barycenter of the sources' luminance histograms.
pub fn color_transfer(
    target: &LabImage,
    sources: &[LabImage],
    weights: &BarycentricWeights,
    chroma_barycenter: &GridMeasure,
    cfg: &ColorTransferConfig,
) -> Result<LabImage> {
    let lum = sources
        .iter()
        .map(|s| Histogram1d::from_values(&s.l, 0.0, 100.0, cfg.luminance_bins))
        .collect::<Result<Vec<_>>>()?;
    let lum_target = luminance_barycenter(&lum, weights, 16 * cfg.luminance_bins)?;
    let nu = chroma_histogram(target, &cfg.histogram)?;
    let mut out = chroma_transfer(target, &nu, chroma_barycenter, &cfg.histogram, cfg.eps)?;
    out.l = luminance_transfer(&target.l, &lum_target);
    guided_filter_post(target, &out, &cfg.guided)
}

/// Peak signal-to-noise ratio between two 8-bit RGB images, in dB.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::ShapeMismatch {
            left: (a.height() as usize, a.width() as usize),
            right: (b.height() as usize, b.width() as usize),
        });
    }
    let n = a.as_raw().len() as f64;
    let mse: f64 = a
        .as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (255.0f64 * 255.0 / mse).log10() })
}
