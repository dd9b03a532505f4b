//! Radon barycenters: per-direction 1-D barycenters of the projections,
//! reconstructed by filtered back-projection.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::measure::{BarycentricWeights, Grid, GridMeasure};

/// Projected atoms `(t, mass)` of `m` on direction `(cos, sin)`, sorted by `t`.
fn project(m: &GridMeasure, center: [f64; 2], dir: [f64; 2]) -> Vec<(f64, f64)> {
    let grid = m.grid();
    let mut atoms: Vec<(f64, f64)> = m
        .mass()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(j, &w)| {
            let p = grid.position(j);
            ((p[0] - center[0]) * dir[0] + (p[1] - center[1]) * dir[1], w)
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

/// Exact 1-D barycenter of sorted atomic measures: the quantile functions are
/// piecewise constant, so averaging them over the merged breakpoints gives
/// atoms at `sum_i l_i Q_i(q)`.
pub fn barycenter_1d(measures: &[Vec<(f64, f64)>], weights: &[f64]) -> Vec<(f64, f64)> {
    let n = measures.len();
    let mut idx = vec![0usize; n];
    let mut left: Vec<f64> = measures.iter().map(|m| m.first().map_or(0.0, |a| a.1)).collect();
    let mut out = Vec::new();
    loop {
        if (0..n).any(|i| idx[i] >= measures[i].len()) {
            break;
        }
        let step = left.iter().cloned().fold(f64::INFINITY, f64::min);
        let t: f64 = (0..n).map(|i| weights[i] * measures[i][idx[i]].0).sum();
        if step > 0.0 {
            out.push((t, step));
        }
        for i in 0..n {
            left[i] -= step;
            if left[i] <= 1e-15 {
                idx[i] += 1;
                left[i] = measures[i].get(idx[i]).map_or(0.0, |a| a.1);
            }
        }
    }
    out
}

/// Ram-Lak filter taps for detector spacing `tau`, indices `-half..=half`.
fn ram_lak(half: usize, tau: f64) -> Vec<f64> {
    (0..=2 * half)
        .map(|i| {
            let k = i as i64 - half as i64;
            if k == 0 {
                1.0 / (4.0 * tau * tau)
            } else if k % 2 == 0 {
                0.0
            } else {
                -1.0 / (PI * PI * (k * k) as f64 * tau * tau)
            }
        })
        .collect()
}

/// Barycenter through `n_dirs` projection directions with uniform angles on `[0, pi)`.
pub fn radon_barycenter(inputs: &[GridMeasure], weights: &BarycentricWeights, n_dirs: usize) -> Result<GridMeasure> {
    if n_dirs < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 directions, got {n_dirs}")));
    }
    if inputs.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    for m in inputs {
        inputs[0].ensure_same_shape(m)?;
    }
    let grid: Grid = inputs[0].grid();
    // Detector bins share the cell spacing; finer bins alias the point masses.
    let tau = grid.cell_size();
    let center = [grid.width as f64 * tau / 2.0, grid.height as f64 * tau / 2.0];
    let radius = (center[0].hypot(center[1]) / tau).ceil() as usize + 1;
    let bins = 2 * radius + 1;
    let filter = ram_lak(bins - 1, tau);

    // Only inputs with positive weight move the quantiles.
    let (used, lam): (Vec<&GridMeasure>, Vec<f64>) = inputs
        .iter()
        .zip(weights.as_slice())
        .filter(|(_, &l)| l > 0.0)
        .map(|(m, &l)| (m, l))
        .unzip();

    let mut image = vec![0.0; grid.len()];
    let mut sino = vec![0.0; bins];
    let mut filtered = vec![0.0; bins];
    for k in 0..n_dirs {
        let theta = PI * k as f64 / n_dirs as f64;
        let dir = [theta.cos(), theta.sin()];
        let projections: Vec<_> = used.iter().map(|m| project(m, center, dir)).collect();
        sino.iter_mut().for_each(|v| *v = 0.0);
        for (t, w) in barycenter_1d(&projections, &lam) {
            let s = (t / tau + radius as f64).clamp(0.0, (bins - 1) as f64);
            let i0 = (s.floor() as usize).min(bins - 2);
            let f = s - i0 as f64;
            sino[i0] += w * (1.0 - f);
            sino[i0 + 1] += w * f;
        }
        for (i, out) in filtered.iter_mut().enumerate() {
            *out = tau
                * sino
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| v * filter[i + bins - 1 - j])
                    .sum::<f64>();
        }
        for (j, px) in image.iter_mut().enumerate() {
            let p = grid.position(j);
            let t = (p[0] - center[0]) * dir[0] + (p[1] - center[1]) * dir[1];
            let s = t / tau + radius as f64;
            let i0 = (s.floor() as usize).min(bins - 2);
            let f = s - i0 as f64;
            *px += filtered[i0] * (1.0 - f) + filtered[i0 + 1] * f;
        }
    }
    let scale = PI / n_dirs as f64;
    let clamped: Vec<f64> = image.iter().map(|v| (v * scale).max(0.0)).collect();
    crate::measure::normalize(grid.height, grid.width, &clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_average_of_two_atoms() {
        let a = vec![(0.0, 1.0)];
        let b = vec![(1.0, 0.5), (3.0, 0.5)];
        let out = barycenter_1d(&[a, b], &[0.5, 0.5]);
        assert_eq!(out, vec![(0.5, 0.5), (1.5, 0.5)]);
    }

    #[test]
    fn quantile_average_keeps_mass() {
        let a = vec![(0.0, 0.2), (0.1, 0.3), (0.4, 0.5)];
        let b = vec![(0.2, 0.7), (0.9, 0.3)];
        let out = barycenter_1d(&[a, b], &[0.25, 0.75]);
        let total: f64 = out.iter().map(|x| x.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(out.windows(2).all(|w| w[0].0 <= w[1].0));
    }

    #[test]
    fn delta_pair_peaks_at_midpoint() {
        let a = GridMeasure::delta(16, 16, 1, 4).unwrap();
        let b = GridMeasure::delta(16, 16, 13, 10).unwrap();
        let out = radon_barycenter(&[a, b], &BarycentricWeights::uniform(2).unwrap(), 90).unwrap();
        assert_eq!(out.argmax(), (7, 7));
    }

    #[test]
    fn smooth_input_reconstructs() {
        let n = 64;
        let m: Vec<f64> = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as f64, (i % n) as f64);
                (-((r - 25.0).powi(2) + (c - 38.0).powi(2)) / 60.0).exp()
            })
            .collect();
        let mu = crate::measure::normalize(n, n, &m).unwrap();
        let out = radon_barycenter(&[mu.clone(), mu.clone()], &BarycentricWeights::uniform(2).unwrap(), 180).unwrap();
        assert!(crate::measure::l1_distance(&mu, &out).unwrap() <= 0.15);
    }

    #[test]
    fn rejects_few_directions() {
        let u = GridMeasure::uniform(4, 4).unwrap();
        assert!(radon_barycenter(&[u.clone(), u], &BarycentricWeights::uniform(2).unwrap(), 3).is_err());
    }
}
