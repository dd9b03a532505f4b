//! Gaussian kernel `k(x, y) = exp(-|x - y|^2 / eps)` on a regular grid.
//!
//! The quadratic cost splits into a row term and a column term, so the kernel
//! (and its log-sum-exp counterpart) is applied as two 1-D passes: along rows
//! first, then along columns.

use rayon::prelude::*;

use crate::measure::Grid;

/// Above this many cells the passes are split across worker threads. Each
/// output is computed independently with a fixed summation order, so the
/// result does not depend on the thread count.
const PARALLEL_CELLS: usize = 128 * 128;

/// Precomputed 1-D cost tables `(u_i - u_j)^2 / eps` for one grid and `eps`.
#[derive(Debug, Clone)]
pub struct LogKernel {
    grid: Grid,
    eps: f64,
    row_cost: Vec<f64>,
    col_cost: Vec<f64>,
}

impl LogKernel {
    pub fn new(grid: Grid, eps: f64) -> Self {
        let table = |n: usize, coord: &dyn Fn(usize) -> f64| {
            let mut t = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let d = coord(i) - coord(j);
                    t[i * n + j] = d * d / eps;
                }
            }
            t
        };
        let row_cost = table(grid.width, &|c| grid.x(c));
        let col_cost = table(grid.height, &|r| grid.y(r));
        Self {
            grid,
            eps,
            row_cost,
            col_cost,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `out_i = log sum_j exp(h_j - |x_i - x_j|^2 / eps)`. Entries of `h` may be
    /// `-inf` (zero mass); an all `-inf` input yields all `-inf`.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let (rows, cols) = (self.grid.height, self.grid.width);
        assert_eq!(h.len(), rows * cols, "log kernel input has wrong length");
        let parallel = h.len() > PARALLEL_CELLS;

        // Row pass, written transposed so the column pass reads contiguously.
        let mut tmp_t = vec![0.0; rows * cols];
        let row_pass = |(c, out): (usize, &mut [f64])| {
            let cost = &self.row_cost[c * cols..(c + 1) * cols];
            for (r, o) in out.iter_mut().enumerate() {
                *o = lse_minus(&h[r * cols..(r + 1) * cols], cost);
            }
        };
        if parallel {
            tmp_t.par_chunks_mut(rows).enumerate().for_each(row_pass);
        } else {
            tmp_t.chunks_mut(rows).enumerate().for_each(row_pass);
        }

        let mut out = vec![0.0; rows * cols];
        let col_pass = |(r, out_row): (usize, &mut [f64])| {
            let cost = &self.col_cost[r * rows..(r + 1) * rows];
            for (c, o) in out_row.iter_mut().enumerate() {
                *o = lse_minus(&tmp_t[c * rows..(c + 1) * rows], cost);
            }
        };
        if parallel {
            out.par_chunks_mut(cols).enumerate().for_each(col_pass);
        } else {
            out.chunks_mut(cols).enumerate().for_each(col_pass);
        }
        out
    }
}

/// Terms more than this far below the maximum contribute less than `e^-40`
/// each and are skipped.
const LSE_CUTOFF: f64 = 40.0;

/// `log sum_k exp(h_k - cost_k)`, stabilized by the maximum term.
#[inline]
fn lse_minus(h: &[f64], cost: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (&v, &c) in h.iter().zip(cost) {
        let t = v - c;
        if t > max {
            max = t;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let floor = max - LSE_CUTOFF;
    let mut sum = 0.0;
    for (&v, &c) in h.iter().zip(cost) {
        let t = v - c;
        if t > floor {
            sum += (t - max).exp();
        }
    }
    max + sum.ln()
}

/// Applies the Gaussian kernel to a real-valued grid (signed values allowed).
pub fn gaussian_kernel_apply(values: &[f64], grid: Grid, eps: f64) -> Vec<f64> {
    let (rows, cols) = (grid.height, grid.width);
    assert_eq!(values.len(), rows * cols, "kernel input has wrong length");
    let weights = |n: usize, coord: &dyn Fn(usize) -> f64| {
        let mut t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let d = coord(i) - coord(j);
                t[i * n + j] = (-d * d / eps).exp();
            }
        }
        t
    };
    let kx = weights(cols, &|c| grid.x(c));
    let ky = weights(rows, &|r| grid.y(r));

    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &values[r * cols..(r + 1) * cols];
        for c in 0..cols {
            let k = &kx[c * cols..(c + 1) * cols];
            tmp[r * cols + c] = row.iter().zip(k).map(|(v, w)| v * w).sum();
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let k = &ky[r * rows..(r + 1) * rows];
        for c in 0..cols {
            out[r * cols + c] = (0..rows).map(|rr| tmp[rr * cols + c] * k[rr]).sum();
        }
    }
    out
}
