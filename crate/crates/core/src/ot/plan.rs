//! Transport plans, barycentric projections and displacement fields built from
//! converged dual potentials.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Grid, GridMeasure};
use crate::ot::kernel::LogKernel;
use crate::ot::sinkhorn::{
    accept_best_effort, log_weights, sinkhorn_potentials, sinkhorn_self, DualPotentials, SolverConfig,
};

/// Largest dense plan [`transport_plan`] will materialize.
pub const MAX_PLAN_ENTRIES: usize = 100_000_000;

/// Dense plan restricted to the supports of both marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Row-major grid indices of the first measure's support.
    pub rows: Vec<usize>,
    /// Row-major grid indices of the second measure's support.
    pub cols: Vec<usize>,
    /// `rows.len() x cols.len()` entries, row-major.
    pub entries: Vec<f64>,
}

impl TransportPlan {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols.len() + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.chunks(self.cols.len()).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols.len()];
        for row in self.entries.chunks(self.cols.len()) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// `sum pi_ij |x_i - y_j|^2` for a plan between cells of `grid`.
    pub fn cost(&self, grid: Grid) -> f64 {
        let mut total = 0.0;
        for (i, &ri) in self.rows.iter().enumerate() {
            let p = grid.position(ri);
            for (j, &cj) in self.cols.iter().enumerate() {
                let q = grid.position(cj);
                total += self.get(i, j) * ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2));
            }
        }
        total
    }
}

fn support(m: &GridMeasure) -> Vec<usize> {
    m.mass()
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// `pi_ij = exp((f_i + g_j - C_ij) / eps) a_i b_j` on the positive-mass cells.
pub fn transport_plan(
    potentials: &DualPotentials,
    a: &GridMeasure,
    b: &GridMeasure,
    cfg: &SolverConfig,
) -> Result<TransportPlan> {
    a.ensure_same_shape(b)?;
    let grid = a.grid();
    let rows = support(a);
    let cols = support(b);
    let entries = rows.len() * cols.len();
    if entries > MAX_PLAN_ENTRIES {
        return Err(Error::PlanTooLarge {
            entries,
            limit: MAX_PLAN_ENTRIES,
        });
    }
    let eps = potentials.eps;
    let mut data = Vec::with_capacity(entries);
    for &i in &rows {
        let p = grid.position(i);
        for &j in &cols {
            let q = grid.position(j);
            let c = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            let w = ((potentials.f[i] + potentials.g[j] - c) / eps).exp() * a.mass()[i] * b.mass()[j];
            data.push(w);
        }
    }
    let plan = TransportPlan {
        rows,
        cols,
        entries: data,
    };
    let violation: f64 = plan
        .row_sums()
        .iter()
        .zip(&plan.rows)
        .map(|(s, &i)| (s - a.mass()[i]).abs())
        .chain(plan.col_sums().iter().zip(&plan.cols).map(|(s, &j)| (s - b.mass()[j]).abs()))
        .sum();
    if violation > 10.0 * cfg.tolerance {
        return Err(Error::StaleDuals { violation });
    }
    Ok(plan)
}

/// Barycentric projection `T(x_i) = sum_j pi_ij y_j / sum_j pi_ij` of every
/// grid cell, given the potential `g` of the target measure.
///
/// The sums run through the separable kernel, so no dense plan is formed. The
/// normalization by the row sum removes the dependence on `f`.
pub fn barycentric_projection(g: &[f64], target: &GridMeasure, eps: f64) -> Vec<[f64; 2]> {
    let grid = target.grid();
    let kernel = LogKernel::new(grid, eps);
    let base: Vec<f64> = log_weights(target)
        .iter()
        .zip(g)
        .map(|(l, gi)| l + gi / eps)
        .collect();
    let den = kernel.apply(&base);
    let weighted = |axis: usize| {
        let h: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(j, b)| b + grid.position(j)[axis].ln())
            .collect();
        kernel.apply(&h)
    };
    let num_x = weighted(0);
    let num_y = weighted(1);
    (0..grid.len())
        .map(|i| [(num_x[i] - den[i]).exp(), (num_y[i] - den[i]).exp()])
        .collect()
}

/// Per-cell displacement vectors in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub height: usize,
    pub width: usize,
    pub vectors: Vec<[f64; 2]>,
}

impl DisplacementField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            vectors: vec![[0.0; 2]; grid.len()],
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1]).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Barycentric projection of `b` onto itself, the debiasing term of
/// [`displacement_field`]. It depends only on `b` and can be reused across targets.
pub fn self_projection(b: &GridMeasure, cfg: &SolverConfig) -> Result<Vec<[f64; 2]>> {
    let own = accept_best_effort(sinkhorn_self(b, cfg))?;
    Ok(barycentric_projection(&own.potentials.g, b, cfg.eps))
}

/// Debiased displacement of the particles of `b` towards `mu`:
/// `v_j = T_{b->mu}(x_j) - T_{b->b}(x_j)` on the support of `b`, zero elsewhere.
///
/// With the cost `|x - y|^2` this equals `-(1 / (2 b_j)) grad_{x_j} S_eps(b, mu)`.
/// Solves that stop at the iteration cap are used as they stand.
pub fn displacement_field(b: &GridMeasure, mu: &GridMeasure, cfg: &SolverConfig) -> Result<DisplacementField> {
    b.ensure_same_shape(mu)?;
    let own = self_projection(b, cfg)?;
    displacement_with_self(b, &own, mu, cfg)
}

/// [`displacement_field`] with a precomputed [`self_projection`] of `b`.
pub fn displacement_with_self(
    b: &GridMeasure,
    own: &[[f64; 2]],
    mu: &GridMeasure,
    cfg: &SolverConfig,
) -> Result<DisplacementField> {
    b.ensure_same_shape(mu)?;
    let cross = accept_best_effort(sinkhorn_potentials(b, mu, cfg))?;
    let to_mu = barycentric_projection(&cross.potentials.g, mu, cfg.eps);
    let vectors = b
        .mass()
        .iter()
        .zip(to_mu.iter().zip(own))
        .map(|(&w, (t, s))| {
            if w > 0.0 {
                [t[0] - s[0], t[1] - s[1]]
            } else {
                [0.0; 2]
            }
        })
        .collect();
    Ok(DisplacementField {
        height: b.height(),
        width: b.width(),
        vectors,
    })
}
