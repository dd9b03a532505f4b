//! Log-domain Sinkhorn with epsilon scaling.
//!
//! The potentials are updated alternately; the final annealing stage is
//! over-relaxed. Arguments are put in a canonical order before solving, so
//! `OT_eps(a, b)` and `OT_eps(b, a)` agree bit for bit and the cross term of
//! `S_eps(a, a)` repeats the self-transport solve exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{Grid, GridMeasure};
use crate::ot::kernel::LogKernel;

/// Entropic solver settings. The ground cost is `|x - y|^2` in normalized
/// grid coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target regularization, in squared normalized-distance units.
    pub eps: f64,
    /// Cap on the total number of Sinkhorn iterations across all stages.
    pub max_iters: usize,
    /// Stop once the L1 marginal violation falls below this.
    pub tolerance: f64,
    /// First value of the annealing schedule; halved until `eps` is reached.
    pub eps_start: f64,
    /// Iteration cap for each intermediate annealing stage.
    pub stage_iters: usize,
    /// Over-relaxation factor used on the final stage, in `[1, 2)`.
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 1e-4,
            max_iters: 10_000,
            tolerance: 1e-6,
            eps_start: 1.0,
            stage_iters: 10,
            relaxation: 1.9,
        }
    }
}

impl SolverConfig {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::InvalidConfig(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(1.0..2.0).contains(&self.relaxation) {
            return Err(Error::InvalidConfig(format!(
                "relaxation must lie in [1, 2), got {}",
                self.relaxation
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be > 0".into()));
        }
        Ok(())
    }

    /// `eps_start, eps_start / 2, ...` down to (and ending at) `eps`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut e = self.eps_start;
        while e > self.eps {
            out.push(e);
            e *= 0.5;
        }
        out.push(self.eps);
        out
    }
}

/// Convergence record for one solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub final_violation: f64,
    pub eps_schedule: Vec<f64>,
    pub converged: bool,
}

/// Dual potentials `f` (first measure) and `g` (second measure).
///
/// Gauge: `<f, a> = 0`, with `g` absorbing the constant. Values on zero-mass
/// cells are the natural extension of the potential and carry no meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub height: usize,
    pub width: usize,
    pub eps: f64,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// A finished solve: gauged potentials, the dual objective and diagnostics.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub potentials: DualPotentials,
    /// `<f, a> + <g, b>`.
    pub cost: f64,
    pub diagnostics: SolverDiagnostics,
}

pub(crate) fn log_weights(m: &GridMeasure) -> Vec<f64> {
    m.mass()
        .iter()
        .map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
        .collect()
}

/// Raw solver output before gauge fixing.
pub(crate) struct RawSolve {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub cost: f64,
    pub diagnostics: SolverDiagnostics,
}

/// `-eps * K(log_w + pot / eps)`: the soft-min update of the opposite potential.
fn softmin(kernel: &LogKernel, log_w: &[f64], pot: &[f64]) -> Vec<f64> {
    let eps = kernel.eps();
    let h: Vec<f64> = log_w.iter().zip(pot).map(|(l, p)| l + p / eps).collect();
    kernel.apply(&h).into_iter().map(|v| -eps * v).collect()
}

/// `sum_i w_i |1 - exp((pot_i - next_i) / eps)|`: L1 error of the marginal
/// induced by `pot` when the other side is held fixed.
fn violation(w: &[f64], pot: &[f64], next: &[f64], eps: f64) -> f64 {
    w.iter()
        .zip(pot.iter().zip(next))
        .filter(|(&wi, _)| wi > 0.0)
        .map(|(&wi, (&p, &n))| wi * (1.0 - ((p - n) / eps).exp()).abs())
        .sum()
}

fn dual_value(a: &[f64], f: &[f64]) -> f64 {
    a.iter()
        .zip(f)
        .filter(|(&w, _)| w > 0.0)
        .map(|(w, v)| w * v)
        .sum()
}

/// Core loop: alternating soft-min updates, over-relaxed on the final stage.
/// The marginal violation is measured every `CHECK_EVERY` iterations.
pub(crate) fn solve_raw(a: &GridMeasure, b: &GridMeasure, cfg: &SolverConfig) -> RawSolve {
    const CHECK_EVERY: usize = 10;
    let grid: Grid = a.grid();
    let n = grid.len();
    let log_a = log_weights(a);
    let log_b = log_weights(b);
    let schedule = cfg.schedule();

    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut iterations = 0;
    let mut final_violation = f64::INFINITY;
    let mut converged = false;

    'stages: for (stage, &eps) in schedule.iter().enumerate() {
        let kernel = LogKernel::new(grid, eps);
        let last = stage + 1 == schedule.len();
        let mut stage_count = 0;
        loop {
            if last && stage_count % CHECK_EVERY == 0 {
                let tf = softmin(&kernel, &log_b, &g);
                let tg = softmin(&kernel, &log_a, &f);
                final_violation = violation(a.mass(), &f, &tf, eps) + violation(b.mass(), &g, &tg, eps);
                if final_violation <= cfg.tolerance {
                    converged = true;
                    break 'stages;
                }
            }
            if iterations >= cfg.max_iters {
                break 'stages;
            }
            if !last && stage_count >= cfg.stage_iters {
                break;
            }
            let omega = if last { cfg.relaxation } else { 1.0 };
            let tf = softmin(&kernel, &log_b, &g);
            relax(&mut f, &tf, omega);
            let tg = softmin(&kernel, &log_a, &f);
            relax(&mut g, &tg, omega);
            iterations += 1;
            stage_count += 1;
        }
    }

    let cost = dual_value(a.mass(), &f) + dual_value(b.mass(), &g);
    RawSolve {
        f,
        g,
        cost,
        diagnostics: SolverDiagnostics {
            iterations,
            final_violation,
            eps_schedule: schedule,
            converged,
        },
    }
}

fn relax(pot: &mut [f64], target: &[f64], omega: f64) {
    for (p, t) in pot.iter_mut().zip(target) {
        *p += omega * (t - *p);
    }
}

/// Self-transport `OT_eps(a, a)` by the averaged fixed point
/// `f <- (f + T(f)) / 2`, which keeps `f = g` throughout. Alternating updates
/// on two identical marginals converge far more slowly.
pub(crate) fn solve_symmetric(a: &GridMeasure, cfg: &SolverConfig) -> RawSolve {
    const CHECK_EVERY: usize = 10;
    let grid: Grid = a.grid();
    let log_a = log_weights(a);
    let schedule = cfg.schedule();

    let mut f = vec![0.0; grid.len()];
    let mut iterations = 0;
    let mut final_violation = f64::INFINITY;
    let mut converged = false;

    'stages: for (stage, &eps) in schedule.iter().enumerate() {
        let kernel = LogKernel::new(grid, eps);
        let last = stage + 1 == schedule.len();
        let mut stage_count = 0;
        loop {
            let tf = softmin(&kernel, &log_a, &f);
            if last && stage_count % CHECK_EVERY == 0 {
                final_violation = 2.0 * violation(a.mass(), &f, &tf, eps);
                if final_violation <= cfg.tolerance {
                    converged = true;
                    break 'stages;
                }
            }
            if iterations >= cfg.max_iters {
                break 'stages;
            }
            if !last && stage_count >= cfg.stage_iters {
                break;
            }
            relax(&mut f, &tf, 0.5);
            iterations += 1;
            stage_count += 1;
        }
    }

    let cost = 2.0 * dual_value(a.mass(), &f);
    RawSolve {
        g: f.clone(),
        f,
        cost,
        diagnostics: SolverDiagnostics {
            iterations,
            final_violation,
            eps_schedule: schedule,
            converged,
        },
    }
}

/// Solves with the arguments in a canonical order so that swapping them, or
/// passing the same measure twice, repeats exactly the same arithmetic.
pub(crate) fn solve_canonical(a: &GridMeasure, b: &GridMeasure, cfg: &SolverConfig) -> RawSolve {
    if a.mass() == b.mass() {
        return solve_symmetric(a, cfg);
    }
    if canonical_le(a, b) {
        solve_raw(a, b, cfg)
    } else {
        let RawSolve {
            f,
            g,
            cost,
            diagnostics,
        } = solve_raw(b, a, cfg);
        RawSolve {
            f: g,
            g: f,
            cost,
            diagnostics,
        }
    }
}

fn canonical_le(a: &GridMeasure, b: &GridMeasure) -> bool {
    for (x, y) in a.mass().iter().zip(b.mass()) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    true
}

fn finish(raw: RawSolve, a: &GridMeasure, eps: f64) -> Result<SinkhornSolution> {
    let RawSolve {
        mut f,
        mut g,
        cost,
        diagnostics,
    } = raw;
    let shift = dual_value(a.mass(), &f);
    f.iter_mut().for_each(|v| *v -= shift);
    g.iter_mut().for_each(|v| *v += shift);
    let solution = SinkhornSolution {
        potentials: DualPotentials {
            height: a.height(),
            width: a.width(),
            eps,
            f,
            g,
        },
        cost,
        diagnostics,
    };
    if solution.diagnostics.converged {
        Ok(solution)
    } else {
        Err(Error::NoConvergence {
            diagnostics: solution.diagnostics.clone(),
            best: Some(Box::new(solution)),
        })
    }
}

/// Solves entropic OT between two grid measures of the same shape.
pub fn sinkhorn_potentials(a: &GridMeasure, b: &GridMeasure, cfg: &SolverConfig) -> Result<SinkhornSolution> {
    a.ensure_same_shape(b)?;
    cfg.validate()?;
    finish(solve_canonical(a, b, cfg), a, cfg.eps)
}

/// Self-transport `OT_eps(a, a)`.
pub fn sinkhorn_self(a: &GridMeasure, cfg: &SolverConfig) -> Result<SinkhornSolution> {
    cfg.validate()?;
    finish(solve_canonical(a, a, cfg), a, cfg.eps)
}

/// Entropic transport cost `<f, a> + <g, b>`.
pub fn ot_eps(a: &GridMeasure, b: &GridMeasure, cfg: &SolverConfig) -> Result<f64> {
    sinkhorn_potentials(a, b, cfg).map(|s| s.cost)
}

/// `S_eps(a, b) = OT_eps(a, b) - OT_eps(a, a) / 2 - OT_eps(b, b) / 2`.
pub fn sinkhorn_divergence(a: &GridMeasure, b: &GridMeasure, cfg: &SolverConfig) -> Result<f64> {
    let ab = ot_eps(a, b, cfg)?;
    let aa = sinkhorn_self(a, cfg)?.cost;
    let bb = sinkhorn_self(b, cfg)?.cost;
    Ok(ab - 0.5 * aa - 0.5 * bb)
}

/// Keeps the best-so-far solution of a solve that hit its iteration cap.
pub fn accept_best_effort(result: Result<SinkhornSolution>) -> Result<SinkhornSolution> {
    match result {
        Err(Error::NoConvergence {
            diagnostics,
            best: Some(best),
        }) => {
            log::warn!(
                "sinkhorn stopped at violation {:.3e} after {} iterations",
                diagnostics.final_violation,
                diagnostics.iterations
            );
            Ok(*best)
        }
        other => other,
    }
}
