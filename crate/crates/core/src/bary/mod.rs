//! Barycenter oracles used as training targets and baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{BarycentricWeights, GridMeasure};
use crate::ot::{accept_best_effort, sinkhorn_potentials, sinkhorn_self, SolverConfig};

pub mod particles;
pub mod radon;
pub mod regularized;

pub use crate::lp::lp_barycenter;
pub use particles::{
    lagrangian_barycenter, linearized_barycenter, measure_digest, precompute_map, precompute_maps, splat,
    ParticleCloud, PrecomputedMap,
};
pub use radon::{barycenter_1d, radon_barycenter};
pub use regularized::regularized_barycenter;

/// A barycenter method by its command-line name.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaryMethod {
    Lp,
    Regularized,
    Linearized,
    Lagrangian(usize),
    Radon(usize),
}

impl FromStr for BaryMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let count = |default: Option<usize>| -> Result<usize> {
            match arg {
                Some(a) => a
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad count in method `{s}`"))),
                None => default.ok_or_else(|| Error::InvalidConfig(format!("method `{s}` needs a count"))),
            }
        };
        let method = match name {
            "lp" if arg.is_none() => Self::Lp,
            "regularized" if arg.is_none() => Self::Regularized,
            "linearized" if arg.is_none() => Self::Linearized,
            "lagrangian" => Self::Lagrangian(count(Some(10))?),
            "radon" => Self::Radon(count(Some(180))?),
            _ => return Err(Error::InvalidConfig(format!("unknown barycenter method `{s}`"))),
        };
        match method {
            Self::Lagrangian(0) => Err(Error::InvalidConfig("lagrangian needs at least one step".into())),
            Self::Radon(n) if n < 4 => Err(Error::InvalidConfig("radon needs at least 4 directions".into())),
            m => Ok(m),
        }
    }
}

impl fmt::Display for BaryMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Lp => write!(f, "lp"),
            Self::Regularized => write!(f, "regularized"),
            Self::Linearized => write!(f, "linearized"),
            Self::Lagrangian(k) => write!(f, "lagrangian:{k}"),
            Self::Radon(n) => write!(f, "radon:{n}"),
        }
    }
}

impl BaryMethod {
    /// Runs the method. `cfg` drives the Sinkhorn-based methods; the
    /// regularized method uses its own defaults and keeps a best-effort
    /// result when it hits the iteration cap.
    pub fn compute(&self, inputs: &[GridMeasure], weights: &BarycentricWeights, cfg: &SolverConfig) -> Result<GridMeasure> {
        match *self {
            Self::Lp => lp_barycenter(inputs, weights),
            Self::Regularized => {
                match regularized_barycenter(inputs, weights, regularized::DEFAULT_REG, regularized::DEFAULT_MAX_ITERS) {
                    Err(Error::BarycenterNoConvergence { diagnostics, best }) => {
                        log::warn!(
                            "regularized barycenter stopped after {} iterations (violation {:.3e})",
                            diagnostics.iterations,
                            diagnostics.final_violation
                        );
                        Ok(*best)
                    }
                    r => r,
                }
            }
            Self::Linearized => linearized_barycenter(&precompute_maps(inputs, cfg)?, weights),
            Self::Lagrangian(k) => lagrangian_barycenter(inputs, weights, cfg, k),
            Self::Radon(n) => radon_barycenter(inputs, weights, n),
        }
    }
}

/// `sum_i l_i S_eps(b, mu_i)`, with capped solves used as they stand.
pub fn barycenter_objective(
    b: &GridMeasure,
    inputs: &[GridMeasure],
    weights: &BarycentricWeights,
    cfg: &SolverConfig,
) -> Result<f64> {
    if inputs.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} inputs",
            weights.len(),
            inputs.len()
        )));
    }
    let lam = weights.as_slice();
    let bb = accept_best_effort(sinkhorn_self(b, cfg))?.cost;
    let mut crosses = Vec::with_capacity(inputs.len());
    let mut own = Vec::with_capacity(inputs.len());
    for (mu, &l) in inputs.iter().zip(lam) {
        if l == 0.0 {
            crosses.push(0.0);
            own.push(0.0);
            continue;
        }
        crosses.push(accept_best_effort(sinkhorn_potentials(b, mu, cfg))?.cost);
        own.push(accept_best_effort(sinkhorn_self(mu, cfg))?.cost);
    }
    Ok(combine_objective(&crosses, bb, &own, lam))
}

/// `sum_i l_i (OT(b, mu_i) - OT(b, b) / 2 - OT(mu_i, mu_i) / 2)`, skipping zero weights.
pub(crate) fn combine_objective(crosses: &[f64], bb: f64, own: &[f64], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    for ((&c, &o), &l) in crosses.iter().zip(own).zip(weights) {
        if l != 0.0 {
            total += l * (c - 0.5 * bb - 0.5 * o);
        }
    }
    total
}
