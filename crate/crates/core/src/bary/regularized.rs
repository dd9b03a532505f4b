//! Entropy-regularized barycenters by iterative Bregman projections, computed
//! with log-domain scalings and the separable kernel.

use crate::error::{Error, Result};
use crate::measure::{BarycentricWeights, GridMeasure};
use crate::ot::{LogKernel, SolverDiagnostics};

pub const DEFAULT_REG: f64 = 1e-3;
pub const DEFAULT_MAX_ITERS: usize = 2000;
/// Stop once the summed L1 marginal violation of all couplings is below this.
pub const TOLERANCE: f64 = 1e-9;

/// Regularized barycenter with kernel `exp(-|x - y|^2 / reg)`.
///
/// Each iteration projects the couplings onto their input marginals, sets the
/// barycenter to the weighted geometric mean of the smoothed scalings, then
/// projects onto the shared marginal.
pub fn regularized_barycenter(
    inputs: &[GridMeasure],
    weights: &BarycentricWeights,
    reg: f64,
    max_iters: usize,
) -> Result<GridMeasure> {
    if !(reg > 0.0 && reg.is_finite()) {
        return Err(Error::InvalidConfig(format!("regularization must be positive, got {reg}")));
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
    let (h, w) = inputs[0].shape();
    let kernel = LogKernel::new(inputs[0].grid(), reg);
    let lam = weights.as_slice();
    let log_mu: Vec<Vec<f64>> = inputs
        .iter()
        .map(|m| m.mass().iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect())
        .collect();

    let n = h * w;
    let mut lv = vec![vec![0.0; n]; inputs.len()];
    let mut lu = vec![vec![0.0; n]; inputs.len()];
    let mut lb = vec![0.0; n];
    let mut violation = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iters {
        let kv: Vec<Vec<f64>> = lv.iter().map(|v| kernel.apply(v)).collect();
        if iterations > 0 {
            // Row marginals of the current couplings against the inputs.
            violation = (0..inputs.len())
                .map(|i| {
                    inputs[i]
                        .mass()
                        .iter()
                        .zip(lu[i].iter().zip(&kv[i]))
                        .map(|(&m, (u, k))| ((u + k).exp() - m).abs())
                        .sum::<f64>()
                })
                .sum();
            if violation <= TOLERANCE {
                break;
            }
        }
        for i in 0..inputs.len() {
            for j in 0..n {
                lu[i][j] = log_mu[i][j] - kv[i][j];
            }
        }
        let ku: Vec<Vec<f64>> = lu.iter().map(|u| kernel.apply(u)).collect();
        lb.iter_mut().enumerate().for_each(|(j, b)| {
            *b = lam.iter().zip(&ku).map(|(l, k)| if *l > 0.0 { l * k[j] } else { 0.0 }).sum();
        });
        for i in 0..inputs.len() {
            for j in 0..n {
                lv[i][j] = lb[j] - ku[i][j];
            }
        }
        iterations += 1;
    }

    let max = lb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mass: Vec<f64> = lb.iter().map(|v| (v - max).exp()).collect();
    let b = crate::measure::normalize(h, w, &mass)?;
    if violation <= TOLERANCE {
        Ok(b)
    } else {
        Err(Error::BarycenterNoConvergence {
            diagnostics: SolverDiagnostics {
                iterations,
                final_violation: violation,
                eps_schedule: vec![reg],
                converged: false,
            },
            best: Box::new(b),
        })
    }
}
