//! Lagrangian barycenters: particles sampled from a grid measure are pushed
//! along debiased Sinkhorn displacement fields and deposited back on the grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{BarycentricWeights, Grid, GridMeasure};
use crate::ot::{
    accept_best_effort, barycentric_projection, displacement_with_self, self_projection, sinkhorn_potentials, sinkhorn_self,
    DisplacementField, SolverConfig,
};

/// Weighted point masses in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCloud {
    pub positions: Vec<[f64; 2]>,
    pub masses: Vec<f64>,
}

impl ParticleCloud {
    /// One particle per cell of positive mass, placed at the cell center.
    pub fn from_measure(m: &GridMeasure) -> Self {
        let grid = m.grid();
        let (positions, masses) = m
            .mass()
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, &w)| (grid.position(i), w))
            .unzip();
        Self { positions, masses }
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }
}

/// Bilinear stencil of a point: the four surrounding cells and their weights.
/// Points outside the grid are clamped to the outermost cell centers.
fn stencil(grid: Grid, p: [f64; 2]) -> [(usize, f64); 4] {
    let (h, w) = (grid.height, grid.width);
    let (r, c) = grid.to_cell_coords(p);
    let r = r.clamp(0.0, (h - 1) as f64);
    let c = c.clamp(0.0, (w - 1) as f64);
    let r0 = (r.floor() as usize).min(h - 2);
    let c0 = (c.floor() as usize).min(w - 2);
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    [
        (r0 * w + c0, (1.0 - fr) * (1.0 - fc)),
        (r0 * w + c0 + 1, (1.0 - fr) * fc),
        ((r0 + 1) * w + c0, fr * (1.0 - fc)),
        ((r0 + 1) * w + c0 + 1, fr * fc),
    ]
}

/// Deposits every particle onto its four surrounding cell centers with
/// bilinear (area) weights.
pub fn splat(cloud: &ParticleCloud, grid: Grid) -> Result<GridMeasure> {
    let mut out = vec![0.0; grid.len()];
    for (p, &m) in cloud.positions.iter().zip(&cloud.masses) {
        for (j, wt) in stencil(grid, *p) {
            out[j] += m * wt;
        }
    }
    crate::measure::normalize(grid.height, grid.width, &out)
}

/// Displacement field from the uniform measure to one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedMap {
    /// Content digest of the target measure (hex FNV-1a of its masses).
    pub source_id: String,
    pub eps: f64,
    pub field: DisplacementField,
}

/// Hex FNV-1a digest of the little-endian bytes of the masses.
pub fn measure_digest(m: &GridMeasure) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.mass() {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Map from the uniform measure on the grid of `mu` to `mu`.
pub fn precompute_map(mu: &GridMeasure, cfg: &SolverConfig) -> Result<PrecomputedMap> {
    Ok(precompute_maps(std::slice::from_ref(mu), cfg)?.remove(0))
}

/// [`precompute_map`] for several inputs on one grid, sharing the uniform
/// self-transport term.
pub fn precompute_maps(inputs: &[GridMeasure], cfg: &SolverConfig) -> Result<Vec<PrecomputedMap>> {
    let Some(first) = inputs.first() else {
        return Ok(Vec::new());
    };
    for m in inputs {
        first.ensure_same_shape(m)?;
    }
    let uniform = GridMeasure::uniform(first.height(), first.width())?;
    let own = self_projection(&uniform, cfg)?;
    inputs
        .iter()
        .map(|mu| {
            Ok(PrecomputedMap {
                source_id: measure_digest(mu),
                eps: cfg.eps,
                field: displacement_with_self(&uniform, &own, mu, cfg)?,
            })
        })
        .collect()
}

fn check_weights(n: usize, weights: &BarycentricWeights) -> Result<()> {
    if n != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {n} inputs",
            weights.len()
        )));
    }
    Ok(())
}

/// Moves every particle by `scale` times the weighted sum of the fields, read
/// back through the splat stencil weighted by the mass each stencil cell holds
/// in `b`. A particle at a cell center reads exactly that cell's vector.
fn advect(cloud: &mut ParticleCloud, b: &GridMeasure, fields: &[DisplacementField], weights: &[f64], scale: f64) {
    let grid = b.grid();
    for p in cloud.positions.iter_mut() {
        let st = stencil(grid, *p);
        let den: f64 = st.iter().map(|&(j, wt)| wt * b.mass()[j]).sum();
        if den <= 0.0 {
            continue;
        }
        let mut step = [0.0; 2];
        for &(j, wt) in &st {
            let a = wt * b.mass()[j] / den;
            if a == 0.0 {
                continue;
            }
            for (f, &l) in fields.iter().zip(weights) {
                step[0] += a * l * f.vectors[j][0];
                step[1] += a * l * f.vectors[j][1];
            }
        }
        p[0] += scale * step[0];
        p[1] += scale * step[1];
    }
}

/// One advection of the uniform measure by `sum_i l_i v^{mu_i}`.
pub fn linearized_barycenter(maps: &[PrecomputedMap], weights: &BarycentricWeights) -> Result<GridMeasure> {
    check_weights(maps.len(), weights)?;
    let first = &maps[0].field;
    for m in maps {
        if (m.field.height, m.field.width) != (first.height, first.width) {
            return Err(Error::ShapeMismatch {
                left: (first.height, first.width),
                right: (m.field.height, m.field.width),
            });
        }
    }
    let uniform = GridMeasure::uniform(first.height, first.width)?;
    let fields: Vec<DisplacementField> = maps.iter().map(|m| m.field.clone()).collect();
    let mut cloud = ParticleCloud::from_measure(&uniform);
    advect(&mut cloud, &uniform, &fields, weights.as_slice(), 1.0);
    splat(&cloud, uniform.grid())
}

/// Trial step lengths are `SHRINK^-t` for `t = 0..TRIALS`.
const TRIALS: usize = 7;
const SHRINK: f64 = 4.0;

/// A grid measure with its objective value, the fields towards every input
/// and the first variation `sum_i l_i (f_{b,mu_i} - f_{b,b})` of the objective.
struct Iterate {
    b: GridMeasure,
    objective: f64,
    fields: Vec<DisplacementField>,
    variation: Vec<f64>,
}

fn evaluate(b: GridMeasure, inputs: &[GridMeasure], own: &[f64], weights: &[f64], cfg: &SolverConfig) -> Result<Iterate> {
    let me = accept_best_effort(sinkhorn_self(&b, cfg))?;
    let self_proj = barycentric_projection(&me.potentials.g, &b, cfg.eps);
    let mut crosses = Vec::with_capacity(inputs.len());
    let mut fields = Vec::with_capacity(inputs.len());
    let mut variation = vec![0.0; b.len()];
    for (mu, &l) in inputs.iter().zip(weights) {
        let cross = accept_best_effort(sinkhorn_potentials(&b, mu, cfg))?;
        for ((v, f), g) in variation.iter_mut().zip(&cross.potentials.f).zip(&me.potentials.f) {
            *v += l * (f - g);
        }
        let to_mu = barycentric_projection(&cross.potentials.g, mu, cfg.eps);
        let vectors = b
            .mass()
            .iter()
            .zip(to_mu.iter().zip(&self_proj))
            .map(|(&w, (t, s))| if w > 0.0 { [t[0] - s[0], t[1] - s[1]] } else { [0.0; 2] })
            .collect();
        fields.push(DisplacementField {
            height: b.height(),
            width: b.width(),
            vectors,
        });
        crosses.push(cross.cost);
    }
    let objective = super::combine_objective(&crosses, me.cost, own, weights);
    Ok(Iterate {
        b,
        objective,
        fields,
        variation,
    })
}

/// Moves every particle by `-scale / 2` times the gradient of the bilinear
/// interpolant of `phi`. For a particle of mass `m` this is the gradient of the
/// splatted objective divided by `2 m`, the same scaling as the displacement.
fn descend(cloud: &mut ParticleCloud, grid: Grid, phi: &[f64], scale: f64) {
    let (h, w) = (grid.height, grid.width);
    let s = h.max(w) as f64;
    for p in cloud.positions.iter_mut() {
        let (r, c) = grid.to_cell_coords(*p);
        let (rc, cc) = (r.clamp(0.0, (h - 1) as f64), c.clamp(0.0, (w - 1) as f64));
        let r0 = (rc.floor() as usize).min(h - 2);
        let c0 = (cc.floor() as usize).min(w - 2);
        let (fr, fc) = (rc - r0 as f64, cc - c0 as f64);
        let at = |dr: usize, dc: usize| phi[(r0 + dr) * w + c0 + dc];
        let d_col = (1.0 - fr) * (at(0, 1) - at(0, 0)) + fr * (at(1, 1) - at(1, 0));
        let d_row = (1.0 - fc) * (at(1, 0) - at(0, 0)) + fc * (at(1, 1) - at(0, 1));
        if r == rc {
            p[1] -= 0.5 * scale * s * d_row;
        }
        if c == cc {
            p[0] -= 0.5 * scale * s * d_col;
        }
    }
}

/// Particle descent on `sum_i l_i S_eps(b, mu_i)` starting from the uniform
/// measure.
///
/// Each step splats the particle cloud, recomputes the fields on the grid and
/// moves the particles; the particles themselves are never re-gridded. The
/// first step is the full linearized step. Later steps follow the gradient of
/// the splatted objective, shrink their length until the objective decreases
/// and stop early once no trial length does.
pub fn lagrangian_barycenter(
    inputs: &[GridMeasure],
    weights: &BarycentricWeights,
    cfg: &SolverConfig,
    steps: usize,
) -> Result<GridMeasure> {
    check_weights(inputs.len(), weights)?;
    if steps == 0 {
        return Err(Error::InvalidConfig("at least one descent step is required".into()));
    }
    for m in inputs {
        inputs[0].ensure_same_shape(m)?;
    }
    let lam = weights.as_slice();
    let grid = inputs[0].grid();
    let uniform = GridMeasure::uniform(grid.height, grid.width)?;
    let mut cloud = ParticleCloud::from_measure(&uniform);

    if steps == 1 {
        let own = self_projection(&uniform, cfg)?;
        let fields = inputs
            .iter()
            .map(|mu| displacement_with_self(&uniform, &own, mu, cfg))
            .collect::<Result<Vec<_>>>()?;
        advect(&mut cloud, &uniform, &fields, lam, 1.0);
        return splat(&cloud, grid);
    }

    let own = inputs
        .iter()
        .zip(lam)
        .map(|(mu, &l)| if l == 0.0 { Ok(0.0) } else { Ok(accept_best_effort(sinkhorn_self(mu, cfg))?.cost) })
        .collect::<Result<Vec<_>>>()?;
    let start = evaluate(uniform, inputs, &own, lam, cfg)?;
    advect(&mut cloud, &start.b, &start.fields, lam, 1.0);
    let mut current = evaluate(splat(&cloud, grid)?, inputs, &own, lam, cfg)?;

    'descent: for _ in 1..steps {
        let mut scale = 1.0;
        for _ in 0..TRIALS {
            let mut trial = cloud.clone();
            descend(&mut trial, grid, &current.variation, scale);
            let next = evaluate(splat(&trial, grid)?, inputs, &own, lam, cfg)?;
            if next.objective < current.objective {
                cloud = trial;
                current = next;
                continue 'descent;
            }
            scale /= SHRINK;
        }
        log::debug!("particle descent stalled at objective {:.6e}", current.objective);
        break;
    }
    Ok(current.b)
}
