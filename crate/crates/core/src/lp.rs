//! Exact transport through min-cost flow.
//!
//! Masses are scaled to integers (`2^40` units per unit mass) and costs to
//! integers (`1e12` units per squared normalized distance), then solved by
//! successive shortest paths with Dijkstra on reduced costs. Reported costs are
//! re-evaluated in `f64` from the recovered plan.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::measure::{normalize, BarycentricWeights, Grid, GridMeasure};
use crate::ot::TransportPlan;

const MASS_SCALE: f64 = (1u64 << 40) as f64;
const COST_SCALE: f64 = 1e12;
const INF_CAP: i64 = i64::MAX / 4;

/// Largest `|supp(a)| * |supp(b)|` accepted by [`lp_ot`].
pub const MAX_LP_ARCS: usize = 1_000_000;
/// Largest grid accepted by [`lp_barycenter`].
pub const MAX_LP_BARYCENTER_CELLS: usize = 16 * 16;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i64,
}

/// Min-cost flow network with integer capacities and nonnegative integer costs.
#[derive(Debug, Clone)]
pub struct MinCostFlow {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self {
            arcs: Vec::new(),
            adj: vec![Vec::new(); nodes],
        }
    }

    /// Adds `from -> to` and its residual twin; returns the forward arc id.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i64) -> usize {
        assert!(cost >= 0, "min-cost flow requires nonnegative costs");
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Flow currently carried by forward arc `id`.
    pub fn flow(&self, id: usize) -> i64 {
        self.arcs[id + 1].cap
    }

    /// Sends `amount` units from `source` to `sink` at minimum cost.
    pub fn run(&mut self, source: usize, sink: usize, amount: i64) -> Result<()> {
        let n = self.adj.len();
        let mut potential = vec![0i64; n];
        let mut remaining = amount;
        let mut dist = vec![i64::MAX; n];
        let mut prev = vec![usize::MAX; n];
        while remaining > 0 {
            dist.iter_mut().for_each(|d| *d = i64::MAX);
            prev.iter_mut().for_each(|p| *p = usize::MAX);
            dist[source] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i64, source)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &id in &self.adj[u] {
                    let arc = &self.arcs[id];
                    if arc.cap <= 0 {
                        continue;
                    }
                    let reduced = arc.cost + potential[u] - potential[arc.to];
                    let nd = d + reduced.max(0);
                    if nd < dist[arc.to] {
                        dist[arc.to] = nd;
                        prev[arc.to] = id;
                        heap.push(Reverse((nd, arc.to)));
                    }
                }
            }
            if dist[sink] == i64::MAX {
                return Err(Error::Infeasible(format!("{remaining} units could not be routed")));
            }
            // Capping at the sink distance keeps every residual reduced cost
            // nonnegative, including arcs into nodes not reached this round.
            let cap = dist[sink];
            for (p, &d) in potential.iter_mut().zip(&dist) {
                *p += d.min(cap);
            }
            let mut push = remaining;
            let mut v = sink;
            while v != source {
                let id = prev[v];
                push = push.min(self.arcs[id].cap);
                v = self.arcs[id ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let id = prev[v];
                self.arcs[id].cap -= push;
                self.arcs[id ^ 1].cap += push;
                v = self.arcs[id ^ 1].to;
            }
            remaining -= push;
        }
        Ok(())
    }
}

/// Exact transport result.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub cost: f64,
    pub plan: TransportPlan,
    /// Upper bound on `cost - true optimum` introduced by integer scaling.
    pub gap_bound: f64,
}

fn support(m: &GridMeasure) -> Vec<usize> {
    (0..m.len()).filter(|&i| m.mass()[i] > 0.0).collect()
}

/// Integer supplies summing to exactly `MASS_SCALE` units.
fn integer_masses(m: &GridMeasure, cells: &[usize]) -> Vec<i64> {
    let total: f64 = cells.iter().map(|&i| m.mass()[i]).sum();
    let mut units: Vec<i64> = cells
        .iter()
        .map(|&i| (m.mass()[i] / total * MASS_SCALE).round() as i64)
        .collect();
    let drift = MASS_SCALE as i64 - units.iter().sum::<i64>();
    if let Some(k) = (0..units.len()).max_by_key(|&k| units[k]) {
        units[k] += drift;
    }
    units
}

fn sq_dist(grid: Grid, i: usize, j: usize) -> f64 {
    let p = grid.position(i);
    let q = grid.position(j);
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

fn scaled_cost(c: f64) -> i64 {
    (c * COST_SCALE).round() as i64
}

fn check_mass(a: &GridMeasure, b: &GridMeasure) -> Result<()> {
    let gap = (a.total() - b.total()).abs();
    if gap > 1e-9 {
        return Err(Error::Infeasible(format!("total masses differ by {gap:.3e}")));
    }
    Ok(())
}

/// Exact optimal transport between two grid measures.
pub fn lp_ot(a: &GridMeasure, b: &GridMeasure) -> Result<LpSolution> {
    a.ensure_same_shape(b)?;
    check_mass(a, b)?;
    let grid = a.grid();
    let rows = support(a);
    let cols = support(b);
    if rows.len() * cols.len() > MAX_LP_ARCS {
        return Err(Error::TooLarge(format!(
            "{} x {} support pairs exceed {MAX_LP_ARCS}",
            rows.len(),
            cols.len()
        )));
    }
    let supply = integer_masses(a, &rows);
    let demand = integer_masses(b, &cols);

    let (src, sink) = (rows.len() + cols.len(), rows.len() + cols.len() + 1);
    let mut net = MinCostFlow::new(sink + 1);
    for (i, &s) in supply.iter().enumerate() {
        net.add_arc(src, i, s, 0);
    }
    for (j, &d) in demand.iter().enumerate() {
        net.add_arc(rows.len() + j, sink, d, 0);
    }
    let mut ids = Vec::with_capacity(rows.len() * cols.len());
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            ids.push(net.add_arc(i, rows.len() + j, INF_CAP, scaled_cost(sq_dist(grid, ri, cj))));
        }
    }
    net.run(src, sink, MASS_SCALE as i64)?;

    let entries: Vec<f64> = ids.iter().map(|&id| net.flow(id) as f64 / MASS_SCALE).collect();
    let plan = TransportPlan { rows, cols, entries };
    let cost = plan.cost(grid);
    let n_cells = (plan.rows.len() + plan.cols.len()) as f64;
    let gap_bound = n_cells / MASS_SCALE * 2.0 + 1.0 / COST_SCALE;
    Ok(LpSolution { cost, plan, gap_bound })
}

/// Exact two-input barycenter minimizing `l1 W2^2(b, mu1) + l2 W2^2(b, mu2)`.
///
/// The program over `(b, pi1, pi2)` is a transshipment problem: mass leaves
/// the support of `mu1`, passes through a barycenter cell and lands on the
/// support of `mu2`. Flow conservation at the middle layer ties the two plans
/// to a common marginal `b`.
pub fn lp_barycenter(inputs: &[GridMeasure], weights: &BarycentricWeights) -> Result<GridMeasure> {
    if inputs.len() != 2 || weights.len() != 2 {
        return Err(Error::InvalidConfig(
            "the exact barycenter supports exactly two inputs".into(),
        ));
    }
    let (m1, m2) = (&inputs[0], &inputs[1]);
    m1.ensure_same_shape(m2)?;
    let grid = m1.grid();
    let cells = grid.len();
    if cells > MAX_LP_BARYCENTER_CELLS {
        return Err(Error::TooLarge(format!(
            "{}x{} grid exceeds the exact barycenter limit of {MAX_LP_BARYCENTER_CELLS} cells",
            grid.height, grid.width
        )));
    }
    // Both inputs are rescaled to the same integer total below, so measures
    // read back from f32 files need not agree to the last bit.
    let (l1, l2) = (weights.as_slice()[0], weights.as_slice()[1]);
    let s1 = support(m1);
    let s2 = support(m2);
    let supply = integer_masses(m1, &s1);
    let demand = integer_masses(m2, &s2);

    // Nodes: supp(mu1), grid cells, supp(mu2), source, sink.
    let mid = s1.len();
    let out = mid + cells;
    let (src, sink) = (out + s2.len(), out + s2.len() + 1);
    let mut net = MinCostFlow::new(sink + 1);
    for (i, &s) in supply.iter().enumerate() {
        net.add_arc(src, i, s, 0);
    }
    for (j, &d) in demand.iter().enumerate() {
        net.add_arc(out + j, sink, d, 0);
    }
    let mut inflow = vec![Vec::new(); cells];
    for (i, &ci) in s1.iter().enumerate() {
        for (k, arcs) in inflow.iter_mut().enumerate() {
            arcs.push(net.add_arc(i, mid + k, INF_CAP, scaled_cost(l1 * sq_dist(grid, ci, k))));
        }
    }
    for k in 0..cells {
        for (j, &cj) in s2.iter().enumerate() {
            net.add_arc(mid + k, out + j, INF_CAP, scaled_cost(l2 * sq_dist(grid, k, cj)));
        }
    }
    net.run(src, sink, MASS_SCALE as i64)?;

    let mass: Vec<f64> = inflow
        .iter()
        .map(|arcs| arcs.iter().map(|&id| net.flow(id)).sum::<i64>() as f64 / MASS_SCALE)
        .collect();
    normalize(grid.height, grid.width, &mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::normalize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(h: usize, w: usize, seed: u64, sparsity: f64) -> GridMeasure {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = (0..h * w)
            .map(|_| if rng.gen::<f64>() < sparsity { 0.0 } else { rng.gen_range(0.05..1.0) })
            .collect();
        normalize(h, w, &raw).unwrap()
    }

    /// Brute force over all permutation plans: valid for uniform measures on
    /// equally many cells, where an optimal plan is a permutation.
    fn permutation_optimum(grid: Grid, src: &[usize], dst: &[usize]) -> f64 {
        fn rec(grid: Grid, src: &[usize], dst: &mut Vec<usize>, k: usize, acc: f64, best: &mut f64) {
            if k == src.len() {
                *best = best.min(acc);
                return;
            }
            for i in k..dst.len() {
                dst.swap(k, i);
                rec(grid, src, dst, k + 1, acc + sq_dist(grid, src[k], dst[k]), best);
                dst.swap(k, i);
            }
        }
        let mut best = f64::INFINITY;
        rec(grid, src, &mut dst.to_vec(), 0, 0.0, &mut best);
        best / src.len() as f64
    }

    #[test]
    fn identical_measures_cost_nothing() {
        let a = random(4, 4, 1, 0.3);
        let s = lp_ot(&a, &a).unwrap();
        assert!(s.cost.abs() < 1e-12);
        for (i, &r) in s.plan.rows.iter().enumerate() {
            for (j, &c) in s.plan.cols.iter().enumerate() {
                if r != c {
                    assert_eq!(s.plan.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn opposite_corners() {
        let n = 8;
        let a = GridMeasure::delta(n, n, 0, 0).unwrap();
        let b = GridMeasure::delta(n, n, n - 1, n - 1).unwrap();
        let h = 1.0 / n as f64;
        let expected = 2.0 * (1.0 - h) * (1.0 - h);
        assert!((lp_ot(&a, &b).unwrap().cost - expected).abs() < 1e-12);
    }

    #[test]
    fn matches_permutation_brute_force() {
        let grid = Grid::new(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let mut cells: Vec<usize> = (0..16).collect();
            for i in (1..16).rev() {
                cells.swap(i, rng.gen_range(0..=i));
            }
            let src = &cells[..5];
            let dst = &cells[5..10];
            let mut am = vec![0.0; 16];
            let mut bm = vec![0.0; 16];
            src.iter().for_each(|&i| am[i] = 1.0);
            dst.iter().for_each(|&i| bm[i] = 1.0);
            let a = normalize(4, 4, &am).unwrap();
            let b = normalize(4, 4, &bm).unwrap();
            let lp = lp_ot(&a, &b).unwrap();
            let brute = permutation_optimum(grid, src, dst);
            assert!((lp.cost - brute).abs() < 1e-9, "{} vs {}", lp.cost, brute);
        }
    }

    #[test]
    fn plan_has_exact_marginals() {
        let a = random(5, 5, 2, 0.4);
        let b = random(5, 5, 3, 0.4);
        let s = lp_ot(&a, &b).unwrap();
        for (v, &i) in s.plan.row_sums().iter().zip(&s.plan.rows) {
            assert!((v - a.mass()[i]).abs() < 1e-11);
        }
        for (v, &j) in s.plan.col_sums().iter().zip(&s.plan.cols) {
            assert!((v - b.mass()[j]).abs() < 1e-11);
        }
    }

    #[test]
    fn barycenter_of_identical_inputs_is_input() {
        let mu = random(5, 5, 4, 0.5);
        let w = BarycentricWeights::new(vec![0.3, 0.7]).unwrap();
        let b = lp_barycenter(&[mu.clone(), mu.clone()], &w).unwrap();
        for (x, y) in b.mass().iter().zip(mu.mass()) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn barycenter_of_corner_deltas_is_midpoint() {
        let n = 9;
        let a = GridMeasure::delta(n, n, 0, 0).unwrap();
        let b = GridMeasure::delta(n, n, n - 1, n - 1).unwrap();
        let w = BarycentricWeights::uniform(2).unwrap();
        let bary = lp_barycenter(&[a, b], &w).unwrap();
        assert_eq!(bary.argmax(), (4, 4));
        assert!((bary.get(4, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn guards() {
        let big = GridMeasure::uniform(32, 32).unwrap();
        let w = BarycentricWeights::uniform(2).unwrap();
        assert!(matches!(
            lp_barycenter(&[big.clone(), big.clone()], &w),
            Err(Error::TooLarge(_))
        ));
        let huge = GridMeasure::uniform(40, 40).unwrap();
        assert!(matches!(lp_ot(&huge, &huge), Err(Error::TooLarge(_))));
    }
}
