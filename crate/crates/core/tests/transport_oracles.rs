//! Grid solvers checked against dense reference implementations.

use gridbary_core::bary::{linearized_barycenter, precompute_maps, regularized_barycenter};
use gridbary_core::lp::{lp_barycenter, lp_ot};
use gridbary_core::ot::{displacement_field, SolverConfig};
use gridbary_core::{BarycentricWeights, Grid, GridMeasure};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_measure(rng: &mut StdRng, h: usize, w: usize) -> GridMeasure {
    let mass: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = mass.iter().sum();
    GridMeasure::new(h, w, mass.into_iter().map(|m| m / total).collect()).unwrap()
}

fn positions(h: usize, w: usize) -> Vec<[f64; 2]> {
    let s = h.max(w) as f64;
    (0..h * w)
        .map(|k| [((k % w) as f64 + 0.5) / s, ((k / w) as f64 + 0.5) / s])
        .collect()
}

fn sq(p: [f64; 2], q: [f64; 2]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

fn lse(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = v.clone().fold(f64::NEG_INFINITY, f64::max);
    m + v.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Dense entropic OT between weighted point clouds; returns `<f,a> + <g,b>`.
fn dense_ot(xs: &[[f64; 2]], a: &[f64], ys: &[[f64; 2]], b: &[f64], eps: f64) -> f64 {
    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    for _ in 0..20_000 {
        let prev = f.clone();
        for (i, fi) in f.iter_mut().enumerate() {
            *fi = -eps * lse((0..b.len()).map(|j| b[j].ln() + (g[j] - sq(xs[i], ys[j])) / eps));
        }
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = -eps * lse((0..a.len()).map(|i| a[i].ln() + (f[i] - sq(xs[i], ys[j])) / eps));
        }
        let change = f.iter().zip(&prev).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        if change < 1e-15 {
            break;
        }
    }
    f.iter().zip(a).map(|(x, y)| x * y).sum::<f64>() + g.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

fn tight(eps: f64) -> SolverConfig {
    SolverConfig {
        tolerance: 1e-13,
        max_iters: 200_000,
        ..SolverConfig::with_eps(eps)
    }
}

#[test]
fn displacement_matches_finite_differences_of_the_divergence() {
    let mut rng = StdRng::seed_from_u64(11);
    let (h, w, eps) = (5, 5, 2e-2);
    let b = random_measure(&mut rng, h, w);
    let mu = random_measure(&mut rng, h, w);
    let field = displacement_field(&b, &mu, &tight(eps)).unwrap();
    let grid = positions(h, w);

    // S(b, mu) as a function of the particle positions of b; OT(mu, mu) is constant.
    let s = |xs: &[[f64; 2]]| {
        dense_ot(xs, b.mass(), &grid, mu.mass(), eps) - 0.5 * dense_ot(xs, b.mass(), xs, b.mass(), eps)
    };
    let step = 1e-5;
    for _ in 0..10 {
        let cell = rng.gen_range(0..h * w);
        let axis = rng.gen_range(0..2);
        let mut plus = grid.clone();
        let mut minus = grid.clone();
        plus[cell][axis] += step;
        minus[cell][axis] -= step;
        let fd = (s(&plus) - s(&minus)) / (2.0 * step);
        let analytic = -2.0 * b.mass()[cell] * field.vectors[cell][axis];
        let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
        assert!(rel < 1e-4, "cell {cell} axis {axis}: fd {fd:.6e} vs field {analytic:.6e}");
    }
}

/// Plain iterative Bregman projections with the dense Gibbs kernel.
fn dense_ibp(inputs: &[GridMeasure], lam: &[f64], reg: f64) -> Vec<f64> {
    let (h, w) = inputs[0].shape();
    let xs = positions(h, w);
    let n = h * w;
    let k: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (-sq(xs[i], xs[j]) / reg).exp()).collect()).collect();
    let apply = |v: &[f64]| -> Vec<f64> { k.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect() };
    let mut v = vec![vec![1.0; n]; inputs.len()];
    let mut bary = vec![0.0; n];
    for _ in 0..5000 {
        let u: Vec<Vec<f64>> = inputs
            .iter()
            .zip(&v)
            .map(|(m, vi)| m.mass().iter().zip(apply(vi)).map(|(x, kv)| x / kv).collect())
            .collect();
        let ku: Vec<Vec<f64>> = u.iter().map(|ui| apply(ui)).collect();
        for (j, bj) in bary.iter_mut().enumerate() {
            *bj = lam.iter().zip(&ku).map(|(l, kui)| kui[j].powf(*l)).product();
        }
        for (vi, kui) in v.iter_mut().zip(&ku) {
            for j in 0..n {
                vi[j] = bary[j] / kui[j];
            }
        }
    }
    let total: f64 = bary.iter().sum();
    bary.iter().map(|x| x / total).collect()
}

#[test]
fn regularized_barycenter_matches_dense_bregman_projections() {
    let mut rng = StdRng::seed_from_u64(3);
    for lam in [[0.5, 0.5], [0.2, 0.8]] {
        let inputs = vec![random_measure(&mut rng, 8, 8), random_measure(&mut rng, 8, 8)];
        let weights = BarycentricWeights::new(lam.to_vec()).unwrap();
        let got = regularized_barycenter(&inputs, &weights, 2e-2, 5000).unwrap();
        let want = dense_ibp(&inputs, &lam, 2e-2);
        let diff = got.mass().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "max abs diff {diff:.3e}");
    }
}

#[test]
fn lp_ot_of_a_translated_block_is_the_squared_shift() {
    let (h, w) = (8, 8);
    let block = |r0: usize, c0: usize| {
        let mut m = vec![0.0; h * w];
        for r in r0..r0 + 2 {
            for c in c0..c0 + 2 {
                m[r * w + c] = 0.25;
            }
        }
        GridMeasure::new(h, w, m).unwrap()
    };
    let sol = lp_ot(&block(1, 1), &block(3, 4)).unwrap();
    let cell = Grid::new(h, w).cell_size();
    let want = (2.0f64.powi(2) + 3.0f64.powi(2)) * cell * cell;
    assert!((sol.cost - want).abs() <= sol.gap_bound, "{} vs {want}", sol.cost);
}

/// Squared 2-Wasserstein distance between measures on one row, by matching
/// cumulative mass left to right.
fn monotone_w2(xs: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0], b[0]);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let moved = ra.min(rb);
        cost += moved * (xs[i] - xs[j]).powi(2);
        ra -= moved;
        rb -= moved;
        if ra <= 1e-15 {
            i += 1;
            ra = a.get(i).copied().unwrap_or(0.0);
        }
        if rb <= 1e-15 {
            j += 1;
            rb = b.get(j).copied().unwrap_or(0.0);
        }
    }
    cost
}

#[test]
fn lp_ot_on_a_single_row_matches_the_monotone_coupling() {
    let mut rng = StdRng::seed_from_u64(5);
    let (h, w) = (2, 9);
    let xs: Vec<f64> = (0..w).map(|c| (c as f64 + 0.5) / w as f64).collect();
    for _ in 0..10 {
        let row = |rng: &mut StdRng| {
            let v: Vec<f64> = (0..w).map(|_| if rng.gen_bool(0.7) { rng.gen_range(0.1..1.0) } else { 0.0 }).collect();
            let t: f64 = v.iter().sum::<f64>() + 1e-3;
            let mut v: Vec<f64> = v.iter().map(|x| x / t).collect();
            v[w / 2] += 1e-3 / t;
            v
        };
        let (a, b) = (row(&mut rng), row(&mut rng));
        let lift = |v: &[f64]| {
            let mut m = vec![0.0; h * w];
            m[..w].copy_from_slice(v);
            GridMeasure::new(h, w, m).unwrap()
        };
        let sol = lp_ot(&lift(&a), &lift(&b)).unwrap();
        let want = monotone_w2(&xs, &a, &b);
        assert!((sol.cost - want).abs() <= sol.gap_bound + 1e-9, "{} vs {want}", sol.cost);
    }
}

#[test]
fn lp_barycenter_beats_the_linearized_barycenter_on_the_exact_objective() {
    let mut rng = StdRng::seed_from_u64(9);
    let inputs = vec![random_measure(&mut rng, 6, 6), random_measure(&mut rng, 6, 6)];
    let weights = BarycentricWeights::new(vec![0.3, 0.7]).unwrap();
    let objective = |b: &GridMeasure| -> (f64, f64) {
        let mut total = 0.0;
        let mut slack = 0.0;
        for (mu, l) in inputs.iter().zip(weights.as_slice()) {
            let sol = lp_ot(b, mu).unwrap();
            total += l * sol.cost;
            slack += l * sol.gap_bound;
        }
        (total, slack)
    };
    let exact = lp_barycenter(&inputs, &weights).unwrap();
    let cfg = SolverConfig::with_eps(1e-3);
    let linear = linearized_barycenter(&precompute_maps(&inputs, &cfg).unwrap(), &weights).unwrap();
    let (e, es) = objective(&exact);
    let (l, ls) = objective(&linear);
    assert!(e <= l + es + ls, "exact {e} vs linearized {l}");
}
