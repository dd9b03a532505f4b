//! Probability measures on regular 2-D grids.
//!
//! A [`GridMeasure`] stores one nonnegative mass per cell in row-major order.
//! Cell `(row, col)` sits at `((col + 0.5) / s, (row + 0.5) / s)` with
//! `s = max(height, width)`, so the longest side spans the unit interval and
//! the quadratic ground cost does not depend on resolution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`GridMeasure`].
pub const MASS_TOLERANCE: f64 = 1e-6;

/// Floor added to the second argument of [`kl_divergence`] before the log.
pub const KL_FLOOR: f64 = 1e-12;

/// A nonnegative mass grid summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeasure {
    height: usize,
    width: usize,
    mass: Vec<f64>,
}

impl GridMeasure {
    /// Wraps an already-normalized mass grid, checking every invariant.
    pub fn new(height: usize, width: usize, mass: Vec<f64>) -> Result<Self> {
        check_dims(height, width, mass.len())?;
        check_entries(&mass)?;
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::MassNotNormalized { total });
        }
        Ok(Self {
            height,
            width,
            mass,
        })
    }

    /// Uniform measure on a `height x width` grid.
    pub fn uniform(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width, height * width)?;
        let n = height * width;
        Ok(Self {
            height,
            width,
            mass: vec![1.0 / n as f64; n],
        })
    }

    /// Unit mass on a single cell.
    pub fn delta(height: usize, width: usize, row: usize, col: usize) -> Result<Self> {
        check_dims(height, width, height * width)?;
        if row >= height || col >= width {
            return Err(Error::InvalidConfig(format!(
                "cell ({row}, {col}) outside {height}x{width} grid"
            )));
        }
        let mut mass = vec![0.0; height * width];
        mass[row * width + col] = 1.0;
        Ok(Self {
            height,
            width,
            mass,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.mass[row * self.width + col]
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Grid geometry shared by every measure of this shape.
    pub fn grid(&self) -> Grid {
        Grid::new(self.height, self.width)
    }

    /// Number of cells carrying positive mass.
    pub fn support_len(&self) -> usize {
        self.mass.iter().filter(|&&m| m > 0.0).count()
    }

    /// Row-major index of the heaviest cell (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &m) in self.mass.iter().enumerate() {
            if m > self.mass[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Expected position under the measure, in normalized coordinates.
    pub fn mean_position(&self) -> [f64; 2] {
        let grid = self.grid();
        let mut acc = [0.0; 2];
        for (i, &m) in self.mass.iter().enumerate() {
            let p = grid.position(i);
            acc[0] += m * p[0];
            acc[1] += m * p[1];
        }
        acc
    }

    pub fn ensure_same_shape(&self, other: &GridMeasure) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// Geometry of a `height x width` grid in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Side length of one cell in normalized units.
    pub fn cell_size(&self) -> f64 {
        1.0 / self.height.max(self.width) as f64
    }

    /// Normalized x coordinate of column `col`.
    pub fn x(&self, col: usize) -> f64 {
        (col as f64 + 0.5) * self.cell_size()
    }

    /// Normalized y coordinate of row `row`.
    pub fn y(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * self.cell_size()
    }

    /// `[x, y]` position of the cell with row-major index `index`.
    pub fn position(&self, index: usize) -> [f64; 2] {
        [self.x(index % self.width), self.y(index / self.width)]
    }

    /// Continuous (row, col) grid coordinates of a normalized point.
    pub fn to_cell_coords(&self, p: [f64; 2]) -> (f64, f64) {
        let s = self.height.max(self.width) as f64;
        (p[1] * s - 0.5, p[0] * s - 0.5)
    }
}

/// Barycentric weights: nonnegative, at least two, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycentricWeights(Vec<f64>);

impl BarycentricWeights {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::InvalidWeights(format!(
                "need at least two weights, got {}",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidWeights(format!("invalid weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Rescales arbitrary nonnegative weights to sum to one. The flag reports
    /// whether rescaling was needed.
    pub fn normalized(weights: Vec<f64>) -> Result<(Self, bool)> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidWeights(format!(
                "weights must have a positive finite sum, got {total}"
            )));
        }
        if (total - 1.0).abs() <= Self::SUM_TOLERANCE {
            return Self::new(weights).map(|w| (w, false));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect()).map(|w| (w, true))
    }

    /// Equal weights over `n` inputs.
    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Normalizes a nonnegative grid so that it sums to one.
pub fn normalize(height: usize, width: usize, grid: &[f64]) -> Result<GridMeasure> {
    check_dims(height, width, grid.len())?;
    check_entries(grid)?;
    let total: f64 = grid.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZero);
    }
    let mass = grid.iter().map(|&m| m / total).collect();
    Ok(GridMeasure {
        height,
        width,
        mass,
    })
}

/// `sum p ln(p / (q + floor))` over cells with positive `p`.
pub fn kl_divergence(p: &GridMeasure, q: &GridMeasure) -> Result<f64> {
    p.ensure_same_shape(q)?;
    Ok(kl_slices(p.mass(), q.mass()))
}

/// Slice form of [`kl_divergence`]; both slices must have equal length.
pub fn kl_slices(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_slices length mismatch");
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * (pi / (qi + KL_FLOOR)).ln())
        .sum();
    // The floor can push the sum a hair below zero when p == q.
    kl.max(0.0)
}

/// Total-variation style `sum |p - q|`.
pub fn l1_distance(p: &GridMeasure, q: &GridMeasure) -> Result<f64> {
    p.ensure_same_shape(q)?;
    Ok(p.mass().iter().zip(q.mass()).map(|(a, b)| (a - b).abs()).sum())
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidDimensions { height, width });
    }
    if height * width != len {
        return Err(Error::DimensionMismatch {
            height,
            width,
            got: len,
        });
    }
    Ok(())
}

fn check_entries(mass: &[f64]) -> Result<()> {
    for (index, &value) in mass.iter().enumerate() {
        if value.is_nan() || value.is_infinite() {
            return Err(Error::NonFinite { index });
        }
        if value < 0.0 {
            return Err(Error::NegativeMass { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_uniform_and_single_support() {
        let m = normalize(2, 2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(m.mass(), &[0.25; 4]);
        let m = normalize(2, 2, &[2.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.mass(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_random_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..64).map(|_| rng.gen_range(0.01..5.0)).collect();
        let m = normalize(8, 8, &raw).unwrap();
        assert!((m.total() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(normalize(2, 2, &[0.0; 4]), Err(Error::AllZero)));
        assert!(matches!(
            normalize(2, 2, &[1.0, -0.5, 0.0, 0.0]),
            Err(Error::NegativeMass { index: 1, .. })
        ));
        assert!(matches!(
            normalize(2, 2, &[1.0, f64::NAN, 0.0, 0.0]),
            Err(Error::NonFinite { index: 1 })
        ));
        assert!(matches!(
            normalize(1, 4, &[1.0; 4]),
            Err(Error::InvalidDimensions { .. })
        ));
    }

    #[test]
    fn kl_closed_forms() {
        let p = [0.5, 0.5];
        let q = [0.25, 0.75];
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_slices(&p, &q) - expected).abs() < 1e-10);
        assert!((expected - 0.14384).abs() < 1e-5);

        assert!((kl_slices(&[1.0, 0.0], &[0.5, 0.5]) - 2f64.ln()).abs() < 1e-10);

        // Same values embedded in 2x2 grids with zero padding.
        let p = GridMeasure::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let q = GridMeasure::new(2, 2, vec![0.25, 0.75, 0.0, 0.0]).unwrap();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-10);
        assert!(kl_divergence(&p, &p).unwrap() < 1e-10);
    }

    #[test]
    fn l1_examples() {
        let p = GridMeasure::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let q = GridMeasure::new(2, 2, vec![0.25, 0.75, 0.0, 0.0]).unwrap();
        assert!((l1_distance(&p, &q).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(l1_distance(&p, &p).unwrap(), 0.0);
        let a = GridMeasure::delta(3, 3, 0, 0).unwrap();
        let b = GridMeasure::delta(3, 3, 2, 1).unwrap();
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = GridMeasure::uniform(2, 2).unwrap();
        let b = GridMeasure::uniform(2, 3).unwrap();
        assert!(matches!(kl_divergence(&a, &b), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(l1_distance(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn weights_validation() {
        assert!(BarycentricWeights::new(vec![1.0]).is_err());
        assert!(BarycentricWeights::new(vec![0.5, 0.6]).is_err());
        assert!(BarycentricWeights::new(vec![-0.5, 1.5]).is_err());
        let (w, rescaled) = BarycentricWeights::normalized(vec![1.0, 3.0]).unwrap();
        assert!(rescaled);
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn grid_coordinates_use_longest_side() {
        let g = Grid::new(2, 4);
        assert_eq!(g.cell_size(), 0.25);
        assert_eq!(g.position(5), [0.375, 0.375]);
        let (r, c) = g.to_cell_coords([0.375, 0.375]);
        assert!((r - 1.0).abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    fn measure(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter("nonzero", |v| v.iter().sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(a in measure(16), b in measure(16), c in measure(16)) {
            let a = normalize(4, 4, &a).unwrap();
            let b = normalize(4, 4, &b).unwrap();
            let c = normalize(4, 4, &c).unwrap();
            let ab = l1_distance(&a, &b).unwrap();
            let ba = l1_distance(&b, &a).unwrap();
            let bc = l1_distance(&b, &c).unwrap();
            let ac = l1_distance(&a, &c).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn kl_is_nonnegative_and_zero_only_on_equal(a in measure(16), b in measure(16)) {
            let a = normalize(4, 4, &a).unwrap();
            let b = normalize(4, 4, &b).unwrap();
            let kl = kl_divergence(&a, &b).unwrap();
            prop_assert!(kl >= 0.0);
            let max_diff = a.mass().iter().zip(b.mass()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            if kl == 0.0 {
                prop_assert!(max_diff <= 1e-9);
            }
        }
    }
}
