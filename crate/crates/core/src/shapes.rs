//! Random shapes built from primitives with boolean operators, and their
//! Sobel contours.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::GridMeasure;

/// How many times a degenerate (empty or full) composition is regenerated.
pub const MAX_RETRIES: usize = 20;

/// Parameters of the depth mixture: `U(0, max)`, `N(0, sigma)`, `N(max, sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthLaw {
    pub max_depth: u32,
    pub sigma: f64,
}

impl Default for DepthLaw {
    fn default() -> Self {
        Self {
            max_depth: 50,
            sigma: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Ellipse,
    Triangle,
    Rectangle,
    Line,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 4] = [Self::Ellipse, Self::Triangle, Self::Rectangle, Self::Line];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeGenConfig {
    pub size: usize,
    pub seed: u64,
    pub primitives: Vec<PrimitiveKind>,
    pub depth: DepthLaw,
    /// Line width in cells.
    pub line_thickness: usize,
}

impl ShapeGenConfig {
    /// Defaults for a `size x size` canvas; line width is 2 cells at 512 and
    /// scales with the canvas, with a floor of one cell.
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            size,
            seed,
            primitives: PrimitiveKind::ALL.to_vec(),
            depth: DepthLaw::default(),
            line_thickness: ((2 * size) as f64 / 512.0).round().max(1.0) as usize,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < 32 {
            return Err(Error::InvalidConfig(format!("shape canvas must be at least 32, got {}", self.size)));
        }
        if self.primitives.is_empty() {
            return Err(Error::InvalidConfig("no primitive kinds enabled".into()));
        }
        if self.line_thickness == 0 {
            return Err(Error::InvalidConfig("line thickness must be at least one cell".into()));
        }
        if !(self.depth.sigma > 0.0 && self.depth.sigma.is_finite()) {
            return Err(Error::InvalidConfig("depth sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Which mixture component produced a depth draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthBranch {
    Uniform,
    Low,
    High,
}

/// Depth draw from the equal-weight mixture, rounded and clamped to `[0, max]`.
pub fn sample_depth_branch<R: Rng + ?Sized>(rng: &mut R, law: &DepthLaw) -> (u32, DepthBranch) {
    let max = law.max_depth as f64;
    let branch = match rng.gen_range(0..3) {
        0 => DepthBranch::Uniform,
        1 => DepthBranch::Low,
        _ => DepthBranch::High,
    };
    let x = match branch {
        DepthBranch::Uniform => rng.gen_range(0.0..=max),
        DepthBranch::Low => Normal::new(0.0, law.sigma).expect("sigma validated").sample(rng),
        DepthBranch::High => Normal::new(max, law.sigma).expect("sigma validated").sample(rng),
    };
    (x.round().clamp(0.0, max) as u32, branch)
}

pub fn sample_depth<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    sample_depth_branch(rng, &DepthLaw::default()).0
}

/// Square binary canvas, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn empty(size: usize) -> Self {
        Self {
            size,
            bits: vec![false; size * size],
        }
    }

    pub fn from_fn(size: usize, inside: impl Fn(f64, f64) -> bool) -> Self {
        let bits = (0..size * size)
            .map(|i| inside((i % size) as f64 + 0.5, (i / size) as f64 + 0.5))
            .collect();
        Self { size, bits }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.size + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_full(&self) -> bool {
        self.bits.iter().all(|b| *b)
    }

    fn zip_with(&self, other: &Mask, op: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.size, other.size, "mask sizes differ");
        Mask {
            size: self.size,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| op(a, b)).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a || b)
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn xor(&self, other: &Mask) -> Mask {
        self.zip_with(other, |a, b| a != b)
    }

    pub fn not(&self) -> Mask {
        Mask {
            size: self.size,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsgOp {
    Or,
    And,
    Xor,
    Not,
}

/// One random filled primitive. Centers fall in the middle 80% of the canvas
/// and sizes in `[4%, 40%]` of its side.
pub fn random_primitive<R: Rng + ?Sized>(rng: &mut R, cfg: &ShapeGenConfig) -> Mask {
    let n = cfg.size as f64;
    let kind = cfg.primitives[rng.gen_range(0..cfg.primitives.len())];
    let cx = rng.gen_range(0.1 * n..0.9 * n);
    let cy = rng.gen_range(0.1 * n..0.9 * n);
    let (lo, hi) = (0.04 * n, 0.4 * n);
    match kind {
        PrimitiveKind::Ellipse => {
            let (rx, ry) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            let theta = rng.gen_range(0.0..PI);
            let (s, c) = theta.sin_cos();
            Mask::from_fn(cfg.size, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            })
        }
        PrimitiveKind::Rectangle => {
            let (w, h) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
            let theta = rng.gen_range(0.0..PI);
            let (s, c) = theta.sin_cos();
            Mask::from_fn(cfg.size, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= w / 2.0 && v.abs() <= h / 2.0
            })
        }
        PrimitiveKind::Triangle => {
            let pts: Vec<(f64, f64)> = (0..3)
                .map(|_| {
                    let r = rng.gen_range(lo..=hi);
                    let a = rng.gen_range(0.0..2.0 * PI);
                    (cx + r * a.cos(), cy + r * a.sin())
                })
                .collect();
            let cross = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            Mask::from_fn(cfg.size, |x, y| {
                let d = [
                    cross(pts[0], pts[1], (x, y)),
                    cross(pts[1], pts[2], (x, y)),
                    cross(pts[2], pts[0], (x, y)),
                ];
                d.iter().all(|v| *v >= 0.0) || d.iter().all(|v| *v <= 0.0)
            })
        }
        PrimitiveKind::Line => {
            let half = rng.gen_range(lo..=hi) / 2.0;
            let theta = rng.gen_range(0.0..PI);
            let (s, c) = theta.sin_cos();
            let (ax, ay, bx, by) = (cx - half * c, cy - half * s, cx + half * c, cy + half * s);
            let reach = cfg.line_thickness as f64 / 2.0 + 0.25;
            Mask::from_fn(cfg.size, |x, y| {
                let (vx, vy) = (bx - ax, by - ay);
                let t = (((x - ax) * vx + (y - ay) * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
                (x - ax - t * vx).hypot(y - ay - t * vy) <= reach
            })
        }
    }
}

fn random_op<R: Rng + ?Sized>(rng: &mut R) -> CsgOp {
    match rng.gen_range(0..4) {
        0 => CsgOp::Or,
        1 => CsgOp::And,
        2 => CsgOp::Xor,
        _ => CsgOp::Not,
    }
}

/// Applies `op` to the running mask and a new primitive. `Not` complements the
/// running mask and then ORs the primitive.
pub fn apply_op(acc: &Mask, op: CsgOp, prim: &Mask) -> Mask {
    match op {
        CsgOp::Or => acc.or(prim),
        CsgOp::And => acc.and(prim),
        CsgOp::Xor => acc.xor(prim),
        CsgOp::Not => acc.not().or(prim),
    }
}

/// A random composition of `1 + depth` primitives. Empty and full canvases
/// have no contour and are regenerated.
pub fn compose_csg<R: Rng + ?Sized>(rng: &mut R, depth: u32, cfg: &ShapeGenConfig) -> Result<Mask> {
    for _ in 0..=MAX_RETRIES {
        let mut acc = random_primitive(rng, cfg);
        for _ in 0..depth {
            let op = random_op(rng);
            let prim = random_primitive(rng, cfg);
            acc = apply_op(&acc, op, &prim);
        }
        if !acc.is_empty() && !acc.is_full() {
            return Ok(acc);
        }
    }
    Err(Error::DegenerateShape { retries: MAX_RETRIES })
}

/// Sobel gradient magnitude of the mask with replicated borders, as a measure.
pub fn sobel_contour(mask: &Mask) -> Result<GridMeasure> {
    let n = mask.size();
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, n as isize - 1) as usize;
        let c = c.clamp(0, n as isize - 1) as usize;
        if mask.get(r, c) {
            1.0
        } else {
            0.0
        }
    };
    let mut out = vec![0.0; n * n];
    for r in 0..n as isize {
        for c in 0..n as isize {
            let gx = at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r, c - 1)
                - at(r + 1, c - 1);
            let gy = at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)
                - at(r - 1, c - 1)
                - 2.0 * at(r - 1, c)
                - at(r - 1, c + 1);
            out[r as usize * n + c as usize] = gx.hypot(gy);
        }
    }
    crate::measure::normalize(n, n, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    fn cfg() -> ShapeGenConfig {
        ShapeGenConfig::new(32, 0).unwrap()
    }

    #[test]
    fn depth_stays_in_range() {
        let mut rng = stream(1, "depth", 0);
        for _ in 0..10_000 {
            assert!(sample_depth(&mut rng) <= 50);
        }
    }

    #[test]
    fn depth_zero_is_one_primitive() {
        let c = cfg();
        let mut a = stream(3, "shape", 0);
        let mut b = a.clone();
        assert_eq!(compose_csg(&mut a, 0, &c).unwrap(), random_primitive(&mut b, &c));
    }

    #[test]
    fn composition_is_deterministic() {
        let c = cfg();
        let one = compose_csg(&mut stream(9, "shape", 4), 5, &c).unwrap();
        let two = compose_csg(&mut stream(9, "shape", 4), 5, &c).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn not_complements_before_union() {
        let a = Mask::from_fn(32, |x, _| x < 10.0);
        let b = Mask::from_fn(32, |_, y| y < 5.0);
        let out = apply_op(&a, CsgOp::Not, &b);
        assert!(out.get(0, 0));
        assert!(!out.get(20, 3));
        assert!(out.get(20, 20));
    }

    #[test]
    fn small_canvas_rejected() {
        assert!(ShapeGenConfig::new(16, 0).is_err());
    }

    #[test]
    fn constant_mask_has_no_contour() {
        assert!(matches!(sobel_contour(&Mask::empty(32)), Err(Error::AllZero)));
        assert!(matches!(sobel_contour(&Mask::empty(32).not()), Err(Error::AllZero)));
    }

    #[test]
    fn half_plane_edge_straddles_two_columns() {
        let m = sobel_contour(&Mask::from_fn(32, |x, _| x < 16.0)).unwrap();
        for r in 0..32 {
            for c in 0..32 {
                let expected = if c == 15 || c == 16 { 1.0 / 64.0 } else { 0.0 };
                assert!((m.get(r, c) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn disk_contour_is_a_ring() {
        let m = sobel_contour(&Mask::from_fn(64, |x, y| (x - 32.0).hypot(y - 32.0) <= 15.0)).unwrap();
        assert!((m.total() - 1.0).abs() < 1e-12);
        assert_eq!(m.get(32, 32), 0.0);
        assert!(m.get(32, 17) > 0.0);
        for (i, &w) in m.mass().iter().enumerate() {
            if w > 0.0 {
                let d = ((i % 64) as f64 + 0.5 - 32.0).hypot((i / 64) as f64 + 0.5 - 32.0);
                assert!((d - 15.0).abs() < 2.5, "mass at radius {d}");
            }
        }
    }

    proptest! {
        #[test]
        fn boolean_identities(seed in any::<u64>()) {
            let a = random_primitive(&mut stream(seed, "prop", 0), &cfg());
            prop_assert_eq!(a.or(&a), a.clone());
            prop_assert_eq!(a.and(&a), a.clone());
            prop_assert!(a.xor(&a).is_empty());
        }

        #[test]
        fn compositions_are_valid(seed in any::<u64>(), depth in 0u32..=50) {
            let mask = compose_csg(&mut stream(seed, "prop", 1), depth, &cfg()).unwrap();
            prop_assert!(!mask.is_empty() && !mask.is_full());
            let m = sobel_contour(&mask).unwrap();
            prop_assert!((m.total() - 1.0).abs() < 1e-9);
        }
    }
}
