//! Random piecewise-monotone interval maps and their Perron–Frobenius
//! operators on BV.
//!
//! Functions are piecewise affine ([`BVFunction`]); for affine branches the
//! transfer operator maps this class to itself, so variation, integrals and
//! BV norms of images are computed exactly (up to rounding). Finite-rank
//! Ulam matrices bridge to the matrix cocycle machinery.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cocycle::{self, CocycleError, DrivingSystem, Generator, OmegaWindow, SpectrumReport, SplittingOptions};

/// Breakpoints closer than this are identified.
pub const SNAP: f64 = 1e-12;
/// Grid size used to locate the minimum of `|T'|` on smooth branches.
pub const DERIVATIVE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("branch {0} is not affine")]
    NonAffineBranch(usize),
    #[error("preimage solve failed on branch {branch} for level {level}")]
    QuadratureFailure { branch: usize, level: f64 },
    #[error("ess inf |T'| = {0} is not > 1")]
    ExpansionTooWeak(f64),
    #[error("a_n = {0} is not < 1")]
    PreconditionANotLessThan1(f64),
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid function: {0}")]
    InvalidFunction(String),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
}

impl IntervalError {
    pub fn name(&self) -> &'static str {
        match self {
            IntervalError::NonAffineBranch(_) => "NonAffineBranch",
            IntervalError::QuadratureFailure { .. } => "QuadratureFailure",
            IntervalError::ExpansionTooWeak(_) => "ExpansionTooWeak",
            IntervalError::PreconditionANotLessThan1(_) => "PreconditionANotLessThan1",
            IntervalError::InvalidMap(_) => "InvalidMap",
            IntervalError::InvalidFunction(_) => "InvalidFunction",
            IntervalError::Cocycle(e) => e.name(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IntervalError>;

// ---------------------------------------------------------------------------
// Piecewise-affine BV functions

/// Affine piece on `[start, end]` with one-sided limits `left`, `right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub left: f64,
    pub right: f64,
}

impl Piece {
    pub fn new(start: f64, end: f64, left: f64, right: f64) -> Self {
        Piece { start, end, left, right }
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Affine interpolation, clamped to the piece.
    pub fn at(&self, x: f64) -> f64 {
        let len = self.len();
        if len <= 0.0 {
            return self.left;
        }
        let t = ((x - self.start) / len).clamp(0.0, 1.0);
        self.left + (self.right - self.left) * t
    }

    fn integral(&self) -> f64 {
        0.5 * (self.left + self.right) * self.len()
    }

    fn abs_integral(&self) -> f64 {
        let (l, r) = (self.left, self.right);
        if l * r >= 0.0 {
            0.5 * (l.abs() + r.abs()) * self.len()
        } else {
            0.5 * (l * l + r * r) / (l.abs() + r.abs()) * self.len()
        }
    }
}

/// Piecewise-affine function on `[0, 1]`; pieces are contiguous and the
/// value at a breakpoint is taken in the minimal-variation version.
#[derive(Debug, Clone, PartialEq)]
pub struct BVFunction {
    pieces: Vec<Piece>,
}

impl BVFunction {
    /// Validates contiguity from 0 to 1; breakpoints within [`SNAP`] are joined.
    pub fn from_pieces(mut pieces: Vec<Piece>) -> Result<Self> {
        pieces.retain(|p| p.len() > 0.0);
        if pieces.is_empty() {
            return Err(IntervalError::InvalidFunction("no pieces".into()));
        }
        if pieces.iter().any(|p| !(p.left.is_finite() && p.right.is_finite())) {
            return Err(IntervalError::InvalidFunction("non-finite value".into()));
        }
        if pieces[0].start.abs() > SNAP || (pieces.last().unwrap().end - 1.0).abs() > SNAP {
            return Err(IntervalError::InvalidFunction("pieces must cover [0, 1]".into()));
        }
        pieces[0].start = 0.0;
        pieces.last_mut().unwrap().end = 1.0;
        for i in 1..pieces.len() {
            if (pieces[i].start - pieces[i - 1].end).abs() > SNAP {
                return Err(IntervalError::InvalidFunction(format!(
                    "gap or overlap at {}",
                    pieces[i - 1].end
                )));
            }
            pieces[i].start = pieces[i - 1].end;
        }
        Ok(BVFunction { pieces })
    }

    pub fn constant(c: f64) -> Self {
        BVFunction {
            pieces: vec![Piece::new(0.0, 1.0, c, c)],
        }
    }

    /// `x -> x`.
    pub fn identity() -> Self {
        BVFunction {
            pieces: vec![Piece::new(0.0, 1.0, 0.0, 1.0)],
        }
    }

    /// `height * 1_[a, b)`.
    pub fn indicator(a: f64, b: f64, height: f64) -> Self {
        Self::from_segments(&[Piece::new(a, b, height, height)])
    }

    /// Continuous interpolant of `(x_i, y_i)`; `xs` must run from 0 to 1.
    pub fn from_points(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(IntervalError::InvalidFunction("need matching point lists".into()));
        }
        let pieces = xs
            .windows(2)
            .zip(ys.windows(2))
            .map(|(x, y)| Piece::new(x[0], x[1], y[0], y[1]))
            .collect();
        Self::from_pieces(pieces)
    }

    /// Step function with `values[i]` on `[breaks[i], breaks[i+1])`.
    pub fn step(breaks: &[f64], values: &[f64]) -> Result<Self> {
        if breaks.len() != values.len() + 1 {
            return Err(IntervalError::InvalidFunction("breaks must outnumber values by one".into()));
        }
        let pieces = breaks
            .windows(2)
            .zip(values)
            .map(|(x, &v)| Piece::new(x[0], x[1], v, v))
            .collect();
        Self::from_pieces(pieces)
    }

    /// Sum of segments, each extended by zero outside its support.
    pub fn from_segments(segments: &[Piece]) -> Self {
        let mut points: Vec<f64> = vec![0.0, 1.0];
        for s in segments {
            points.push(s.start.clamp(0.0, 1.0));
            points.push(s.end.clamp(0.0, 1.0));
        }
        points.sort_by(f64::total_cmp);
        let mut grid: Vec<f64> = Vec::with_capacity(points.len());
        for p in points {
            match grid.last() {
                Some(&q) if p - q <= SNAP => {}
                _ => grid.push(p),
            }
        }
        if grid.len() < 2 {
            grid = vec![0.0, 1.0];
        }
        *grid.last_mut().unwrap() = 1.0;
        let cells = grid.len() - 1;
        let mut left = vec![0.0; cells];
        let mut right = vec![0.0; cells];
        let locate = |x: f64| -> usize {
            // Index of the grid point nearest to x.
            let i = grid.partition_point(|&g| g < x - SNAP);
            i.min(grid.len() - 1)
        };
        for s in segments {
            if s.end - s.start <= SNAP {
                continue;
            }
            let i0 = locate(s.start.clamp(0.0, 1.0));
            let i1 = locate(s.end.clamp(0.0, 1.0));
            for c in i0..i1 {
                left[c] += s.at(grid[c]);
                right[c] += s.at(grid[c + 1]);
            }
            if i1 > i0 {
                left[i0] += s.left - s.at(grid[i0]);
                right[i1 - 1] += s.right - s.at(grid[i1]);
            }
        }
        let pieces = (0..cells)
            .map(|c| Piece::new(grid[c], grid[c + 1], left[c], right[c]))
            .collect();
        let mut f = BVFunction { pieces };
        f.simplify();
        f
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    /// Breakpoints including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.pieces.iter().map(|p| p.start).collect();
        out.push(1.0);
        out
    }

    /// Right limit at `x` (left limit at 1).
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p.end <= x).min(self.pieces.len() - 1);
        self.pieces[i].at(x)
    }

    pub fn integral(&self) -> f64 {
        self.pieces.iter().map(Piece::integral).sum()
    }

    pub fn integral_over(&self, a: f64, b: f64) -> f64 {
        self.pieces
            .iter()
            .filter(|p| p.end > a && p.start < b)
            .map(|p| {
                let lo = p.start.max(a);
                let hi = p.end.min(b);
                0.5 * (p.at(lo) + p.at(hi)) * (hi - lo)
            })
            .sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.pieces.iter().map(Piece::abs_integral).sum()
    }

    pub fn sup_norm(&self) -> f64 {
        self.pieces.iter().map(|p| p.left.abs().max(p.right.abs())).fold(0.0, f64::max)
    }

    /// Total variation of the minimal-variation version.
    pub fn variation(&self) -> f64 {
        let inner: f64 = self.pieces.iter().map(|p| (p.right - p.left).abs()).sum();
        let jumps: f64 = self.pieces.windows(2).map(|w| (w[1].left - w[0].right).abs()).sum();
        inner + jumps
    }

    /// `max(||f||_1, var f)`.
    pub fn bv_norm(&self) -> f64 {
        self.l1_norm().max(self.variation())
    }

    pub fn scale(&self, c: f64) -> BVFunction {
        BVFunction {
            pieces: self
                .pieces
                .iter()
                .map(|p| Piece::new(p.start, p.end, c * p.left, c * p.right))
                .collect(),
        }
    }

    pub fn add(&self, other: &BVFunction) -> BVFunction {
        let segs: Vec<Piece> = self.pieces.iter().chain(&other.pieces).copied().collect();
        Self::from_segments(&segs)
    }

    pub fn sub(&self, other: &BVFunction) -> BVFunction {
        self.add(&other.scale(-1.0))
    }

    pub fn is_nonnegative(&self, tol: f64) -> bool {
        self.pieces.iter().all(|p| p.left >= -tol && p.right >= -tol)
    }

    /// Piecewise-constant average over the cells of `partition`
    /// (breakpoints including 0 and 1).
    pub fn conditional_expectation(&self, partition: &[f64]) -> BVFunction {
        let segs: Vec<Piece> = partition
            .windows(2)
            .filter(|w| w[1] > w[0])
            .map(|w| {
                let avg = self.integral_over(w[0], w[1]) / (w[1] - w[0]);
                Piece::new(w[0], w[1], avg, avg)
            })
            .collect();
        Self::from_segments(&segs)
    }

    /// Joins adjacent pieces that are continuous and collinear.
    fn simplify(&mut self) {
        let mut out: Vec<Piece> = Vec::with_capacity(self.pieces.len());
        for p in self.pieces.drain(..) {
            if let Some(last) = out.last_mut() {
                let scale = 1.0 + last.left.abs().max(last.right.abs()).max(p.right.abs());
                let continuous = (p.left - last.right).abs() <= 1e-14 * scale;
                let slope_a = (last.right - last.left) / last.len();
                let slope_b = (p.right - p.left) / p.len();
                let collinear = (slope_a - slope_b).abs() * (last.len() + p.len()) <= 1e-14 * scale;
                if continuous && collinear {
                    last.end = p.end;
                    last.right = p.right;
                    continue;
                }
            }
            out.push(p);
        }
        self.pieces = out;
    }
}

/// Random piecewise-affine function with up to `max_pieces` pieces, values
/// in `[-1, 1]` and random jumps.
pub fn random_bv<R: Rng + ?Sized>(rng: &mut R, max_pieces: usize) -> BVFunction {
    let n = rng.random_range(1..=max_pieces.max(1));
    let mut cuts: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut xs = vec![0.0];
    xs.extend(cuts);
    xs.push(1.0);
    let segs: Vec<Piece> = xs
        .windows(2)
        .map(|w| Piece::new(w[0], w[1], rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    BVFunction::from_segments(&segs)
}

// ---------------------------------------------------------------------------
// Piecewise monotone maps

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Monotone map of one branch domain into `[0, 1]`.
#[derive(Clone)]
pub enum BranchMap {
    Affine { slope: f64, intercept: f64 },
    Smooth { map: ScalarFn, derivative: ScalarFn },
}

impl fmt::Debug for BranchMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchMap::Affine { slope, intercept } => {
                write!(f, "Affine {{ slope: {slope}, intercept: {intercept} }}")
            }
            BranchMap::Smooth { .. } => write!(f, "Smooth"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub domain: (f64, f64),
    pub map: BranchMap,
}

impl Branch {
    pub fn affine(a: f64, b: f64, slope: f64, intercept: f64) -> Self {
        Branch {
            domain: (a, b),
            map: BranchMap::Affine { slope, intercept },
        }
    }

    pub fn smooth(a: f64, b: f64, map: ScalarFn, derivative: ScalarFn) -> Self {
        Branch {
            domain: (a, b),
            map: BranchMap::Smooth { map, derivative },
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, intercept } => slope * x + intercept,
            BranchMap::Smooth { map, .. } => map(x),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, .. } => *slope,
            BranchMap::Smooth { derivative, .. } => derivative(x),
        }
    }

    pub fn len(&self) -> f64 {
        self.domain.1 - self.domain.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0.0
    }

    /// Image of the closed domain, as an increasing pair.
    pub fn image(&self) -> (f64, f64) {
        let u = self.apply(self.domain.0);
        let v = self.apply(self.domain.1);
        if u <= v {
            (u, v)
        } else {
            (v, u)
        }
    }

    fn affine_parts(&self) -> Option<(f64, f64)> {
        match self.map {
            BranchMap::Affine { slope, intercept } => Some((slope, intercept)),
            BranchMap::Smooth { .. } => None,
        }
    }

    fn min_abs_derivative(&self) -> f64 {
        match &self.map {
            BranchMap::Affine { slope, .. } => slope.abs(),
            BranchMap::Smooth { derivative, .. } => {
                let (a, b) = self.domain;
                let h = (b - a) / DERIVATIVE_SAMPLES as f64;
                let mut best = (f64::INFINITY, a);
                for j in 0..=DERIVATIVE_SAMPLES {
                    let x = a + h * j as f64;
                    let d = derivative(x).abs();
                    if d < best.0 {
                        best = (d, x);
                    }
                }
                // Golden-section refinement on the neighbouring cells.
                let (mut lo, mut hi) = ((best.1 - h).max(a), (best.1 + h).min(b));
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..60 {
                    let x1 = hi - g * (hi - lo);
                    let x2 = lo + g * (hi - lo);
                    if derivative(x1).abs() < derivative(x2).abs() {
                        hi = x2;
                    } else {
                        lo = x1;
                    }
                }
                best.0.min(derivative(0.5 * (lo + hi)).abs())
            }
        }
    }

    /// Point of the domain mapped to `level` (clamped to the image).
    fn preimage(&self, level: f64, index: usize) -> Result<f64> {
        let (a, b) = self.domain;
        let (fa, fb) = (self.apply(a), self.apply(b));
        let increasing = fb >= fa;
        let (lo_v, hi_v) = if increasing { (fa, fb) } else { (fb, fa) };
        let y = level.clamp(lo_v, hi_v);
        if let Some((s, c)) = self.affine_parts() {
            return Ok(((y - c) / s).clamp(a, b));
        }
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = self.apply(mid);
            if !fm.is_finite() {
                return Err(IntervalError::QuadratureFailure { branch: index, level });
            }
            if (fm < y) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-16 {
                break;
            }
        }
        let x = 0.5 * (lo + hi);
        if (self.apply(x) - y).abs() > 1e-9 {
            return Err(IntervalError::QuadratureFailure { branch: index, level });
        }
        Ok(x)
    }
}

/// Piecewise monotone map of `[0, 1]`: branch domains tile the interval.
#[derive(Debug, Clone)]
pub struct PiecewiseMap {
    branches: Vec<Branch>,
}

impl PiecewiseMap {
    pub fn new(mut branches: Vec<Branch>) -> Result<Self> {
        branches.retain(|b| b.len() > SNAP);
        if branches.is_empty() {
            return Err(IntervalError::InvalidMap("no branches".into()));
        }
        branches.sort_by(|a, b| a.domain.0.total_cmp(&b.domain.0));
        if branches[0].domain.0.abs() > SNAP || (branches.last().unwrap().domain.1 - 1.0).abs() > SNAP {
            return Err(IntervalError::InvalidMap("branch domains must cover [0, 1]".into()));
        }
        branches[0].domain.0 = 0.0;
        branches.last_mut().unwrap().domain.1 = 1.0;
        for i in 1..branches.len() {
            if (branches[i].domain.0 - branches[i - 1].domain.1).abs() > SNAP {
                return Err(IntervalError::InvalidMap(format!(
                    "branch domains overlap or leave a gap at {}",
                    branches[i - 1].domain.1
                )));
            }
            branches[i].domain.0 = branches[i - 1].domain.1;
        }
        for (i, b) in branches.iter().enumerate() {
            let (lo, hi) = b.image();
            if !(lo >= -SNAP && hi <= 1.0 + SNAP) {
                return Err(IntervalError::InvalidMap(format!("branch {i} leaves [0, 1]")));
            }
            match &b.map {
                BranchMap::Affine { slope, .. } => {
                    if !(slope.abs() > 0.0) || !slope.is_finite() {
                        return Err(IntervalError::InvalidMap(format!("branch {i} has slope {slope}")));
                    }
                }
                BranchMap::Smooth { derivative, .. } => {
                    let (a, c) = b.domain;
                    let sign = derivative(0.5 * (a + c)).signum();
                    for j in 0..=64 {
                        let d = derivative(a + (c - a) * j as f64 / 64.0);
                        if !(d.abs() > 0.0) || d.signum() != sign {
                            return Err(IntervalError::InvalidMap(format!("branch {i} is not strictly monotone")));
                        }
                    }
                }
            }
        }
        Ok(PiecewiseMap { branches })
    }

    /// `x -> k x mod 1`.
    pub fn full_branch(k: usize) -> Self {
        let kf = k as f64;
        let branches = (0..k)
            .map(|j| Branch::affine(j as f64 / kf, (j + 1) as f64 / kf, kf, -(j as f64)))
            .collect();
        Self::new(branches).expect("full-branch map is valid")
    }

    pub fn doubling() -> Self {
        Self::full_branch(2)
    }

    pub fn tripling() -> Self {
        Self::full_branch(3)
    }

    pub fn tent() -> Self {
        Self::new(vec![Branch::affine(0.0, 0.5, 2.0, 0.0), Branch::affine(0.5, 1.0, -2.0, 2.0)])
            .expect("tent map is valid")
    }

    /// `x -> beta x mod 1` (`beta > 1`); the last branch may be partial.
    pub fn beta(beta: f64) -> Result<Self> {
        if !(beta > 1.0) {
            return Err(IntervalError::InvalidMap(format!("beta = {beta} must exceed 1")));
        }
        let mut branches = Vec::new();
        let mut j = 0.0;
        while j / beta < 1.0 - SNAP {
            branches.push(Branch::affine(j / beta, ((j + 1.0) / beta).min(1.0), beta, -j));
            j += 1.0;
        }
        Self::new(branches)
    }

    /// Single affine branch `x -> slope x + intercept`.
    pub fn linear(slope: f64, intercept: f64) -> Result<Self> {
        Self::new(vec![Branch::affine(0.0, 1.0, slope, intercept)])
    }

    pub fn identity() -> Self {
        Self::linear(1.0, 0.0).expect("identity is valid")
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn is_affine(&self) -> bool {
        self.branches.iter().all(|b| b.affine_parts().is_some())
    }

    fn require_affine(&self) -> Result<()> {
        match self.branches.iter().position(|b| b.affine_parts().is_none()) {
            Some(i) => Err(IntervalError::NonAffineBranch(i)),
            None => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        let i = self
            .branches
            .partition_point(|b| b.domain.1 <= x)
            .min(self.branches.len() - 1);
        self.branches[i].apply(x)
    }

    /// Branch domain endpoints including 0 and 1.
    pub fn partition(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.branches.iter().map(|b| b.domain.0).collect();
        out.push(1.0);
        out
    }

    /// `ess inf |T'|`: exact for affine branches, sampled and refined for
    /// smooth ones.
    pub fn min_abs_derivative(&self) -> f64 {
        self.branches.iter().map(Branch::min_abs_derivative).fold(f64::INFINITY, f64::min)
    }

    /// `next ∘ self` (apply `self` first). Affine branches only.
    pub fn then(&self, next: &PiecewiseMap) -> Result<PiecewiseMap> {
        self.require_affine()?;
        next.require_affine()?;
        let mut out = Vec::new();
        for b1 in &self.branches {
            let (s1, c1) = b1.affine_parts().unwrap();
            let (u, v) = b1.image();
            for b2 in &next.branches {
                let (s2, c2) = b2.affine_parts().unwrap();
                let lo = u.max(b2.domain.0);
                let hi = v.min(b2.domain.1);
                if hi - lo <= SNAP {
                    continue;
                }
                let (x0, x1) = {
                    let p = ((lo - c1) / s1).clamp(b1.domain.0, b1.domain.1);
                    let q = ((hi - c1) / s1).clamp(b1.domain.0, b1.domain.1);
                    if p <= q {
                        (p, q)
                    } else {
                        (q, p)
                    }
                };
                out.push(Branch::affine(x0, x1, s2 * s1, s2 * c1 + c2));
            }
        }
        PiecewiseMap::new(out)
    }

    /// `self` iterated `n` times (`n >= 1`).
    pub fn iterate(&self, n: usize) -> Result<PiecewiseMap> {
        let mut m = self.clone();
        for _ in 1..n {
            m = m.then(self)?;
        }
        Ok(m)
    }
}

/// Exact Perron–Frobenius image `L_T f` for affine branches.
pub fn transfer_apply(t: &PiecewiseMap, f: &BVFunction) -> Result<BVFunction> {
    t.require_affine()?;
    let mut segs = Vec::new();
    for b in &t.branches {
        let (s, c) = b.affine_parts().unwrap();
        let w = 1.0 / s.abs();
        for p in &f.pieces {
            let lo = p.start.max(b.domain.0);
            let hi = p.end.min(b.domain.1);
            if hi <= lo {
                continue;
            }
            let (vl, vh) = (p.at(lo) * w, p.at(hi) * w);
            let (u, v) = ((s * lo + c).clamp(0.0, 1.0), (s * hi + c).clamp(0.0, 1.0));
            if s > 0.0 {
                segs.push(Piece::new(u, v, vl, vh));
            } else {
                segs.push(Piece::new(v, u, vh, vl));
            }
        }
    }
    Ok(BVFunction::from_segments(&segs))
}

/// `k`-bin Ulam matrix: entry `(i, j) = m(B_i ∩ T^{-1} B_j) / m(B_i)`.
/// Exact interval arithmetic for affine branches; smooth branches invert by
/// bisection.
pub fn ulam_matrix(t: &PiecewiseMap, k: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(IntervalError::InvalidMap("need at least one bin".into()));
    }
    let kf = k as f64;
    let mut p = DMatrix::zeros(k, k);
    for (bi, b) in t.branches.iter().enumerate() {
        let i0 = (b.domain.0 * kf).floor() as usize;
        let i1 = ((b.domain.1 * kf).ceil() as usize).min(k);
        for i in i0..i1 {
            let lo = (i as f64 / kf).max(b.domain.0);
            let hi = ((i + 1) as f64 / kf).min(b.domain.1);
            if hi <= lo {
                continue;
            }
            let piece = Branch {
                domain: (lo, hi),
                map: b.map.clone(),
            };
            let (u, v) = piece.image();
            let j0 = ((u * kf).floor().max(0.0) as usize).min(k - 1);
            let j1 = ((v * kf).ceil().max(1.0) as usize).min(k);
            for j in j0..j1 {
                let c = (j as f64 / kf).max(u);
                let d = ((j + 1) as f64 / kf).min(v);
                if d <= c {
                    continue;
                }
                let measure = match b.affine_parts() {
                    Some((s, _)) => (d - c) / s.abs(),
                    None => (piece.preimage(d, bi)? - piece.preimage(c, bi)?).abs(),
                };
                p[(i, j)] += measure * kf;
            }
        }
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Random systems

/// Finite family of maps driven by a shift.
#[derive(Debug, Clone)]
pub struct RandomIntervalSystem {
    pub maps: Vec<PiecewiseMap>,
    pub driving: DrivingSystem,
}

impl RandomIntervalSystem {
    pub fn new(maps: Vec<PiecewiseMap>, driving: DrivingSystem) -> Result<Self> {
        if maps.len() != driving.alphabet_size() {
            return Err(IntervalError::InvalidMap(format!(
                "{} maps for an alphabet of {} symbols",
                maps.len(),
                driving.alphabet_size()
            )));
        }
        Ok(RandomIntervalSystem { maps, driving })
    }

    /// `T^(n)_w = T_{w_{n-1}} ∘ ... ∘ T_{w_0}`.
    pub fn word_map(&self, w: &OmegaWindow, n: usize) -> Result<PiecewiseMap> {
        if w.n_future() < n || n == 0 {
            return Err(CocycleError::WindowTooShort {
                needed_past: 0,
                needed_future: n.max(1),
                past: w.n_past(),
                future: w.n_future(),
            }
            .into());
        }
        let mut m = self.maps[w.future()[0]].clone();
        for &s in &w.future()[1..n] {
            m = m.then(&self.maps[s])?;
        }
        Ok(m)
    }

    /// Cocycle of transposed Ulam matrices (acting on bin densities).
    pub fn ulam_generator(&self, k: usize) -> Result<Generator> {
        let mats = self
            .maps
            .iter()
            .map(|m| ulam_matrix(m, k).map(|p| p.transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Generator::new(mats)?)
    }
}

/// Expansion index estimate.
#[derive(Debug, Clone)]
pub struct ChiEstimate {
    pub chi: f64,
    /// `ln chi`.
    pub kappa_star: f64,
    pub expanding_on_average: bool,
    /// `(1/n) ln a_n` per sampled word.
    pub per_sample: Vec<f64>,
    pub n: usize,
}

fn log_a1(sys: &RandomIntervalSystem) -> Vec<f64> {
    sys.maps.iter().map(|m| -m.min_abs_derivative().ln()).collect()
}

/// `chi = exp(mean over samples of (1/n) ln a_n(w))`, with `a_n` bounded by
/// the product of the one-step factors `1 / ess inf |T'_{w_k}|` (exact when
/// each map has constant `|T'|`). Sample `j` uses random stream `j`.
pub fn chi_estimate(sys: &RandomIntervalSystem, n: usize, samples: usize) -> ChiEstimate {
    let la = log_a1(sys);
    let per_sample: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|j| {
            let w = sys.driving.sample_window(0, n, j as u64);
            w.future().iter().map(|&s| la[s]).sum::<f64>() / n as f64
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / samples.max(1) as f64;
    ChiEstimate {
        chi: mean.exp(),
        kappa_star: mean,
        expanding_on_average: mean < 0.0,
        per_sample,
        n,
    }
}

/// Closed form `exp(sum_i p_i ln a_1(i))` under the stationary marginal.
pub fn chi_exact(sys: &RandomIntervalSystem) -> f64 {
    let la = log_a1(sys);
    sys.driving
        .marginal()
        .iter()
        .zip(&la)
        .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
        .sum::<f64>()
        .exp()
}

/// Outcome of the Lasota–Yorke check on a sample of functions.
#[derive(Debug, Clone)]
pub struct LyReport {
    /// `3 / ess inf |T'|`.
    pub a: f64,
    /// Partition breakpoints used for the integral terms.
    pub partition: Vec<f64>,
    /// Smallest `D` making the inequality hold on every sample.
    pub feasible_d: f64,
    /// Sufficient `D` for affine branches: `2 max_J 1 / (|T'| |J|)`.
    pub sufficient_d: f64,
    /// `D` used for the slacks (frozen value, else `feasible_d`).
    pub d_used: f64,
    /// `a var f + D sum_J |int_J f| - var L f` per sample.
    pub slacks: Vec<f64>,
    pub min_slack: f64,
}

/// Branch domains refined so that every cell has width at most `mesh`.
pub fn refined_partition(t: &PiecewiseMap, mesh: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    for b in t.branches() {
        let parts = ((b.len() / mesh).ceil() as usize).max(1);
        for j in 1..=parts {
            out.push(if j == parts {
                b.domain.1
            } else {
                b.domain.0 + b.len() * j as f64 / parts as f64
            });
        }
    }
    out
}

/// Checks `var L f <= a var f + D sum_J |int_J f|` with `a = 3 / ess inf |T'|`
/// on the given samples. Without `frozen_d` the feasible constant is used.
pub fn ly_inequality_check(
    t: &PiecewiseMap,
    samples: &[BVFunction],
    mesh: f64,
    frozen_d: Option<f64>,
) -> Result<LyReport> {
    t.require_affine()?;
    let inf = t.min_abs_derivative();
    if !(inf > 1.0) {
        return Err(IntervalError::ExpansionTooWeak(inf));
    }
    let a = 3.0 / inf;
    let partition = refined_partition(t, mesh);
    let mut sufficient_d: f64 = 0.0;
    for w in partition.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let slope = t.branches[t.branches.partition_point(|b| b.domain.1 <= mid).min(t.branches.len() - 1)]
            .derivative(mid)
            .abs();
        sufficient_d = sufficient_d.max(2.0 / (slope * (w[1] - w[0])));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for f in samples {
        let lhs = transfer_apply(t, f)?.variation();
        let ints: f64 = partition.windows(2).map(|w| f.integral_over(w[0], w[1]).abs()).sum();
        rows.push((lhs, a * f.variation(), ints));
    }
    let feasible_d = rows
        .iter()
        .map(|&(lhs, av, ints)| {
            let need = lhs - av;
            if need <= 0.0 {
                0.0
            } else if ints > 0.0 {
                need / ints
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let d_used = frozen_d.unwrap_or(feasible_d);
    let slacks: Vec<f64> = rows.iter().map(|&(lhs, av, ints)| av + d_used * ints - lhs).collect();
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LyReport {
        a,
        partition,
        feasible_d,
        sufficient_d,
        d_used,
        slacks,
        min_slack,
    })
}

/// Both sides of the index-of-compactness sandwich for `L^(n)_w`.
#[derive(Debug, Clone)]
pub struct EssradReport {
    /// `1 / ess inf |T^(n)'|`.
    pub a_n: f64,
    /// Half the smallest pairwise distance in the separated family.
    pub ic_lower: f64,
    /// `3 a_n`.
    pub fr_upper: f64,
    /// Smallest pairwise BV distance between images of the family.
    pub family_min_distance: f64,
    pub family_size: usize,
    /// Largest `||L^(n) (1 - E_P) f|| / ||f||` over the sampled `f`.
    pub sampled_ratio: f64,
    pub upper_verified: bool,
}

/// Number of half-indicators in the separated family.
pub const SEPARATED_FAMILY_SIZE: usize = 6;

/// Builds the separated family of half-indicators on the branch of `T^(n)_w`
/// with the smallest expansion and measures the pairwise BV distances of
/// their images; verifies `||L^(n) (1 - E_P)|| <= 3 a_n` on `samples`
/// random functions, with `P` the branch partition of `T^(n)_w`.
pub fn essrad_sandwich_check(
    sys: &RandomIntervalSystem,
    w: &OmegaWindow,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<EssradReport> {
    let tn = sys.word_map(w, n)?;
    tn.require_affine()?;
    let a_n = 1.0 / tn.min_abs_derivative();
    if !(a_n < 1.0) {
        return Err(IntervalError::PreconditionANotLessThan1(a_n));
    }
    let weakest = tn
        .branches()
        .iter()
        .min_by(|x, y| x.derivative(0.0).abs().total_cmp(&y.derivative(0.0).abs()).then(y.len().total_cmp(&x.len())))
        .expect("non-empty map");
    let (lo, hi) = weakest.domain;
    let m = SEPARATED_FAMILY_SIZE;
    let h = (hi - lo) / (2 * m + 1) as f64;
    let images: Vec<BVFunction> = (0..m)
        .map(|j| {
            let a = lo + h * (2 * j + 1) as f64;
            transfer_apply(&tn, &BVFunction::indicator(a, a + h, 0.5))
        })
        .collect::<Result<_>>()?;
    let mut family_min_distance = f64::INFINITY;
    for i in 0..m {
        for j in i + 1..m {
            family_min_distance = family_min_distance.min(images[i].sub(&images[j]).bv_norm());
        }
    }

    let partition = tn.partition();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled_ratio: f64 = 0.0;
    for _ in 0..samples {
        let f = random_bv(&mut rng, 8);
        let norm = f.bv_norm();
        if norm == 0.0 {
            continue;
        }
        let g = f.sub(&f.conditional_expectation(&partition));
        let img = transfer_apply(&tn, &g)?;
        sampled_ratio = sampled_ratio.max(img.bv_norm() / norm);
    }
    let fr_upper = 3.0 * a_n;
    Ok(EssradReport {
        a_n,
        ic_lower: family_min_distance / 2.0,
        fr_upper,
        family_min_distance,
        family_size: m,
        sampled_ratio,
        upper_verified: sampled_ratio <= fr_upper * (1.0 + 1e-12),
    })
}

/// Random absolutely continuous invariant measures from the Ulam cocycle.
#[derive(Debug, Clone)]
pub struct AcimReport {
    pub report: SpectrumReport,
    /// Frame of `E_1` as bin densities; a one-dimensional `E_1` is
    /// normalised to integral 1.
    pub densities: Vec<DVector<f64>>,
    pub d1: usize,
    pub lambda1: f64,
    /// `kappa` estimate passed to the splitting (`ln chi`).
    pub kappa: f64,
    /// L1 distance between the normalised densities at `k` and `k/2` bins
    /// (one-dimensional `E_1` and even `k` only).
    pub refinement_gap: Option<f64>,
}

fn acim_densities(report: &SpectrumReport, k: usize) -> Vec<DVector<f64>> {
    let frame = report.splitting[0].frame();
    let mut cols: Vec<DVector<f64>> = frame.column_iter().map(|c| c.into_owned()).collect();
    if cols.len() == 1 {
        let integral = cols[0].sum() / k as f64;
        if integral.abs() > 1e-300 {
            cols[0] /= integral;
        }
    }
    cols
}

/// `E_1` of the `k`-bin Ulam cocycle at `w`: sample densities of the random
/// ACIM. The window needs `n_past` past and `n_future + 1` future symbols.
pub fn random_acim(
    sys: &RandomIntervalSystem,
    w: &OmegaWindow,
    k: usize,
    n_past: usize,
    n_future: usize,
    opts: &SplittingOptions,
) -> Result<AcimReport> {
    let kappa = chi_exact(sys).ln();
    let mut o = opts.clone();
    o.kappa = Some(kappa);
    let gen = sys.ulam_generator(k)?;
    let report = cocycle::oseledets_splitting(&gen, w, n_past, n_future, &o)?;
    let densities = acim_densities(&report, k);
    let d1 = report.multiplicities[0];
    let refinement_gap = if d1 == 1 && k.is_multiple_of(2) && k >= 2 {
        let coarse_gen = sys.ulam_generator(k / 2)?;
        match cocycle::oseledets_splitting(&coarse_gen, w, n_past, n_future, &o) {
            Ok(coarse) if coarse.multiplicities[0] == 1 => {
                let c = &acim_densities(&coarse, k / 2)[0];
                let f = &densities[0];
                let gap: f64 = (0..k).map(|i| (f[i] - c[i / 2]).abs()).sum::<f64>() / k as f64;
                Some(gap)
            }
            _ => None,
        }
    } else {
        None
    };
    Ok(AcimReport {
        lambda1: report.exponents[0],
        report,
        densities,
        d1,
        kappa,
        refinement_gap,
    })
}
