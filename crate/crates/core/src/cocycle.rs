//! Matrix cocycles over a two-sided shift.
//!
//! The base is the shift on finite-alphabet sequences with an i.i.d. or
//! Markov law; a sample point is carried as a finite [`OmegaWindow`]. The
//! generator assigns a matrix to each symbol and
//! `L^(n)_w = L_{s^{n-1} w} ... L_w`.
//!
//! Long products are never formed explicitly. Two re-orthonormalised passes
//! do the work:
//!
//! * an adjoint pass (transposes applied backwards in time) that converges to
//!   the top right-singular directions of the forward product, giving the
//!   slow spaces of the Lyapunov filtration as orthogonal complements;
//! * a forward pass (QR push-forward) from the far past that converges to
//!   the fast spaces `E_1 + ... + E_i`.
//!
//! The Oseledets spaces are the intersections of the two. Both passes are
//! equivariant by construction, and the uniqueness diagnostic gives an
//! independent check of the result.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::grassmann::{self, GrassmannError, Subspace};

pub const DEFAULT_GAP_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Restricted maps with a larger condition number are reported singular.
pub const RESTRICTED_CONDITION_LIMIT: f64 = 1e12;
/// `ln(f64::EPSILON)`: exponents below this contract faster than one
/// rounding error per step and are treated as `-inf`.
pub const UNRESOLVABLE_EXPONENT: f64 = -36.04365338911715;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CocycleError {
    #[error("window too short: need {needed_past} past / {needed_future} future symbols, have {past} / {future}")]
    WindowTooShort {
        needed_past: usize,
        needed_future: usize,
        past: usize,
        future: usize,
    },
    #[error("exponent blocks {block} and {next} separated by {separation:e}, below the gap tolerance")]
    BlockDegeneracy { block: usize, next: usize, separation: f64 },
    #[error("block {block} did not converge: gap {gap:e} between past horizons")]
    NonConvergence { block: usize, gap: f64 },
    #[error("restricted map singular at step {step} (condition number {condition:e})")]
    RestrictedSingular { step: usize, condition: f64 },
    #[error("candidate is not complementary (margin {0:e})")]
    NotComplementary(f64),
    #[error("top exponents separated by {0:e}, below the gap tolerance")]
    EqualExponents(f64),
    #[error("no resolvable exponent blocks")]
    NoResolvableBlocks,
    #[error("block index {block} out of range (report has {blocks} blocks)")]
    BlockOutOfRange { block: usize, blocks: usize },
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error(transparent)]
    Grassmann(#[from] GrassmannError),
}

impl CocycleError {
    pub fn name(&self) -> &'static str {
        match self {
            CocycleError::WindowTooShort { .. } => "WindowTooShort",
            CocycleError::BlockDegeneracy { .. } => "BlockDegeneracy",
            CocycleError::NonConvergence { .. } => "NonConvergence",
            CocycleError::RestrictedSingular { .. } => "RestrictedSingular",
            CocycleError::NotComplementary(_) => "NotComplementary",
            CocycleError::EqualExponents(_) => "EqualExponents",
            CocycleError::NoResolvableBlocks => "NoResolvableBlocks",
            CocycleError::BlockOutOfRange { .. } => "BlockOutOfRange",
            CocycleError::InvalidLaw(_) => "InvalidLaw",
            CocycleError::InvalidGenerator(_) => "InvalidGenerator",
            CocycleError::Grassmann(e) => e.name(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CocycleError>;

// ---------------------------------------------------------------------------
// Driving system

/// Law of the symbol process.
#[derive(Debug, Clone, PartialEq)]
pub enum Law {
    /// i.i.d. symbols.
    Bernoulli(Vec<f64>),
    /// Stationary Markov chain; `stationary` is a fixed left eigenvector of
    /// the row-stochastic `transition` matrix.
    Markov {
        transition: DMatrix<f64>,
        stationary: Vec<f64>,
    },
}

/// Invertible, measure-preserving two-sided shift with a seeded sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingSystem {
    law: Law,
    seed: u64,
}

fn check_probability_vector(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(CocycleError::InvalidLaw("empty alphabet".into()));
    }
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(CocycleError::InvalidLaw("negative or non-finite probability".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(CocycleError::InvalidLaw(format!("probabilities sum to {total}")));
    }
    Ok(())
}

impl DrivingSystem {
    pub fn bernoulli(probabilities: Vec<f64>, seed: u64) -> Result<Self> {
        check_probability_vector(&probabilities)?;
        Ok(DrivingSystem {
            law: Law::Bernoulli(probabilities),
            seed,
        })
    }

    /// Fair i.i.d. law on `k` symbols.
    pub fn uniform(k: usize, seed: u64) -> Self {
        DrivingSystem {
            law: Law::Bernoulli(vec![1.0 / k as f64; k]),
            seed,
        }
    }

    /// Stationary Markov law; the stationary vector is solved for.
    pub fn markov(transition: DMatrix<f64>, seed: u64) -> Result<Self> {
        let k = transition.nrows();
        if k == 0 || transition.ncols() != k {
            return Err(CocycleError::InvalidLaw("transition matrix must be square".into()));
        }
        for i in 0..k {
            let row: Vec<f64> = transition.row(i).iter().copied().collect();
            check_probability_vector(&row)?;
        }
        // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1.
        let mut sys = transition.transpose() - DMatrix::identity(k, k);
        for j in 0..k {
            sys[(k - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(k);
        rhs[k - 1] = 1.0;
        let pi = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| CocycleError::InvalidLaw("transition matrix is not irreducible".into()))?;
        let stationary: Vec<f64> = pi.iter().map(|&x| if x.abs() < 1e-15 { 0.0 } else { x }).collect();
        if stationary.iter().any(|&x| x < 0.0) {
            return Err(CocycleError::InvalidLaw("no non-negative stationary vector".into()));
        }
        let fixed = DVector::from_vec(stationary.clone()).transpose() * &transition;
        let defect = fixed
            .iter()
            .zip(&stationary)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if defect > 1e-10 {
            return Err(CocycleError::InvalidLaw(format!("stationary defect {defect:e}")));
        }
        Ok(DrivingSystem {
            law: Law::Markov {
                transition,
                stationary,
            },
            seed,
        })
    }

    pub fn law(&self) -> &Law {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DrivingSystem {
            law: self.law.clone(),
            seed,
        }
    }

    pub fn alphabet_size(&self) -> usize {
        match &self.law {
            Law::Bernoulli(p) => p.len(),
            Law::Markov { stationary, .. } => stationary.len(),
        }
    }

    /// One-point marginal of the law.
    pub fn marginal(&self) -> &[f64] {
        match &self.law {
            Law::Bernoulli(p) => p,
            Law::Markov { stationary, .. } => stationary,
        }
    }

    /// Independent random stream `stream` derived from the seed.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    /// Samples `w_t` for `-n_past <= t < n_future`.
    pub fn sample_window(&self, n_past: usize, n_future: usize, stream: u64) -> OmegaWindow {
        let mut rng = self.rng(stream);
        let total = n_past + n_future;
        let mut symbols = Vec::with_capacity(total);
        match &self.law {
            Law::Bernoulli(p) => {
                for _ in 0..total {
                    symbols.push(draw(p, &mut rng));
                }
            }
            Law::Markov {
                transition,
                stationary,
            } => {
                if total > 0 {
                    let mut s = draw(stationary, &mut rng);
                    symbols.push(s);
                    let rows: Vec<Vec<f64>> = (0..transition.nrows())
                        .map(|i| transition.row(i).iter().copied().collect())
                        .collect();
                    for _ in 1..total {
                        s = draw(&rows[s], &mut rng);
                        symbols.push(s);
                    }
                }
            }
        }
        OmegaWindow {
            symbols,
            origin: n_past,
        }
    }

    /// Keeps the future of `window` and draws a fresh past of length
    /// `n_past` from the conditional law given the future.
    pub fn resample_past(&self, window: &OmegaWindow, n_past: usize, stream: u64) -> OmegaWindow {
        let mut rng = self.rng(stream);
        let future = window.future().to_vec();
        let mut past_rev = Vec::with_capacity(n_past);
        match &self.law {
            Law::Bernoulli(p) => {
                for _ in 0..n_past {
                    past_rev.push(draw(p, &mut rng));
                }
            }
            Law::Markov {
                transition,
                stationary,
            } => {
                // Time reversal: Q(i, j) = pi_j P(j, i) / pi_i.
                let k = stationary.len();
                let mut next = future.first().copied();
                for _ in 0..n_past {
                    let s = match next {
                        None => draw(stationary, &mut rng),
                        Some(i) => {
                            let q: Vec<f64> = (0..k)
                                .map(|j| stationary[j] * transition[(j, i)] / stationary[i])
                                .collect();
                            draw(&q, &mut rng)
                        }
                    };
                    past_rev.push(s);
                    next = Some(s);
                }
            }
        }
        past_rev.reverse();
        past_rev.extend(future);
        OmegaWindow {
            symbols: past_rev,
            origin: n_past,
        }
    }
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver above the cumulative sum: last positive symbol.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Finite window `w_{-n_past} ... w_{n_future - 1}` of a two-sided sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OmegaWindow {
    symbols: Vec<usize>,
    origin: usize,
}

impl OmegaWindow {
    /// `past` is chronological (`past[0] = w_{-n_past}`); `future[0] = w_0`.
    pub fn new(past: Vec<usize>, future: Vec<usize>) -> Self {
        let origin = past.len();
        let mut symbols = past;
        symbols.extend(future);
        OmegaWindow { symbols, origin }
    }

    /// Constant sequence.
    pub fn constant(symbol: usize, n_past: usize, n_future: usize) -> Self {
        OmegaWindow {
            symbols: vec![symbol; n_past + n_future],
            origin: n_past,
        }
    }

    pub fn past(&self) -> &[usize] {
        &self.symbols[..self.origin]
    }

    pub fn future(&self) -> &[usize] {
        &self.symbols[self.origin..]
    }

    pub fn n_past(&self) -> usize {
        self.origin
    }

    pub fn n_future(&self) -> usize {
        self.symbols.len() - self.origin
    }

    pub fn symbol(&self, t: isize) -> Option<usize> {
        let idx = self.origin as isize + t;
        if idx < 0 {
            return None;
        }
        self.symbols.get(idx as usize).copied()
    }

    /// The window of `s^k w`; `None` if the shift leaves the window.
    pub fn shifted(&self, k: isize) -> Option<OmegaWindow> {
        let origin = self.origin as isize + k;
        if origin < 0 || origin as usize > self.symbols.len() {
            return None;
        }
        Some(OmegaWindow {
            symbols: self.symbols.clone(),
            origin: origin as usize,
        })
    }

    pub fn max_symbol(&self) -> Option<usize> {
        self.symbols.iter().copied().max()
    }

    fn require(&self, past: usize, future: usize) -> Result<()> {
        if self.n_past() < past || self.n_future() < future {
            return Err(CocycleError::WindowTooShort {
                needed_past: past,
                needed_future: future,
                past: self.n_past(),
                future: self.n_future(),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generator and composition

/// One square matrix per symbol; invertibility is not required.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    matrices: Vec<DMatrix<f64>>,
    transposes: Vec<DMatrix<f64>>,
}

impl Generator {
    pub fn new(matrices: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = matrices
            .first()
            .ok_or_else(|| CocycleError::InvalidGenerator("no matrices".into()))?;
        let m = first.nrows();
        if m == 0 {
            return Err(CocycleError::InvalidGenerator("empty matrix".into()));
        }
        for (i, a) in matrices.iter().enumerate() {
            if a.nrows() != m || a.ncols() != m {
                return Err(CocycleError::InvalidGenerator(format!(
                    "matrix {i} is {}x{}, expected {m}x{m}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(CocycleError::InvalidGenerator(format!("matrix {i} has non-finite entries")));
            }
        }
        let transposes = matrices.iter().map(|a| a.transpose()).collect();
        Ok(Generator { matrices, transposes })
    }

    pub fn constant(a: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![a])
    }

    pub fn dim(&self) -> usize {
        self.matrices[0].nrows()
    }

    pub fn alphabet_size(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, symbol: usize) -> &DMatrix<f64> {
        &self.matrices[symbol]
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    fn at(&self, w: &OmegaWindow, t: isize) -> &DMatrix<f64> {
        &self.matrices[w.symbol(t).expect("window range checked by caller")]
    }

    fn transpose_at(&self, w: &OmegaWindow, t: isize) -> &DMatrix<f64> {
        &self.transposes[w.symbol(t).expect("window range checked by caller")]
    }

    fn check_window(&self, w: &OmegaWindow) -> Result<()> {
        if let Some(s) = w.max_symbol() {
            if s >= self.alphabet_size() {
                return Err(CocycleError::InvalidGenerator(format!(
                    "symbol {s} has no matrix (alphabet size {})",
                    self.alphabet_size()
                )));
            }
        }
        Ok(())
    }
}

/// `L^(n)_w = L_{s^{n-1} w} ... L_w`; `n = 0` gives the identity.
pub fn compose(gen: &Generator, w: &OmegaWindow, n: usize) -> Result<DMatrix<f64>> {
    w.require(0, n)?;
    gen.check_window(w)?;
    let m = gen.dim();
    let mut out = DMatrix::identity(m, m);
    for t in 0..n as isize {
        out = gen.at(w, t) * out;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Re-orthonormalised passes

/// QR of `a q` with non-negative diagonal. Returns the new frame and
/// `ln |r_jj|` (floored at the smallest positive normal).
fn qr_step(a: &DMatrix<f64>, q: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let z = a * q;
    let qr = z.qr();
    let mut qm = qr.q();
    let r = qr.r();
    let mut logs = Vec::with_capacity(r.ncols());
    for j in 0..r.ncols() {
        let d = r[(j, j)];
        if d < 0.0 {
            qm.column_mut(j).neg_mut();
        }
        logs.push(d.abs().max(f64::MIN_POSITIVE).ln());
    }
    (qm, logs)
}

fn seeded_frame(m: usize, width: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, width, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// Top-`width` right singular frame of `L^(len)` at time `t0`, computed by
/// applying transposes from `t0 + len - 1` down to `t0`.
fn adjoint_frame(gen: &Generator, w: &OmegaWindow, t0: isize, len: usize, width: usize, seed: u64) -> DMatrix<f64> {
    let mut q = seeded_frame(gen.dim(), width, seed);
    for t in (t0..t0 + len as isize).rev() {
        q = qr_step(gen.transpose_at(w, t), &q).0;
    }
    q
}

/// Pushes `frame` forward from `t0` for `len` steps; returns the final frame
/// and the accumulated `ln |r_jj|`.
fn forward_push(gen: &Generator, w: &OmegaWindow, t0: isize, len: usize, frame: DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let mut q = frame;
    let mut sums = vec![0.0; q.ncols()];
    for t in t0..t0 + len as isize {
        let (next, logs) = qr_step(gen.at(w, t), &q);
        for (s, l) in sums.iter_mut().zip(logs) {
            *s += l;
        }
        q = next;
    }
    (q, sums)
}

// ---------------------------------------------------------------------------
// Lyapunov spectrum

/// Exponent block: a common exponent and its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Block {
    pub exponent: f64,
    pub multiplicity: usize,
}

/// Finite-`n` estimate of the Lyapunov spectrum at one sample point.
#[derive(Debug, Clone)]
pub struct LyapunovEstimate {
    /// `(1/n) ln` of the singular values, decreasing.
    pub raw: Vec<f64>,
    /// Raw values grouped into blocks separated by more than the gap tolerance.
    pub blocks: Vec<Block>,
    pub n: usize,
    /// Top right-singular frame of `L^(n)`.
    pub right_frame: DMatrix<f64>,
}

impl LyapunovEstimate {
    /// Estimate of `lambda(w)`.
    pub fn top(&self) -> f64 {
        self.raw[0]
    }

    /// `(exponent, multiplicity)` pairs.
    pub fn pairs(&self) -> Vec<(f64, usize)> {
        self.blocks.iter().map(|b| (b.exponent, b.multiplicity)).collect()
    }
}

/// Groups a decreasing list into blocks whose consecutive members differ by
/// at most `gap_tolerance`. The block exponent is the member mean.
pub fn group_blocks(raw: &[f64], gap_tolerance: f64) -> Vec<Block> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for &x in raw {
        match (prev, blocks.last_mut()) {
            (Some(p), Some(last)) if p - x <= gap_tolerance => {
                last.0 += x;
                last.1 += 1;
            }
            _ => blocks.push((x, 1)),
        }
        prev = Some(x);
    }
    blocks
        .into_iter()
        .map(|(s, k)| Block {
            exponent: s / k as f64,
            multiplicity: k,
        })
        .collect()
}

/// Numerical knobs shared by the spectrum and splitting computations.
#[derive(Debug, Clone)]
pub struct SplittingOptions {
    pub gap_tolerance: f64,
    pub convergence_tolerance: f64,
    /// Index-of-compactness estimate; only blocks above `kappa + gap_tolerance`
    /// are treated as exceptional.
    pub kappa: Option<f64>,
    /// Seed for the starting frames of the adjoint pass.
    pub frame_seed: u64,
}

impl Default for SplittingOptions {
    fn default() -> Self {
        SplittingOptions {
            gap_tolerance: DEFAULT_GAP_TOLERANCE,
            convergence_tolerance: DEFAULT_CONVERGENCE_TOLERANCE,
            kappa: None,
            frame_seed: 0x243f_6a88_85a3_08d3,
        }
    }
}

/// `(1/n) ln` singular values of `L^(n)_w` (top `m_trunc` of them).
///
/// The adjoint pass supplies the right singular frame; pushing that frame
/// forward with QR makes the accumulated log-diagonals equal to the log
/// singular values without ever forming the product.
pub fn lyapunov_exponents(
    gen: &Generator,
    w: &OmegaWindow,
    n: usize,
    m_trunc: usize,
    opts: &SplittingOptions,
) -> Result<LyapunovEstimate> {
    if n == 0 {
        return Err(CocycleError::WindowTooShort {
            needed_past: 0,
            needed_future: 1,
            past: w.n_past(),
            future: w.n_future(),
        });
    }
    w.require(0, n)?;
    gen.check_window(w)?;
    let width = m_trunc.clamp(1, gen.dim());
    let right = adjoint_frame(gen, w, 0, n, width, opts.frame_seed);
    let (_, sums) = forward_push(gen, w, 0, n, right.clone());
    let mut raw: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    raw.sort_by(|a, b| b.total_cmp(a));
    let blocks = group_blocks(&raw, opts.gap_tolerance);
    Ok(LyapunovEstimate {
        raw,
        blocks,
        n,
        right_frame: right,
    })
}

/// `(1/n) ln (||L^(n)_w v|| / ||v||)`.
pub fn directional_exponent(gen: &Generator, w: &OmegaWindow, v: &DVector<f64>, n: usize) -> Result<f64> {
    w.require(0, n)?;
    gen.check_window(w)?;
    let mut x = v.normalize();
    let mut log = 0.0;
    for t in 0..n as isize {
        x = gen.at(w, t) * x;
        let norm = x.norm();
        if norm == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        log += norm.ln();
        x /= norm;
    }
    Ok(log / n as f64)
}

/// `(1/n) ln ||L^(n)_w||` together with the top right singular vector,
/// from a scalar-normalised product (fine whenever the condition number of
/// the product stays representable).
pub fn norm_growth(gen: &Generator, w: &OmegaWindow, n: usize) -> Result<(f64, DVector<f64>)> {
    w.require(0, n)?;
    gen.check_window(w)?;
    let m = gen.dim();
    let mut p = DMatrix::identity(m, m);
    let mut log_scale = 0.0;
    for t in 0..n as isize {
        p = gen.at(w, t) * p;
        let s = p.amax();
        if s == 0.0 {
            return Ok((f64::NEG_INFINITY, DVector::from_element(m, 0.0)));
        }
        log_scale += s.ln();
        p /= s;
    }
    let svd = p.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let (idx, top) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, s)| (i, *s))
        .expect("non-empty spectrum");
    let v = vt.row(idx).transpose().into_owned();
    Ok(((log_scale + top.ln()) / n as f64, v))
}

/// The Lyapunov filtration `V_2 ⊃ V_3 ⊃ ...` at `w` from the horizon-`n`
/// product, for the given blocks. `V_{i+1}` is the orthogonal complement of
/// the top `d_1 + ... + d_i` right singular directions. The last space is
/// omitted when it is trivial.
pub fn forward_filtration(
    gen: &Generator,
    w: &OmegaWindow,
    n: usize,
    blocks: &[Block],
    opts: &SplittingOptions,
) -> Result<Vec<Subspace>> {
    w.require(0, n)?;
    gen.check_window(w)?;
    let m = gen.dim();
    let covered: usize = blocks.iter().map(|b| b.multiplicity).sum::<usize>().min(m);
    let width = (covered + 1).min(m);
    let right = adjoint_frame(gen, w, 0, n, width, opts.frame_seed);
    let (_, sums) = forward_push(gen, w, 0, n, right.clone());
    let rates: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();

    let mut out = Vec::new();
    let mut dim = 0;
    for (i, b) in blocks.iter().enumerate() {
        dim += b.multiplicity;
        if dim >= m {
            break;
        }
        let separation = rates[dim - 1] - rates[dim];
        if separation <= opts.gap_tolerance {
            return Err(CocycleError::BlockDegeneracy {
                block: i + 1,
                next: i + 2,
                separation,
            });
        }
        let fast = Subspace::from_frame(right.columns(0, dim).into_owned())?;
        out.push(fast.orthogonal_complement().expect("dim < m"));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Splitting along an orbit segment

/// Fast and slow frames along `t_start ..= t_end`, from which the Oseledets
/// spaces at every time in the segment are extracted.
struct Trajectory {
    t_start: isize,
    blocks: Vec<Block>,
    /// Forward push-forward frames (span `E_1 + ... + E_i` in their first
    /// `D_i` columns).
    fast: Vec<DMatrix<f64>>,
    /// Adjoint frames (top right singular directions of the forward product).
    slow: Vec<DMatrix<f64>>,
    ambient: usize,
}

impl Trajectory {
    fn build(
        gen: &Generator,
        w: &OmegaWindow,
        t_start: isize,
        t_end: isize,
        n_past: usize,
        n_future: usize,
        blocks: &[Block],
        opts: &SplittingOptions,
    ) -> Result<Self> {
        debug_assert!(t_end >= t_start);
        let m = gen.dim();
        let width: usize = blocks.iter().map(|b| b.multiplicity).sum::<usize>();
        if width == 0 || width > m {
            return Err(CocycleError::NoResolvableBlocks);
        }
        let first = t_start - n_past as isize;
        let last = t_end + n_future as isize; // exclusive
        let need_past = (-first).max(0) as usize;
        let need_future = last.max(0) as usize;
        w.require(need_past, need_future)?;
        gen.check_window(w)?;
        let count = (t_end - t_start + 1) as usize;

        // Start frame: top right singular directions at the far past.
        let start = adjoint_frame(gen, w, first, n_future.max(1), width, opts.frame_seed ^ 0x9e37_79b9);
        let (mut q, _) = forward_push(gen, w, first, n_past, start);
        let mut fast = Vec::with_capacity(count);
        fast.push(q.clone());
        for t in t_start..t_end {
            q = qr_step(gen.at(w, t), &q).0;
            fast.push(q.clone());
        }

        let mut p = seeded_frame(m, width, opts.frame_seed);
        for t in (t_end..last).rev() {
            p = qr_step(gen.transpose_at(w, t), &p).0;
        }
        let mut slow = vec![DMatrix::zeros(0, 0); count];
        slow[count - 1] = p.clone();
        for t in (t_start..t_end).rev() {
            p = qr_step(gen.transpose_at(w, t), &p).0;
            slow[(t - t_start) as usize] = p.clone();
        }
        Ok(Trajectory {
            t_start,
            blocks: blocks.to_vec(),
            fast,
            slow,
            ambient: m,
        })
    }

    fn index(&self, t: isize) -> usize {
        (t - self.t_start) as usize
    }

    /// `D_i = d_1 + ... + d_i`.
    fn cumulative(&self, i: usize) -> usize {
        self.blocks[..i].iter().map(|b| b.multiplicity).sum()
    }

    /// `E_1 + ... + E_i` at time `t`.
    fn fast_space(&self, t: isize, i: usize) -> Result<Subspace> {
        let frame = &self.fast[self.index(t)];
        Ok(Subspace::from_frame(frame.columns(0, self.cumulative(i)).into_owned())?)
    }

    /// `V_{i+1}` at time `t`; `None` when trivial.
    fn slow_space(&self, t: isize, i: usize) -> Result<Option<Subspace>> {
        let d = self.cumulative(i);
        if d == 0 {
            return Ok(Some(Subspace::full(self.ambient)));
        }
        if d >= self.ambient {
            return Ok(None);
        }
        let frame = &self.slow[self.index(t)];
        let top = Subspace::from_frame(frame.columns(0, d).into_owned())?;
        Ok(top.orthogonal_complement())
    }

    /// `E_i` at time `t` (blocks are 1-based).
    fn oseledets_space(&self, t: isize, i: usize) -> Result<Subspace> {
        let fast = self.fast_space(t, i)?;
        if i == 1 {
            return Ok(fast);
        }
        let d_prev = self.cumulative(i - 1);
        let top = self.slow[self.index(t)].columns(0, d_prev).into_owned();
        let (coords, _) = grassmann::null_space(
            &(top.transpose() * fast.frame()),
            Some(self.blocks[i - 1].multiplicity),
            grassmann::INTERSECTION_THRESHOLD,
        );
        Ok(Subspace::span(&(fast.frame() * coords))?)
    }

    fn splitting(&self, t: isize) -> Result<Vec<Subspace>> {
        (1..=self.blocks.len()).map(|i| self.oseledets_space(t, i)).collect()
    }
}

/// Lyapunov spectrum, filtration and Oseledets splitting at one sample point.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    /// Exceptional exponents `lambda_1 > ... > lambda_p`.
    pub exponents: Vec<f64>,
    pub multiplicities: Vec<usize>,
    /// All finite-horizon rates, decreasing.
    pub raw_exponents: Vec<f64>,
    /// `V_2, ..., V_{p+1}` (the last omitted when trivial).
    pub filtration: Vec<Subspace>,
    /// `E_1, ..., E_p`.
    pub splitting: Vec<Subspace>,
    /// `gap(L_w E_i(w), E_i(s w))` per block.
    pub equivariance_residuals: Vec<f64>,
    /// `gap` between `E_i` computed from the full and the half past horizon.
    pub convergence_gaps: Vec<f64>,
    /// Smallest singular value of the concatenated frames of
    /// `E_1, ..., E_p, V_{p+1}`.
    pub direct_sum_margin: f64,
    pub n_used: usize,
    pub n_past_used: usize,
    pub kappa: Option<f64>,
}

impl SpectrumReport {
    pub fn blocks(&self) -> Vec<Block> {
        self.exponents
            .iter()
            .zip(&self.multiplicities)
            .map(|(&exponent, &multiplicity)| Block { exponent, multiplicity })
            .collect()
    }

    pub fn lambda(&self) -> f64 {
        self.exponents[0]
    }

    /// `V_{i+1}` (1-based `i`); `None` when trivial or not stored.
    pub fn slow_space(&self, i: usize) -> Option<&Subspace> {
        if i == 0 {
            return None;
        }
        self.filtration.get(i - 1)
    }
}

/// Exceptional blocks: resolvable and above `kappa + gap_tolerance`.
pub fn exceptional_blocks(blocks: &[Block], opts: &SplittingOptions) -> Vec<Block> {
    let floor = match opts.kappa {
        Some(k) => (k + opts.gap_tolerance).max(UNRESOLVABLE_EXPONENT),
        None => UNRESOLVABLE_EXPONENT,
    };
    blocks.iter().copied().filter(|b| b.exponent > floor).collect()
}

/// Semi-invertible Oseledets splitting at `w`.
///
/// The exponents come from the horizon-`n_future` product. `E_i(w)` is the
/// intersection of the push-forward, over `n_past` steps, of the top
/// `d_1 + ... + d_i` right singular directions at `s^{-n_past} w` with the
/// filtration space `V_i(w)`. The window must hold `n_past` past symbols and
/// `n_future + 1` future symbols (the extra one is used for the equivariance
/// residual at `s w`).
pub fn oseledets_splitting(
    gen: &Generator,
    w: &OmegaWindow,
    n_past: usize,
    n_future: usize,
    opts: &SplittingOptions,
) -> Result<SpectrumReport> {
    w.require(n_past, n_future + 1)?;
    let estimate = lyapunov_exponents(gen, w, n_future, gen.dim(), opts)?;
    let blocks = exceptional_blocks(&estimate.blocks, opts);
    splitting_for_blocks(gen, w, n_past, n_future, &blocks, estimate.raw, opts)
}

fn splitting_for_blocks(
    gen: &Generator,
    w: &OmegaWindow,
    n_past: usize,
    n_future: usize,
    blocks: &[Block],
    raw: Vec<f64>,
    opts: &SplittingOptions,
) -> Result<SpectrumReport> {
    if blocks.is_empty() {
        return Err(CocycleError::NoResolvableBlocks);
    }
    let m = gen.dim();
    let traj = Trajectory::build(gen, w, 0, 1, n_past, n_future, blocks, opts)?;
    let splitting = traj.splitting(0)?;
    let next = traj.splitting(1)?;
    let a0 = gen.at(w, 0);
    let mut equivariance_residuals = Vec::with_capacity(blocks.len());
    for (e, e_next) in splitting.iter().zip(&next) {
        let r = match e.push_forward(a0) {
            Ok(pushed) => grassmann::gap(&pushed, e_next)?,
            Err(_) => 1.0,
        };
        equivariance_residuals.push(r);
    }

    let half = Trajectory::build(gen, w, 0, 0, (n_past / 2).max(1), n_future, blocks, opts)?;
    let half_split = half.splitting(0)?;
    let mut convergence_gaps = Vec::with_capacity(blocks.len());
    for (i, (a, b)) in splitting.iter().zip(&half_split).enumerate() {
        let g = grassmann::gap(a, b)?;
        if g > opts.convergence_tolerance {
            return Err(CocycleError::NonConvergence { block: i + 1, gap: g });
        }
        convergence_gaps.push(g);
    }

    let mut filtration = Vec::new();
    for i in 1..=blocks.len() {
        if let Some(v) = traj.slow_space(0, i)? {
            filtration.push(v);
        }
    }
    let mut parts: Vec<&Subspace> = splitting.iter().collect();
    let covered: usize = blocks.iter().map(|b| b.multiplicity).sum();
    if covered < m {
        parts.push(filtration.last().expect("non-trivial V_{p+1}"));
    }
    let direct_sum_margin = grassmann::direct_sum_margin(&parts);
    if direct_sum_margin < grassmann::DIRECT_SUM_THRESHOLD {
        return Err(CocycleError::Grassmann(GrassmannError::DegenerateSum(direct_sum_margin)));
    }

    Ok(SpectrumReport {
        exponents: blocks.iter().map(|b| b.exponent).collect(),
        multiplicities: blocks.iter().map(|b| b.multiplicity).collect(),
        raw_exponents: raw,
        filtration,
        splitting,
        equivariance_residuals,
        convergence_gaps,
        direct_sum_margin,
        n_used: n_future,
        n_past_used: n_past,
        kappa: opts.kappa,
    })
}

/// Reports at `count` independently sampled points, computed in parallel.
/// Sample `j` uses random stream `j` of the driving system; output order is
/// the sample order.
pub fn sweep_reports(
    gen: &Generator,
    driving: &DrivingSystem,
    count: usize,
    n_past: usize,
    n_future: usize,
    opts: &SplittingOptions,
) -> Vec<Result<SpectrumReport>> {
    (0..count)
        .into_par_iter()
        .map(|j| {
            let w = driving.sample_window(n_past, n_future + 1, j as u64);
            oseledets_splitting(gen, &w, n_past, n_future, opts)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Diagnostics

/// `(1/n) ln` of the minimum and maximum of `||L^(n)_w x||` over unit `x`
/// in `e`, from the singular values of the restricted product.
pub fn uniform_growth_check(gen: &Generator, w: &OmegaWindow, e: &Subspace, n: usize) -> Result<(f64, f64)> {
    w.require(0, n)?;
    gen.check_window(w)?;
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let d = e.dim();
    // L^(n) E = Q_n (R_n ... R_1); the triangular product is kept scaled.
    let mut q = e.frame().clone();
    let mut tri = DMatrix::identity(d, d);
    let mut log_scale = 0.0;
    for t in 0..n as isize {
        let z = gen.at(w, t) * &q;
        let qr = z.qr();
        q = qr.q();
        tri = qr.r() * tri;
        let s = tri.amax();
        if s == 0.0 {
            return Ok((f64::NEG_INFINITY, f64::NEG_INFINITY));
        }
        log_scale += s.ln();
        tri /= s;
    }
    let sv = grassmann::singular_values(&tri);
    let hi = (log_scale + sv[0].ln()) / n as f64;
    let lo = (log_scale + sv[d - 1].max(f64::MIN_POSITIVE).ln()) / n as f64;
    Ok((lo, hi))
}

/// Backward orbit `v_0, v_{-1}, ..., v_{-n_past}` inside the `E_i` family.
#[derive(Debug, Clone)]
pub struct BackwardDecay {
    /// Least-squares slope of `ln ||v_{-k}||` against `k`.
    pub rate: f64,
    /// `ln ||v_{-k}||` for `k = 0 ..= n_past`.
    pub log_norms: Vec<f64>,
}

fn check_block(report: &SpectrumReport, i: usize) -> Result<()> {
    if i == 0 || i > report.exponents.len() {
        return Err(CocycleError::BlockOutOfRange {
            block: i,
            blocks: report.exponents.len(),
        });
    }
    Ok(())
}

/// Builds a full orbit through a unit vector of `E_i(w)` by inverting the
/// cocycle restricted to the `E_i` family, and fits the backward growth rate.
/// The window must hold `n_past + report.n_past_used` past symbols and
/// `report.n_used + 1` future symbols.
pub fn backward_decay_check(
    gen: &Generator,
    w: &OmegaWindow,
    report: &SpectrumReport,
    i: usize,
    n_past: usize,
    opts: &SplittingOptions,
) -> Result<BackwardDecay> {
    check_block(report, i)?;
    let traj = Trajectory::build(
        gen,
        w,
        -(n_past as isize),
        0,
        report.n_past_used,
        report.n_used,
        &report.blocks(),
        opts,
    )?;
    let mut next = traj.oseledets_space(0, i)?;
    let d = next.dim();
    let mut coords = DVector::zeros(d);
    coords[0] = 1.0;
    let mut log_norms = Vec::with_capacity(n_past + 1);
    let mut log = 0.0;
    log_norms.push(0.0);
    for k in 1..=n_past {
        let t = -(k as isize);
        let cur = traj.oseledets_space(t, i)?;
        let restricted = next.frame().transpose() * gen.at(w, t) * cur.frame();
        let sv = grassmann::singular_values(&restricted);
        let condition = sv[0] / sv[d - 1];
        if !(condition <= RESTRICTED_CONDITION_LIMIT) {
            return Err(CocycleError::RestrictedSingular { step: k, condition });
        }
        let solved = restricted
            .lu()
            .solve(&coords)
            .ok_or(CocycleError::RestrictedSingular {
                step: k,
                condition: f64::INFINITY,
            })?;
        let norm = solved.norm();
        log += norm.ln();
        log_norms.push(log);
        coords = solved / norm;
        next = cur;
    }
    let rate = fit_slope(&log_norms);
    Ok(BackwardDecay { rate, log_norms })
}

/// `g(s^k w) = ||R(s^k w)|_{C(s^k w)}||` for `k = 0 ..= n`, where `C` is the
/// push-forward family of `candidate` and `R` projects onto `V_{i+1}` along
/// `E_1 + ... + E_i`. Decays like `exp(-k (lambda_i - lambda_{i+1}))` unless
/// the candidate is `E_i` itself, where it vanishes.
pub fn uniqueness_diagnostic(
    gen: &Generator,
    w: &OmegaWindow,
    candidate: &Subspace,
    report: &SpectrumReport,
    i: usize,
    n: usize,
    opts: &SplittingOptions,
) -> Result<Vec<f64>> {
    check_block(report, i)?;
    let blocks = report.blocks();
    if candidate.dim() != blocks[i - 1].multiplicity {
        return Err(CocycleError::NotComplementary(0.0));
    }
    let traj = Trajectory::build(gen, w, 0, n as isize, report.n_past_used, report.n_used, &blocks, opts)?;
    if let Some(v_next) = traj.slow_space(0, i)? {
        let margin = grassmann::direct_sum_margin(&[candidate, &v_next]);
        if margin < grassmann::DIRECT_SUM_THRESHOLD {
            return Err(CocycleError::NotComplementary(margin));
        }
    }
    if let Some(v_i) = traj.slow_space(0, i - 1)? {
        let outside = v_i
            .orthogonal_complement()
            .map(|c| grassmann::max_singular_value(&(c.frame().transpose() * candidate.frame())))
            .unwrap_or(0.0);
        if outside > 1e-6 {
            return Err(CocycleError::NotComplementary(outside));
        }
    }

    let mut series = Vec::with_capacity(n + 1);
    let mut c = candidate.clone();
    for k in 0..=n as isize {
        let g = match traj.slow_space(k, i)? {
            None => 0.0,
            Some(range) => {
                let kernel = traj.fast_space(k, i)?;
                grassmann::project_along(&kernel, &range)?.restricted_norm(&c)
            }
        };
        series.push(g);
        if k < n as isize {
            c = c.push_forward(gen.at(w, k))?;
        }
    }
    Ok(series)
}

/// Least-squares slope of `y_k` against `k = 0, 1, ...`.
pub fn fit_slope(y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = y.iter().enumerate().map(|(k, &v)| (k as f64, v)).collect();
    fit_line(&pts)
}

fn fit_line(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return 0.0;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Least-squares slope of `ln g_k` against `k`, over entries above `floor`.
pub fn fit_log_slope(g: &[f64], floor: f64) -> f64 {
    let pts: Vec<(f64, f64)> = g
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > floor)
        .map(|(k, &v)| (k as f64, v.ln()))
        .collect();
    fit_line(&pts)
}

// ---------------------------------------------------------------------------
// Non-invertible base

/// `E_1` estimates for pasts drawn independently given a common future.
#[derive(Debug, Clone)]
pub struct CounterexampleReport {
    /// Estimated `lambda_1 - lambda_2`.
    pub exponent_separation: f64,
    /// `||A_0 A_1 - A_1 A_0||`.
    pub commutator_norm: f64,
    /// Gap between the two `E_1` estimates of each past pair.
    pub pair_gaps: Vec<(usize, f64)>,
    pub max_gap: f64,
}

/// Knobs for [`noncommuting_base_demo`].
#[derive(Debug, Clone)]
pub struct CounterexampleOptions {
    pub pairs: usize,
    pub past_len: usize,
    pub future_len: usize,
    /// Horizon used to estimate `lambda_1 - lambda_2`.
    pub exponent_horizon: usize,
    pub splitting: SplittingOptions,
}

impl Default for CounterexampleOptions {
    fn default() -> Self {
        CounterexampleOptions {
            pairs: 50,
            past_len: 100,
            future_len: 100,
            exponent_horizon: 100_000,
            splitting: SplittingOptions::default(),
        }
    }
}

/// `E_1` at `w` for fixed blocks, from the push-forward over `n_past` steps.
pub fn top_oseledets_space(
    gen: &Generator,
    w: &OmegaWindow,
    n_past: usize,
    n_future: usize,
    blocks: &[Block],
    opts: &SplittingOptions,
) -> Result<Subspace> {
    let traj = Trajectory::build(gen, w, 0, 0, n_past, n_future, blocks, opts)?;
    traj.oseledets_space(0, 1)
}

/// Two-symbol cocycle `A_{w_0}` over the Bernoulli shift: computes `E_1` for
/// pairs of windows that share a future but have independently drawn pasts.
/// For commuting matrices `E_1` is constant; for non-commuting ones with
/// distinct exponents it depends on the past, so no splitting of the
/// one-sided system exists.
pub fn noncommuting_base_demo(
    a0: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    driving: &DrivingSystem,
    opts: &CounterexampleOptions,
) -> Result<CounterexampleReport> {
    let gen = Generator::new(vec![a0.clone(), a1.clone()])?;
    if gen.dim() != 2 {
        return Err(CocycleError::InvalidGenerator("matrices must be 2x2".into()));
    }
    for (i, a) in [a0, a1].iter().enumerate() {
        if a.determinant().abs() < 1e-12 {
            return Err(CocycleError::InvalidGenerator(format!("A{i} is not invertible")));
        }
    }
    if driving.alphabet_size() != 2 {
        return Err(CocycleError::InvalidLaw("two-symbol law required".into()));
    }
    let commutator_norm = grassmann::max_singular_value(&(a0 * a1 - a1 * a0));

    let long = driving.sample_window(0, opts.exponent_horizon, u64::MAX);
    let est = lyapunov_exponents(&gen, &long, opts.exponent_horizon, 2, &opts.splitting)?;
    let exponent_separation = est.raw[0] - est.raw[1];
    if exponent_separation <= opts.splitting.gap_tolerance {
        return Err(CocycleError::EqualExponents(exponent_separation));
    }
    let blocks = vec![
        Block {
            exponent: est.raw[0],
            multiplicity: 1,
        },
        Block {
            exponent: est.raw[1],
            multiplicity: 1,
        },
    ];

    let base = driving.sample_window(0, opts.future_len, u64::MAX - 1);
    let results: Vec<Result<(usize, f64)>> = (0..opts.pairs)
        .into_par_iter()
        .map(|j| {
            let w1 = driving.resample_past(&base, opts.past_len, 2 * j as u64);
            let w2 = driving.resample_past(&base, opts.past_len, 2 * j as u64 + 1);
            let e1 = top_oseledets_space(&gen, &w1, opts.past_len, opts.future_len, &blocks, &opts.splitting)?;
            let e2 = top_oseledets_space(&gen, &w2, opts.past_len, opts.future_len, &blocks, &opts.splitting)?;
            Ok((j, grassmann::gap(&e1, &e2)?))
        })
        .collect();
    let pair_gaps = results.into_iter().collect::<Result<Vec<_>>>()?;
    let max_gap = pair_gaps.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok(CounterexampleReport {
        exponent_separation,
        commutator_norm,
        pair_gaps,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn opts() -> SplittingOptions {
        SplittingOptions::default()
    }

    fn diag_mix() -> Generator {
        Generator::new(vec![
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0 / 3.0])),
            DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5])),
        ])
        .unwrap()
    }

    /// Independent oracle: Birkhoff means of the per-step log-diagonals.
    fn birkhoff_diagonal(gen: &Generator, w: &OmegaWindow, n: usize) -> Vec<f64> {
        let m = gen.dim();
        let mut sums = vec![0.0; m];
        for t in 0..n {
            let a = gen.matrix(w.future()[t]);
            for (j, s) in sums.iter_mut().enumerate() {
                *s += a[(j, j)].abs().ln();
            }
        }
        let mut out: Vec<f64> = sums.into_iter().map(|s| s / n as f64).collect();
        out.sort_by(|a, b| b.total_cmp(a));
        out
    }

    #[test]
    fn compose_order_and_identity() {
        let a0 = dmatrix![1.0, 2.0; 0.0, 1.0];
        let a1 = dmatrix![0.0, 1.0; 1.0, 3.0];
        let gen = Generator::new(vec![a0.clone(), a1.clone()]).unwrap();
        let w = OmegaWindow::new(vec![], vec![0, 1]);
        assert_eq!(compose(&gen, &w, 0).unwrap(), DMatrix::identity(2, 2));
        assert_eq!(compose(&gen, &w, 2).unwrap(), &a1 * &a0);
        let c = Generator::constant(a1.clone()).unwrap();
        let w = OmegaWindow::constant(0, 0, 3);
        assert_eq!(compose(&c, &w, 3).unwrap(), &a1 * &a1 * &a1);
        assert!(matches!(compose(&c, &w, 4), Err(CocycleError::WindowTooShort { .. })));
    }

    #[test]
    fn diagonal_exponents_exact() {
        let gen = Generator::constant(dmatrix![2.0, 0.0; 0.0, 0.5]).unwrap();
        let w = OmegaWindow::constant(0, 0, 1000);
        let est = lyapunov_exponents(&gen, &w, 1000, 2, &opts()).unwrap();
        assert!((est.raw[0] - 2f64.ln()).abs() <= 1e-12);
        assert!((est.raw[1] + 2f64.ln()).abs() <= 1e-12);
        assert_eq!(est.blocks.len(), 2);
        let v = forward_filtration(&gen, &w, 1000, &est.blocks, &opts()).unwrap();
        assert_eq!(v.len(), 1);
        assert!(v[0].approx_eq(&Subspace::coordinate(2, &[1]).unwrap()));
    }

    #[test]
    fn iid_diagonal_mix_matches_birkhoff() {
        let gen = diag_mix();
        let n = 100_000;
        let w = DrivingSystem::uniform(2, 11).sample_window(0, n, 0);
        let est = lyapunov_exponents(&gen, &w, n, 2, &opts()).unwrap();
        let oracle = birkhoff_diagonal(&gen, &w, n);
        for (a, b) in est.raw.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        let mean = (3f64.ln() + 2f64.ln()) / 2.0;
        assert!((est.raw[0] - mean).abs() < 1e-2);
        assert!((est.raw[1] + mean).abs() < 1e-2);
    }

    #[test]
    fn shear_merges_into_one_block() {
        let gen = Generator::constant(dmatrix![1.0, 1.0; 0.0, 1.0]).unwrap();
        let n = 100_000;
        let w = OmegaWindow::constant(0, 0, n);
        let est = lyapunov_exponents(&gen, &w, n, 2, &opts()).unwrap();
        assert_eq!(est.blocks.len(), 1);
        assert_eq!(est.blocks[0].multiplicity, 2);
        assert!(est.blocks[0].exponent.abs() < 1e-3);
    }

    #[test]
    fn triangular_splitting_matches_eigenvectors() {
        let a = dmatrix![2.0, 1.0; 0.0, 0.5];
        // Eigenvector oracle: (A - 1/2) v = 0 gives v = (1, -3/2).
        let eig = DVector::from_vec(vec![2.0, -3.0]);
        assert!(((&a * &eig) - &eig * 0.5).norm() < 1e-15);
        let gen = Generator::constant(a).unwrap();
        let w = OmegaWindow::constant(0, 200, 201);
        let rep = oseledets_splitting(&gen, &w, 200, 200, &opts()).unwrap();
        assert_eq!(rep.exponents.len(), 2);
        let e1 = Subspace::coordinate(2, &[0]).unwrap();
        let e2 = Subspace::from_slices(2, &[&[2.0, -3.0]]).unwrap();
        assert!(grassmann::gap(&rep.splitting[0], &e1).unwrap() <= 1e-8);
        assert!(grassmann::gap(&rep.splitting[1], &e2).unwrap() <= 1e-8);
        assert!(grassmann::gap(&rep.filtration[0], &e2).unwrap() <= 1e-8);
        assert!(rep.equivariance_residuals.iter().all(|&r| r <= 1e-6));
        assert!(rep.direct_sum_margin > 1e-6);
    }

    #[test]
    fn random_positive_cocycle_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mats: Vec<DMatrix<f64>> = (0..3)
            .map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(0.1..2.0)))
            .collect();
        let gen = Generator::new(mats).unwrap();
        let driving = DrivingSystem::uniform(3, 9);
        for r in sweep_reports(&gen, &driving, 8, 200, 200, &opts()) {
            let r = r.unwrap();
            assert!(r.equivariance_residuals.iter().all(|&x| x <= 1e-6));
            assert!(r.direct_sum_margin > 1e-6);
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let gen = diag_mix();
        let driving = DrivingSystem::uniform(2, 3);
        let a: Vec<Vec<f64>> = sweep_reports(&gen, &driving, 6, 50, 500, &opts())
            .into_iter()
            .map(|r| r.unwrap().exponents)
            .collect();
        let b: Vec<Vec<f64>> = sweep_reports(&gen, &driving, 6, 50, 500, &opts())
            .into_iter()
            .map(|r| r.unwrap().exponents)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_growth_on_conformal_block() {
        let gen = Generator::constant(DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 0.5]))).unwrap();
        let w = OmegaWindow::constant(0, 0, 50);
        let e = Subspace::coordinate(3, &[0, 1]).unwrap();
        let (lo, hi) = uniform_growth_check(&gen, &w, &e, 50).unwrap();
        assert!((lo - 2f64.ln()).abs() < 1e-12 && (hi - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_growth_random_conformal() {
        // Scaled rotations on a 2-block plus a contracting third axis.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mats: Vec<DMatrix<f64>> = (0..4)
            .map(|_| {
                let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let s: f64 = rng.random_range(1.5..3.0);
                let mut a = DMatrix::zeros(3, 3);
                a[(0, 0)] = s * th.cos();
                a[(0, 1)] = -s * th.sin();
                a[(1, 0)] = s * th.sin();
                a[(1, 1)] = s * th.cos();
                a[(0, 2)] = rng.random_range(-1.0..1.0);
                a[(2, 2)] = 0.3;
                a
            })
            .collect();
        let gen = Generator::new(mats).unwrap();
        let n = 10_000;
        let w = DrivingSystem::uniform(4, 2).sample_window(300, n + 1, 0);
        let rep = oseledets_splitting(&gen, &w, 300, 300, &opts()).unwrap();
        assert_eq!(rep.multiplicities[0], 2);
        let (lo, hi) = uniform_growth_check(&gen, &w, &rep.splitting[0], n).unwrap();
        assert!((hi - lo).abs() <= 5e-2);
    }

    #[test]
    fn backward_decay_constant_diagonal() {
        let gen = Generator::constant(dmatrix![2.0, 0.0; 0.0, 0.5]).unwrap();
        let w = OmegaWindow::constant(0, 400, 201);
        let rep = oseledets_splitting(&gen, &w, 100, 200, &opts()).unwrap();
        let b1 = backward_decay_check(&gen, &w, &rep, 1, 200, &opts()).unwrap();
        assert!((b1.rate + 2f64.ln()).abs() < 1e-10);
        let b2 = backward_decay_check(&gen, &w, &rep, 2, 200, &opts()).unwrap();
        assert!((b2.rate - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn backward_decay_singular_restriction() {
        // Conformal 2-block; symbol 1 nearly collapses the block.
        let (c, sn) = (0.6, 0.8);
        let a0 = dmatrix![2.0 * c, -2.0 * sn, 0.0; 2.0 * sn, 2.0 * c, 0.0; 0.0, 0.0, 0.5];
        let a1 = dmatrix![2.0, 0.0, 0.0; 0.0, 2e-13, 0.0; 0.0, 0.0, 0.5];
        let gen = Generator::new(vec![a0, a1]).unwrap();
        let mut past = vec![0; 200];
        past[150] = 1;
        let w = OmegaWindow::new(past, vec![0; 201]);
        let rep = oseledets_splitting(&gen, &w, 20, 200, &opts()).unwrap();
        assert_eq!(rep.multiplicities, vec![2, 1]);
        let err = backward_decay_check(&gen, &w, &rep, 1, 100, &opts()).unwrap_err();
        assert!(matches!(err, CocycleError::RestrictedSingular { step: 50, .. }), "{err:?}");
    }

    #[test]
    fn uniqueness_tilted_line_rate() {
        let gen = Generator::constant(dmatrix![2.0, 0.0; 0.0, 0.5]).unwrap();
        let n = 30;
        let w = OmegaWindow::constant(0, 100, 200 + n + 1);
        let rep = oseledets_splitting(&gen, &w, 100, 200, &opts()).unwrap();
        let own = uniqueness_diagnostic(&gen, &w, &rep.splitting[0], &rep, 1, n, &opts()).unwrap();
        assert!(own.iter().all(|&g| (0.0..=1e-8).contains(&g)));
        let tilted = Subspace::from_slices(2, &[&[1.0, 0.7]]).unwrap();
        let g = uniqueness_diagnostic(&gen, &w, &tilted, &rep, 1, n, &opts()).unwrap();
        assert!(g.iter().all(|&x| x >= 0.0));
        let slope = fit_log_slope(&g, 1e-300);
        let target = -4f64.ln();
        assert!((slope - target).abs() <= 0.1 * target.abs(), "{slope}");
    }

    #[test]
    fn uniqueness_rejects_non_complement() {
        let gen = Generator::constant(dmatrix![2.0, 0.0; 0.0, 0.5]).unwrap();
        let w = OmegaWindow::constant(0, 100, 220);
        let rep = oseledets_splitting(&gen, &w, 100, 200, &opts()).unwrap();
        let bad = Subspace::coordinate(2, &[1]).unwrap();
        let err = uniqueness_diagnostic(&gen, &w, &bad, &rep, 1, 5, &opts()).unwrap_err();
        assert_eq!(err.name(), "NotComplementary");
    }

    #[test]
    fn commuting_pair_has_constant_top_space() {
        let a0 = dmatrix![2.0, 0.0; 0.0, 0.5];
        let a1 = dmatrix![3.0, 0.0; 0.0, 1.0 / 3.0];
        let driving = DrivingSystem::uniform(2, 1);
        let o = CounterexampleOptions {
            pairs: 10,
            exponent_horizon: 10_000,
            ..Default::default()
        };
        let rep = noncommuting_base_demo(&a0, &a1, &driving, &o).unwrap();
        assert!(rep.max_gap <= 1e-8);
        assert!(rep.commutator_norm < 1e-12);
    }

    #[test]
    fn diag_antidiag_products_are_monomial() {
        // Every product of diag(3,1/3) and [[0,1/3],[3,0]] is monomial with
        // entries 3^{+-S}, where S is a simple random walk: both exponents
        // vanish, so this pair does not meet the distinct-exponent hypothesis.
        let gen = Generator::new(vec![dmatrix![3.0, 0.0; 0.0, 1.0 / 3.0], dmatrix![0.0, 1.0 / 3.0; 3.0, 0.0]]).unwrap();
        let n = 30;
        let w = DrivingSystem::uniform(2, 6).sample_window(0, n, 0);
        let l = compose(&gen, &w, n).unwrap();
        let mut slot = 1i32;
        let mut walk = 0i32;
        for &x in w.future() {
            walk += slot;
            if x == 1 {
                slot = -slot;
            }
        }
        let nonzero = l.iter().filter(|x| **x != 0.0).count();
        assert_eq!(nonzero, 2);
        let top = l.amax();
        assert!((top.ln() - (walk.abs() as f64) * 3f64.ln()).abs() < 1e-9);
        assert!((l.determinant().abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn noncommuting_pair_depends_on_past() {
        let a0 = dmatrix![3.0, 0.0; 0.0, 1.0 / 3.0];
        let a1 = dmatrix![1.0, 1.0 / 3.0; 3.0, 2.0];
        let driving = DrivingSystem::uniform(2, 1);
        let rep = noncommuting_base_demo(&a0, &a1, &driving, &CounterexampleOptions::default()).unwrap();
        assert!(rep.exponent_separation > 0.1);
        assert!(rep.max_gap > 0.1, "{}", rep.max_gap);
    }

    #[test]
    fn past_length_cauchy() {
        let gen = Generator::new(vec![dmatrix![3.0, 0.0; 0.0, 1.0 / 3.0], dmatrix![1.0, 1.0 / 3.0; 3.0, 2.0]]).unwrap();
        let w = DrivingSystem::uniform(2, 4).sample_window(200, 101, 0);
        let est = lyapunov_exponents(&gen, &w, 100, 2, &opts()).unwrap();
        let e100 = top_oseledets_space(&gen, &w, 100, 100, &est.blocks, &opts()).unwrap();
        let e200 = top_oseledets_space(&gen, &w, 200, 100, &est.blocks, &opts()).unwrap();
        assert!(grassmann::gap(&e100, &e200).unwrap() <= 1e-6);
    }

    #[test]
    fn markov_law_and_reversal() {
        let p = dmatrix![0.9, 0.1; 0.3, 0.7];
        let d = DrivingSystem::markov(p, 3).unwrap();
        let pi = d.marginal();
        assert!((pi[0] - 0.75).abs() < 1e-12 && (pi[1] - 0.25).abs() < 1e-12);
        let w = d.sample_window(0, 50, 0);
        let r = d.resample_past(&w, 20000, 1);
        assert_eq!(r.future(), w.future());
        let ones = r.past().iter().filter(|&&s| s == 1).count() as f64 / 20000.0;
        assert!((ones - 0.25).abs() < 0.03);
        assert!(DrivingSystem::bernoulli(vec![0.5, 0.6], 0).is_err());
    }

    #[test]
    fn top_exponent_is_sup_of_directional() {
        let gen = Generator::new(vec![dmatrix![1.0, 2.0; 0.5, 1.0], dmatrix![0.3, 0.0; 1.0, 2.0]]).unwrap();
        let n = 60;
        let w = DrivingSystem::uniform(2, 8).sample_window(0, n, 0);
        let (lambda, v) = norm_growth(&gen, &w, n).unwrap();
        let est = lyapunov_exponents(&gen, &w, n, 2, &opts()).unwrap();
        assert!((est.top() - lambda).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut best = directional_exponent(&gen, &w, &v, n).unwrap();
        for _ in 0..200 {
            let u = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let r = directional_exponent(&gen, &w, &u, n).unwrap();
            assert!(r <= lambda + 1e-9);
            best = best.max(r);
        }
        assert!((best - lambda).abs() <= 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cocycle_law(seed in any::<u64>(), n in 0usize..12, k in 0usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mats: Vec<DMatrix<f64>> = (0..2).map(|_| DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).collect();
            let gen = Generator::new(mats).unwrap();
            let w = DrivingSystem::uniform(2, seed).sample_window(0, n + k, 0);
            let whole = compose(&gen, &w, n + k).unwrap();
            let split = compose(&gen, &w.shifted(n as isize).unwrap(), k).unwrap() * compose(&gen, &w, n).unwrap();
            let scale = whole.norm().max(1e-300);
            prop_assert!((whole - split).norm() <= 1e-9 * scale);
        }

        #[test]
        fn directional_exponent_properties(seed in any::<u64>(), alpha in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mats: Vec<DMatrix<f64>> = (0..2).map(|_| DMatrix::from_fn(2, 2, |_, _| rng.random_range(-2.0..2.0))).collect();
            let gen = Generator::new(mats).unwrap();
            let n = 40;
            let w = DrivingSystem::uniform(2, seed).sample_window(0, n, 0);
            let u = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
            let lu = directional_exponent(&gen, &w, &u, n).unwrap();
            let lv = directional_exponent(&gen, &w, &v, n).unwrap();
            let lau = directional_exponent(&gen, &w, &(&u * alpha), n).unwrap();
            prop_assert!((lau - lu).abs() < 1e-12);
            // ||L(u+v)|| <= ||Lu|| + ||Lv||, in log form.
            let luv = directional_exponent(&gen, &w, &(&u + &v), n).unwrap();
            let nf = n as f64;
            let lhs = nf * luv + (&u + &v).norm().ln();
            let rhs = (nf * lu + u.norm().ln()).max(nf * lv + v.norm().ln()) + 2f64.ln();
            prop_assert!(lhs <= rhs + 1e-9);
            // n-step growth of v = first step times the (n-1)-step growth of L v at s w.
            let v1 = gen.matrix(w.future()[0]) * &v;
            let tail = directional_exponent(&gen, &w.shifted(1).unwrap(), &v1, n - 1).unwrap();
            let rebuilt = (tail * (nf - 1.0) + (v1.norm() / v.norm()).ln()) / nf;
            prop_assert!((rebuilt - lv).abs() < 1e-9);
        }
    }
}
