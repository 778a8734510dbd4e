//! Weighted transfer operators on one-sided subshifts of finite type.
//!
//! Functions are cylinder functions: constant on cylinders of a fixed depth
//! and stored densely by word code (`w_0` most significant, base `N`).
//! For weights of finite depth the transfer operator maps cylinder functions
//! to cylinder functions, so every quantity below is computed exactly
//! (up to rounding), including the Lipschitz seminorm `|f|_theta`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cocycle::{self, CocycleError, DrivingSystem, Generator, OmegaWindow, SplittingOptions};

/// Dense storage limit: `N^depth` values.
pub const MAX_CODES: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SftError {
    #[error("illegal word {0:?}")]
    IllegalWord(Vec<usize>),
    #[error("invalid shift: {0}")]
    InvalidShift(String),
    #[error("symbol {0} has no legal predecessor")]
    NoPreimage(usize),
    #[error("weight has non-positive value {0}")]
    NonPositiveWeight(f64),
    #[error("shift is not irreducible")]
    NotIrreducible,
    #[error("profile is not antisymmetric (defect {0:e})")]
    NotAntisymmetric(f64),
    #[error("profile is not monotone")]
    NotMonotone,
    #[error("profile sup norm {0} is not < 1/2")]
    AmplitudeTooLarge(f64),
    #[error("depth {0} exceeds the dense storage limit")]
    TooDeep(usize),
    #[error("invalid function: {0}")]
    InvalidFunction(String),
    #[error(transparent)]
    Cocycle(#[from] CocycleError),
}

impl SftError {
    pub fn name(&self) -> &'static str {
        match self {
            SftError::IllegalWord(_) => "IllegalWord",
            SftError::InvalidShift(_) => "InvalidShift",
            SftError::NoPreimage(_) => "NoPreimage",
            SftError::NonPositiveWeight(_) => "NonPositiveWeight",
            SftError::NotIrreducible => "NotIrreducible",
            SftError::NotAntisymmetric(_) => "NotAntisymmetric",
            SftError::NotMonotone => "NotMonotone",
            SftError::AmplitudeTooLarge(_) => "AmplitudeTooLarge",
            SftError::TooDeep(_) => "TooDeep",
            SftError::InvalidFunction(_) => "InvalidFunction",
            SftError::Cocycle(e) => e.name(),
        }
    }
}

pub type Result<T> = std::result::Result<T, SftError>;

// ---------------------------------------------------------------------------
// Shift

/// One-step SFT with metric `d_theta(x, y) = theta^Delta(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sft {
    n: usize,
    transitions: Vec<Vec<bool>>,
    theta: f64,
    /// Symbols that start an infinite legal sequence.
    alive: Vec<bool>,
    irreducible: bool,
}

impl Sft {
    pub fn new(transitions: Vec<Vec<bool>>, theta: f64) -> Result<Self> {
        let n = transitions.len();
        if n == 0 || transitions.iter().any(|r| r.len() != n) {
            return Err(SftError::InvalidShift("transition matrix must be square and non-empty".into()));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(SftError::InvalidShift(format!("theta = {theta} not in (0, 1)")));
        }
        for j in 0..n {
            if !transitions.iter().any(|row| row[j]) {
                return Err(SftError::NoPreimage(j));
            }
        }
        let mut alive = vec![true; n];
        loop {
            let mut changed = false;
            for i in 0..n {
                if alive[i] && !(0..n).any(|j| alive[j] && transitions[i][j]) {
                    alive[i] = false;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if !alive.iter().any(|&a| a) {
            return Err(SftError::InvalidShift("no infinite legal sequences".into()));
        }
        let irreducible = strongly_connected(&transitions, &alive);
        Ok(Sft {
            n,
            transitions,
            theta,
            alive,
            irreducible,
        })
    }

    /// Full shift on `n` symbols.
    pub fn full(n: usize, theta: f64) -> Result<Self> {
        Self::new(vec![vec![true; n]; n], theta)
    }

    /// Two symbols, `11` forbidden.
    pub fn golden_mean(theta: f64) -> Result<Self> {
        Self::new(vec![vec![true, true], vec![true, false]], theta)
    }

    pub fn n_symbols(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn is_irreducible(&self) -> bool {
        self.irreducible
    }

    pub fn transition(&self, i: usize, j: usize) -> bool {
        self.transitions[i][j]
    }

    pub fn is_alive(&self, s: usize) -> bool {
        self.alive[s]
    }

    fn codes(&self, depth: usize) -> Result<usize> {
        let mut total: usize = 1;
        for _ in 0..depth {
            total = total.checked_mul(self.n).filter(|&t| t <= MAX_CODES).ok_or(SftError::TooDeep(depth))?;
        }
        Ok(total)
    }

    /// Legality mask over all codes of the given length.
    pub fn legal_mask(&self, depth: usize) -> Result<Vec<bool>> {
        self.codes(depth)?;
        let mut mask = vec![true];
        for _ in 0..depth {
            let mut next = vec![false; mask.len() * self.n];
            for (c, &ok) in mask.iter().enumerate() {
                if !ok {
                    continue;
                }
                for s in 0..self.n {
                    let link = mask.len() == 1 || self.transitions[c % self.n][s];
                    next[c * self.n + s] = self.alive[s] && link;
                }
            }
            mask = next;
        }
        Ok(mask)
    }

    /// Codes of legal words of the given length, increasing.
    pub fn legal_words(&self, depth: usize) -> Result<Vec<usize>> {
        Ok(self
            .legal_mask(depth)?
            .into_iter()
            .enumerate()
            .filter(|(_, ok)| *ok)
            .map(|(c, _)| c)
            .collect())
    }

    pub fn is_legal(&self, word: &[usize]) -> bool {
        word.iter().all(|&s| s < self.n && self.alive[s]) && word.windows(2).all(|w| self.transitions[w[0]][w[1]])
    }

    pub fn encode(&self, word: &[usize]) -> usize {
        word.iter().fold(0, |c, &s| c * self.n + s)
    }

    pub fn decode(&self, mut code: usize, depth: usize) -> Vec<usize> {
        let mut w = vec![0; depth];
        for i in (0..depth).rev() {
            w[i] = code % self.n;
            code /= self.n;
        }
        w
    }

    fn greedy_successor(&self, s: usize) -> usize {
        (0..self.n)
            .find(|&t| self.alive[t] && self.transitions[s][t])
            .expect("alive symbols have alive successors")
    }

    /// Representative point of the cylinder `[word]`: the periodic extension
    /// when legal, otherwise the greedy continuation by smallest symbol.
    pub fn representative(&self, word: &[usize]) -> Result<Point> {
        if word.is_empty() {
            let s = (0..self.n).find(|&s| self.alive[s]).expect("some symbol is alive");
            return self.representative(&[s]);
        }
        if !self.is_legal(word) {
            return Err(SftError::IllegalWord(word.to_vec()));
        }
        if self.transitions[*word.last().unwrap()][word[0]] {
            return Ok(Point {
                prefix: vec![],
                cycle: word.to_vec(),
            });
        }
        let mut tail = Vec::new();
        let mut cur = *word.last().unwrap();
        let mut seen = vec![usize::MAX; self.n];
        loop {
            let next = self.greedy_successor(cur);
            if seen[next] != usize::MAX {
                let start = seen[next];
                let mut prefix = word.to_vec();
                prefix.extend_from_slice(&tail[..start]);
                return Ok(Point {
                    prefix,
                    cycle: tail[start..].to_vec(),
                });
            }
            seen[next] = tail.len();
            tail.push(next);
            cur = next;
        }
    }

    /// `theta^Delta(x, y)`; 0 when the points coincide.
    pub fn d_theta(&self, x: &Point, y: &Point) -> Result<f64> {
        for p in [x, y] {
            if !p.is_legal(self) {
                return Err(SftError::IllegalWord(p.first(p.prefix.len() + 2 * p.cycle.len())));
            }
        }
        Ok(match x.delta(y) {
            Some(d) => self.theta.powi(d as i32),
            None => 0.0,
        })
    }
}

fn strongly_connected(t: &[Vec<bool>], alive: &[bool]) -> bool {
    let n = t.len();
    let nodes: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    let reach = |start: usize, forward: bool| -> Vec<bool> {
        let mut seen = vec![false; n];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let edge = if forward { t[i][j] } else { t[j][i] };
                if edge && alive[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen
    };
    let s = nodes[0];
    let f = reach(s, true);
    let b = reach(s, false);
    nodes.iter().all(|&i| f[i] && b[i])
}

/// Eventually periodic sequence `prefix cycle cycle ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Point {
    pub prefix: Vec<usize>,
    pub cycle: Vec<usize>,
}

impl Point {
    pub fn periodic(cycle: Vec<usize>) -> Self {
        Point { prefix: vec![], cycle }
    }

    pub fn symbol(&self, i: usize) -> usize {
        if i < self.prefix.len() {
            self.prefix[i]
        } else {
            self.cycle[(i - self.prefix.len()) % self.cycle.len()]
        }
    }

    pub fn first(&self, n: usize) -> Vec<usize> {
        (0..n).map(|i| self.symbol(i)).collect()
    }

    fn is_legal(&self, sft: &Sft) -> bool {
        !self.cycle.is_empty() && sft.is_legal(&self.first(self.prefix.len() + self.cycle.len() + 1))
    }

    /// First disagreement index; `None` if the sequences are equal.
    pub fn delta(&self, other: &Point) -> Option<usize> {
        let horizon = self.prefix.len().max(other.prefix.len()) + self.cycle.len() * other.cycle.len();
        (0..horizon).find(|&i| self.symbol(i) != other.symbol(i))
    }
}

// ---------------------------------------------------------------------------
// Cylinder functions

/// Function constant on cylinders of length `depth`; values on illegal
/// words are zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFunction {
    depth: usize,
    values: Vec<f64>,
    lip: f64,
}

impl CylinderFunction {
    /// `values` is indexed by word code and must have `N^depth` entries.
    pub fn new(sft: &Sft, depth: usize, mut values: Vec<f64>) -> Result<Self> {
        let total = sft.codes(depth)?;
        if values.len() != total {
            return Err(SftError::InvalidFunction(format!(
                "{} values for {} words",
                values.len(),
                total
            )));
        }
        let mask = sft.legal_mask(depth)?;
        for (v, ok) in values.iter_mut().zip(&mask) {
            if !ok {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(SftError::InvalidFunction("non-finite value".into()));
            }
        }
        let lip = lip_seminorm(sft, depth, &values, &mask);
        Ok(CylinderFunction { depth, values, lip })
    }

    /// Builds from a closure on words.
    pub fn from_fn(sft: &Sft, depth: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let total = sft.codes(depth)?;
        let mask = sft.legal_mask(depth)?;
        let values = (0..total)
            .map(|c| if mask[c] { f(&sft.decode(c, depth)) } else { 0.0 })
            .collect();
        Self::new(sft, depth, values)
    }

    pub fn constant(sft: &Sft, c: f64) -> Self {
        Self::from_fn(sft, 1, |_| c).expect("depth-1 function fits")
    }

    /// Indicator of the cylinder `[word]`.
    pub fn indicator(sft: &Sft, word: &[usize]) -> Result<Self> {
        if !sft.is_legal(word) || word.is_empty() {
            return Err(SftError::IllegalWord(word.to_vec()));
        }
        Self::from_fn(sft, word.len(), |w| if w == word { 1.0 } else { 0.0 })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `|f|_theta`, exact.
    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `||f||_theta = max(|f|_theta, ||f||_inf)`.
    pub fn norm(&self) -> f64 {
        self.lip.max(self.sup_norm())
    }

    pub fn min_value(&self, sft: &Sft) -> f64 {
        let mask = sft.legal_mask(self.depth).expect("depth already validated");
        self.values
            .iter()
            .zip(&mask)
            .filter(|(_, ok)| **ok)
            .map(|(v, _)| *v)
            .fold(f64::INFINITY, f64::min)
    }

    /// Value on the word with code `code` of length `len >= depth`.
    fn at_code(&self, sft: &Sft, code: usize, len: usize) -> f64 {
        let mut c = code;
        for _ in self.depth..len {
            c /= sft.n;
        }
        self.values[c]
    }

    pub fn eval_word(&self, sft: &Sft, word: &[usize]) -> Result<f64> {
        if word.len() < self.depth || !sft.is_legal(word) {
            return Err(SftError::IllegalWord(word.to_vec()));
        }
        Ok(self.values[sft.encode(&word[..self.depth])])
    }

    pub fn eval(&self, sft: &Sft, x: &Point) -> Result<f64> {
        self.eval_word(sft, &x.first(self.depth))
    }

    /// Same function stored at a larger depth.
    pub fn promote(&self, sft: &Sft, depth: usize) -> Result<Self> {
        if depth <= self.depth {
            return Ok(self.clone());
        }
        let total = sft.codes(depth)?;
        let values = (0..total).map(|c| self.at_code(sft, c, depth)).collect();
        Self::new(sft, depth, values)
    }

    /// `a f + b g`, at the larger depth.
    pub fn combine(&self, sft: &Sft, a: f64, other: &Self, b: f64) -> Result<Self> {
        let depth = self.depth.max(other.depth);
        let total = sft.codes(depth)?;
        let values = (0..total)
            .map(|c| a * self.at_code(sft, c, depth) + b * other.at_code(sft, c, depth))
            .collect();
        Self::new(sft, depth, values)
    }

    pub fn scale(&self, sft: &Sft, a: f64) -> Self {
        Self::new(sft, self.depth, self.values.iter().map(|v| a * v).collect()).expect("same shape")
    }
}

/// Exact `|f|_theta` for a depth-`depth` function: the largest value of
/// `(f(u) - f(v)) / theta^j` over legal words first differing at `j`.
fn lip_seminorm(sft: &Sft, depth: usize, values: &[f64], mask: &[bool]) -> f64 {
    let n = sft.n;
    let mut mx: Vec<f64> = values
        .iter()
        .zip(mask)
        .map(|(v, ok)| if *ok { *v } else { f64::NEG_INFINITY })
        .collect();
    let mut mn: Vec<f64> = values
        .iter()
        .zip(mask)
        .map(|(v, ok)| if *ok { *v } else { f64::INFINITY })
        .collect();
    let mut lip: f64 = 0.0;
    for j in (0..depth).rev() {
        let parents = mx.len() / n;
        let scale = sft.theta.powi(j as i32);
        let mut pmx = vec![f64::NEG_INFINITY; parents];
        let mut pmn = vec![f64::INFINITY; parents];
        for p in 0..parents {
            for s in 0..n {
                let a = p * n + s;
                if mx[a] == f64::NEG_INFINITY {
                    continue;
                }
                pmx[p] = pmx[p].max(mx[a]);
                pmn[p] = pmn[p].min(mn[a]);
                for t in 0..n {
                    let b = p * n + t;
                    if t != s && mx[b] != f64::NEG_INFINITY {
                        lip = lip.max((mx[a] - mn[b]) / scale);
                    }
                }
            }
        }
        mx = pmx;
        mn = pmn;
    }
    lip
}

/// Random function of the given depth with `|f|_theta = O(1)`:
/// `f(w) = sum_j theta^j xi(w_0 ... w_j)` with i.i.d. `xi` uniform in `[-1, 1]`.
pub fn random_cylinder<R: Rng + ?Sized>(sft: &Sft, depth: usize, rng: &mut R) -> Result<CylinderFunction> {
    let mut level = vec![0.0];
    for j in 0..depth {
        let scale = sft.theta.powi(j as i32);
        let mut next = Vec::with_capacity(level.len() * sft.n);
        for &v in &level {
            for _ in 0..sft.n {
                next.push(v + scale * rng.random_range(-1.0..1.0));
            }
        }
        level = next;
    }
    CylinderFunction::new(sft, depth, level)
}

/// Strictly positive cylinder function.
#[derive(Debug, Clone, PartialEq)]
pub struct Weight(CylinderFunction);

impl Weight {
    pub fn new(sft: &Sft, g: CylinderFunction) -> Result<Self> {
        let m = g.min_value(sft);
        if !(m > 0.0) {
            return Err(SftError::NonPositiveWeight(m));
        }
        Ok(Weight(g))
    }

    pub fn constant(sft: &Sft, c: f64) -> Result<Self> {
        Self::new(sft, CylinderFunction::constant(sft, c))
    }

    pub fn function(&self) -> &CylinderFunction {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.depth
    }
}

// ---------------------------------------------------------------------------
// Transfer operators

/// `P_g f(x) = sum_{i x legal} g(i x) f(i x)`, exactly. The result has depth
/// `max(f.depth, g.depth) - 1` (at least 1). `g` need not be positive.
pub fn transfer_apply(sft: &Sft, g: &CylinderFunction, f: &CylinderFunction) -> Result<CylinderFunction> {
    let n = sft.n;
    let d = (f.depth.max(g.depth)).saturating_sub(1).max(1);
    let total = sft.codes(d)?;
    let mask = sft.legal_mask(d)?;
    let lead = sft.codes(d)?; // N^d: weight of the prepended symbol
    let mut values = vec![0.0; total];
    for u in 0..total {
        if !mask[u] {
            continue;
        }
        let u0 = u / (lead / n);
        let mut acc = 0.0;
        for i in 0..n {
            if !(sft.alive[i] && sft.transitions[i][u0]) {
                continue;
            }
            let code = i * lead + u;
            acc += g.at_code(sft, code, d + 1) * f.at_code(sft, code, d + 1);
        }
        values[u] = acc;
    }
    CylinderFunction::new(sft, d, values)
}

/// `P^(n) f` for weights `g_{w_0}, ..., g_{w_{n-1}}` applied in order.
pub fn transfer_iterate(sft: &Sft, weights: &[&Weight], f: &CylinderFunction) -> Result<CylinderFunction> {
    let mut out = f.clone();
    for g in weights {
        out = transfer_apply(sft, g.function(), &out)?;
    }
    Ok(out)
}

/// Matrix of `P_g` on depth-`(k-1)` cylinder functions, `k = max(depth, 2)`.
#[derive(Debug, Clone)]
pub struct TransferMatrix {
    /// Depth of the functions the matrix acts on.
    pub depth: usize,
    /// Legal word codes indexing rows and columns.
    pub words: Vec<usize>,
    pub matrix: DMatrix<f64>,
}

impl TransferMatrix {
    /// Coordinates of `f` (promoted to the matrix depth).
    pub fn to_vector(&self, sft: &Sft, f: &CylinderFunction) -> Result<nalgebra::DVector<f64>> {
        if f.depth > self.depth {
            return Err(SftError::InvalidFunction(format!(
                "depth {} exceeds matrix depth {}",
                f.depth, self.depth
            )));
        }
        Ok(nalgebra::DVector::from_iterator(
            self.words.len(),
            self.words.iter().map(|&c| f.at_code(sft, c, self.depth)),
        ))
    }

    pub fn from_vector(&self, sft: &Sft, v: &nalgebra::DVector<f64>) -> Result<CylinderFunction> {
        let mut values = vec![0.0; sft.codes(self.depth)?];
        for (k, &c) in self.words.iter().enumerate() {
            values[c] = v[k];
        }
        CylinderFunction::new(sft, self.depth, values)
    }
}

/// Exact matrix of `P_g` acting on cylinder functions of depth
/// `max(g.depth, min_depth + 1, 2) - 1`.
pub fn transfer_matrix(sft: &Sft, g: &CylinderFunction, min_depth: usize) -> Result<TransferMatrix> {
    let n = sft.n;
    let k = g.depth.max(min_depth + 1).max(2);
    let depth = k - 1;
    let words = sft.legal_words(depth)?;
    let mut index = vec![usize::MAX; sft.codes(depth)?];
    for (i, &c) in words.iter().enumerate() {
        index[c] = i;
    }
    let lead = sft.codes(depth)?;
    let mut m = DMatrix::zeros(words.len(), words.len());
    for (row, &u) in words.iter().enumerate() {
        let u0 = u / (lead / n);
        for i in 0..n {
            if !(sft.alive[i] && sft.transitions[i][u0]) {
                continue;
            }
            let code = i * lead + u;
            let v = code / n;
            m[(row, index[v])] += g.at_code(sft, code, k);
        }
    }
    Ok(TransferMatrix { depth, words, matrix: m })
}

/// Weights indexed by symbol of a driving system.
#[derive(Debug, Clone)]
pub struct WeightedSystem {
    pub sft: Sft,
    pub weights: Vec<Weight>,
    pub driving: DrivingSystem,
}

impl WeightedSystem {
    pub fn new(sft: Sft, weights: Vec<Weight>, driving: DrivingSystem) -> Result<Self> {
        if weights.len() != driving.alphabet_size() {
            return Err(SftError::InvalidShift(format!(
                "{} weights for an alphabet of {} symbols",
                weights.len(),
                driving.alphabet_size()
            )));
        }
        Ok(WeightedSystem { sft, weights, driving })
    }

    /// `g_{w_0}, ..., g_{w_{n-1}}`.
    pub fn along(&self, w: &OmegaWindow, n: usize) -> Result<Vec<&Weight>> {
        if w.n_future() < n {
            return Err(CocycleError::WindowTooShort {
                needed_past: 0,
                needed_future: n,
                past: w.n_past(),
                future: w.n_future(),
            }
            .into());
        }
        Ok(w.future()[..n].iter().map(|&s| &self.weights[s]).collect())
    }

    /// Transfer-matrix cocycle on a common word basis.
    pub fn generator(&self) -> Result<(Generator, TransferMatrix)> {
        let depth = self.weights.iter().map(Weight::depth).max().unwrap_or(1);
        let mut mats = Vec::new();
        let mut basis = None;
        for g in &self.weights {
            let tm = transfer_matrix(&self.sft, g.function(), depth - 1)?;
            mats.push(tm.matrix.clone());
            basis.get_or_insert(tm);
        }
        Ok((Generator::new(mats)?, basis.expect("at least one weight")))
    }
}

/// `R_n = ||P^(n) 1||_inf`.
pub fn rn(sft: &Sft, weights: &[&Weight]) -> Result<f64> {
    Ok(transfer_iterate(sft, weights, &CylinderFunction::constant(sft, 1.0))?.sup_norm())
}

/// `Pi_n f`: value of `f` at the representative point of each `n`-cylinder.
pub fn cylinder_projection(sft: &Sft, f: &CylinderFunction, n: usize) -> Result<CylinderFunction> {
    if n >= f.depth {
        return f.promote(sft, n.max(1));
    }
    let total = sft.codes(n)?;
    let mask = sft.legal_mask(n)?;
    let mut values = vec![0.0; total];
    for c in 0..total {
        if mask[c] {
            let rep = sft.representative(&sft.decode(c, n))?;
            values[c] = f.eval(sft, &rep)?;
        }
    }
    CylinderFunction::new(sft, n, values)
}

/// Residual sizes of `(I - Pi_n) f` against the projection lemma bounds.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionBounds {
    pub residual_sup: f64,
    /// `theta^n |f|_theta`.
    pub sup_bound: f64,
    pub residual_lip: f64,
    /// `max(2 theta, 1) |f|_theta`.
    pub lip_bound: f64,
}

impl ProjectionBounds {
    pub fn holds(&self, tol: f64) -> bool {
        self.residual_sup <= self.sup_bound + tol && self.residual_lip <= self.lip_bound + tol
    }
}

pub fn projection_bounds(sft: &Sft, f: &CylinderFunction, n: usize) -> Result<ProjectionBounds> {
    let p = cylinder_projection(sft, f, n)?;
    let r = f.combine(sft, 1.0, &p, -1.0)?;
    let th = sft.theta;
    Ok(ProjectionBounds {
        residual_sup: r.sup_norm(),
        sup_bound: th.powi(n as i32) * f.lip(),
        residual_lip: r.lip(),
        lip_bound: (2.0 * th).max(1.0) * f.lip(),
    })
}

// ---------------------------------------------------------------------------
// Distortion and Lasota–Yorke

#[derive(Debug, Clone)]
pub struct DistortionReport {
    /// Feasible constant for each `k = 1 ..= k_max`.
    pub per_k: Vec<f64>,
    /// Largest of `per_k`.
    pub d: f64,
    /// `e^r - 1` with `r = C K_log / (1 - theta)`, `C = max ||g||_theta`,
    /// `K_log = 1 / min g`.
    pub proof_bound: f64,
}

/// Smallest `D` with `|1 - g^(k)(v y) / g^(k)(v x)| <= D d_theta(x, y)` over
/// all legal `v` of length `k`, and `x_0 = y_0`, for `k = 1 ..= k_max`.
/// `weights[j]` is `g_{s^j w}`; `depth` caps the enumerated length of `x`, `y`.
/// The ratio only depends on the first `max depth - 1` symbols, so the
/// enumeration is exhaustive once `depth` reaches that.
pub fn distortion_check(sft: &Sft, weights: &[&Weight], k_max: usize, depth: usize) -> Result<DistortionReport> {
    if weights.len() < k_max {
        return Err(SftError::InvalidFunction(format!(
            "{} weights for k_max = {k_max}",
            weights.len()
        )));
    }
    let n = sft.n;
    let dg = weights.iter().map(|g| g.depth()).max().unwrap_or(1);
    let m = depth.min(dg.saturating_sub(1)).max(1);
    let xs = sft.legal_words(m)?;
    let mut per_k = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let vs = sft.legal_words(k)?;
        let len = k + m;
        let shift = sft.codes(m)?;
        let mut best: f64 = 0.0;
        for &v in &vs {
            let v_last = v % n;
            for &x in &xs {
                let x0 = x / (shift / n);
                if !sft.transitions[v_last][x0] {
                    continue;
                }
                let gx = product_weight(sft, weights, k, v * shift + x, len);
                for &y in &xs {
                    if y == x || y / (shift / n) != x0 {
                        continue;
                    }
                    let delta = first_difference(sft, x, y, m);
                    let gy = product_weight(sft, weights, k, v * shift + y, len);
                    let d = sft.theta.powi(delta as i32);
                    best = best.max((1.0 - gy / gx).abs() / d);
                }
            }
        }
        per_k.push(best);
    }
    let d = per_k.iter().copied().fold(0.0, f64::max);
    let c = weights.iter().map(|g| g.function().norm()).fold(0.0, f64::max);
    let gamma = weights.iter().map(|g| g.function().min_value(sft)).fold(f64::INFINITY, f64::min);
    let r = c / gamma / (1.0 - sft.theta);
    Ok(DistortionReport {
        per_k,
        d,
        proof_bound: r.exp() - 1.0,
    })
}

/// `g^(k)(z) = prod_j g_j(S^j z)` for the word `z` of length `len`.
fn product_weight(sft: &Sft, weights: &[&Weight], k: usize, code: usize, len: usize) -> f64 {
    let mut p = 1.0;
    let mut rest = len;
    let mut c = code;
    for g in &weights[..k] {
        p *= g.function().at_code(sft, c, rest);
        // Drop the leading symbol.
        let lead = sft.codes(rest - 1).expect("smaller than an existing code space");
        c %= lead;
        rest -= 1;
    }
    p
}

fn first_difference(sft: &Sft, a: usize, b: usize, len: usize) -> usize {
    let wa = sft.decode(a, len);
    let wb = sft.decode(b, len);
    wa.iter().zip(&wb).position(|(x, y)| x != y).unwrap_or(len)
}

/// Lasota–Yorke constant for the Lipschitz seminorm. Points agreeing at
/// index 0 need the distortion constant `D`; points disagreeing there give
/// `|P^(n) f(x) - P^(n) f(y)| <= 2 R_n ||f||_inf`, hence the floor of 2.
pub fn lipschitz_constant(distortion: f64) -> f64 {
    distortion.max(2.0)
}

#[derive(Debug, Clone)]
pub struct LipschitzLyReport {
    pub rn: f64,
    pub k: f64,
    /// `R_n (theta^n |f|_theta + K ||f||_inf) - |P^(n) f|_theta` per sample.
    pub slacks: Vec<f64>,
    pub min_slack: f64,
}

pub fn lipschitz_ly_check(
    sft: &Sft,
    weights: &[&Weight],
    samples: &[CylinderFunction],
    k: f64,
) -> Result<LipschitzLyReport> {
    let r = rn(sft, weights)?;
    let tn = sft.theta.powi(weights.len() as i32);
    let slacks = samples
        .iter()
        .map(|f| {
            let pf = transfer_iterate(sft, weights, f)?;
            Ok(r * (tn * f.lip() + k * f.sup_norm()) - pf.lip())
        })
        .collect::<Result<Vec<f64>>>()?;
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LipschitzLyReport {
        rn: r,
        k,
        slacks,
        min_slack,
    })
}

// ---------------------------------------------------------------------------
// Norm and index-of-compactness bounds

#[derive(Debug, Clone)]
pub struct NormIcReport {
    pub n: usize,
    pub rn: f64,
    /// Lasota–Yorke constant used in the upper bounds.
    pub k: f64,
    /// Largest sampled `||P^(n) f||_theta` over unit `f` (includes `f = 1`).
    pub op_norm_sampled: f64,
    /// `(K + 1) R_n`.
    pub op_norm_upper: f64,
    /// `theta^n R_n / 4`.
    pub ic_lower: f64,
    /// Smallest pairwise `||.||_theta` distance in the separated family.
    pub family_min_distance: f64,
    pub family_size: usize,
    /// All family members have unit norm and pairwise distance at least
    /// `theta^n R_n / 2`.
    pub family_certified: bool,
    /// Largest `||P^(n) (I - Pi_m) f||_theta` over sampled unit `f` (the
    /// family, random functions and cylinder indicators): a sampled lower
    /// estimate of an upper bound.
    pub ic_upper_sampled: f64,
    /// `R_n max(theta^m, theta^n max(2 theta, 1) + K theta^m)`.
    pub ic_upper_bound: f64,
}

/// Number of members in the separated family.
pub const FAMILY_SIZE: usize = 4;

/// Norm and index-of-compactness sandwich for `P^(n)` along `weights`.
#[allow(clippy::too_many_arguments)]
pub fn norm_and_ic_bounds(
    sft: &Sft,
    weights: &[&Weight],
    m_proj: usize,
    k: f64,
    samples: usize,
    sample_depth: usize,
    seed: u64,
) -> Result<NormIcReport> {
    if !sft.irreducible {
        return Err(SftError::NotIrreducible);
    }
    let n = weights.len();
    let th = sft.theta;
    let p1 = transfer_iterate(sft, weights, &CylinderFunction::constant(sft, 1.0))?;
    let r = p1.sup_norm();
    let tn = th.powi(n as i32);

    // Separated family around the cylinder where P^(n) 1 attains R_n.
    let mask = sft.legal_mask(p1.depth)?;
    let top = (0..p1.values.len())
        .filter(|&c| mask[c])
        .max_by(|&a, &b| p1.values[a].total_cmp(&p1.values[b]).then(b.cmp(&a)))
        .expect("legal words exist");
    let u = sft.representative(&sft.decode(top, p1.depth))?;
    let k0 = p1.depth;
    let mut ks = Vec::new();
    let mut kk = k0 + 1;
    while ks.len() < FAMILY_SIZE && kk <= k0 + 16 * sft.n {
        // C_kk is a proper subset of C_{kk-1} when u_{kk-2} has two successors.
        let branching = (0..sft.n).filter(|&t| sft.alive[t] && sft.transitions[u.symbol(kk - 2)][t]).count() > 1;
        if branching {
            ks.push(kk);
        }
        kk += 1;
    }
    if ks.len() < 2 {
        return Err(SftError::NotIrreducible);
    }
    let mut images = Vec::with_capacity(ks.len());
    let mut family = Vec::with_capacity(ks.len());
    let mut unit = true;
    for &ki in &ks {
        let cyl = u.first(ki);
        let height = th.powi((ki + n - 1) as i32);
        let f = CylinderFunction::from_fn(sft, ki + n, |w| if w[n..] == cyl[..] { height } else { 0.0 })?;
        unit &= (f.norm() - 1.0).abs() <= 1e-12;
        images.push(transfer_iterate(sft, weights, &f)?);
        family.push(f);
    }
    let mut family_min_distance = f64::INFINITY;
    for i in 0..images.len() {
        for j in i + 1..images.len() {
            family_min_distance = family_min_distance.min(images[i].combine(sft, 1.0, &images[j], -1.0)?.norm());
        }
    }
    let ic_lower = tn * r / 4.0;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut op_norm_sampled = transfer_iterate(sft, weights, &CylinderFunction::constant(sft, 1.0))?.norm();
    let mut ic_upper_sampled: f64 = 0.0;
    let depth = sample_depth.max(m_proj + 1);
    let words = sft.legal_words(depth)?;
    // Random smooth functions, then scaled indicators of deep cylinders,
    // which come close to realising the norm on the residual side.
    let mut candidates = family;
    for i in 0..samples {
        let f = if i % 2 == 0 {
            random_cylinder(sft, depth, &mut rng)?
        } else {
            let word = sft.decode(words[rng.random_range(0..words.len())], depth);
            CylinderFunction::indicator(sft, &word)?
        };
        candidates.push(f);
    }
    for f in candidates {
        let norm = f.norm();
        if norm == 0.0 {
            continue;
        }
        let f = f.scale(sft, 1.0 / norm);
        op_norm_sampled = op_norm_sampled.max(transfer_iterate(sft, weights, &f)?.norm());
        let q = f.combine(sft, 1.0, &cylinder_projection(sft, &f, m_proj)?, -1.0)?;
        ic_upper_sampled = ic_upper_sampled.max(transfer_iterate(sft, weights, &q)?.norm());
    }
    let tm = th.powi(m_proj as i32);
    Ok(NormIcReport {
        n,
        rn: r,
        k,
        op_norm_sampled,
        op_norm_upper: (k + 1.0) * r,
        ic_lower,
        family_min_distance,
        family_size: ks.len(),
        family_certified: unit && family_min_distance >= tn * r / 2.0,
        ic_upper_sampled,
        ic_upper_bound: r * tm.max(tn * (2.0 * th).max(1.0) + k * tm),
    })
}

// ---------------------------------------------------------------------------
// Antisymmetric weights on the full 2-shift

/// `h(x) = a (x_0 - 1/2)`.
pub fn linear_profile(sft: &Sft, a: f64) -> Result<CylinderFunction> {
    CylinderFunction::from_fn(sft, 1, |w| a * (w[0] as f64 - 0.5))
}

/// Weight with `g(1x) = 1/2 + h(x)` and `g(0x) = 1/2 - h(x)`. The two values
/// are formed so that they sum to exactly 1 in floating point.
pub fn antisymmetric_weight(sft: &Sft, h: &CylinderFunction) -> Result<Weight> {
    let d = h.depth + 1;
    let g = CylinderFunction::from_fn(sft, d, |w| {
        let hv = h.values[sft.encode(&w[1..])];
        let (g0, g1) = if hv >= 0.0 {
            let g1 = 0.5 + hv;
            (1.0 - g1, g1)
        } else {
            let g0 = 0.5 - hv;
            (g0, 1.0 - g0)
        };
        if w[0] == 1 {
            g1
        } else {
            g0
        }
    })?;
    Weight::new(sft, g)
}

fn is_antisymmetric(sft: &Sft, f: &CylinderFunction) -> f64 {
    let total = f.values.len();
    (0..total)
        .map(|c| {
            let bar = (total - 1) - c; // complementing every binary digit
            let _ = sft;
            (f.values[c] + f.values[bar]).abs()
        })
        .fold(0.0, f64::max)
}

fn is_monotone(f: &CylinderFunction) -> bool {
    let total = f.values.len();
    (0..total).all(|c| {
        (0..f.depth).all(|bit| {
            let mask = 1 << bit;
            c & mask != 0 || f.values[c] <= f.values[c | mask]
        })
    })
}

#[derive(Debug, Clone)]
pub struct AntisymmetricReport {
    pub system: WeightedSystem,
    /// Every weight satisfies `g(0x) + g(1x) = 1` exactly.
    pub stochastic: bool,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Exponent blocks above `kappa = ln theta`.
    pub exceptional: Vec<cocycle::Block>,
    /// Largest `|P f(1^inf) - (2 g(1^inf) - 1) f(1^inf)|` over the symbols,
    /// for `f = 1_[1] - 1_[0]`.
    pub identity_residual: f64,
    /// Images of `1_[1] - 1_[0]` stay antisymmetric and monotone.
    pub preserves_antisymmetry: bool,
    pub preserves_monotonicity: bool,
    pub n: usize,
}

/// Antisymmetric example on the full 2-shift: one profile `h` per driving
/// symbol. Spectrum from `n` steps on the window drawn from stream 0.
pub fn antisymmetric_example(
    theta: f64,
    profiles: &[CylinderFunction],
    driving: &DrivingSystem,
    n: usize,
) -> Result<AntisymmetricReport> {
    let sft = Sft::full(2, theta)?;
    let mut weights = Vec::with_capacity(profiles.len());
    for h in profiles {
        let sup = h.sup_norm();
        if !(sup < 0.5) {
            return Err(SftError::AmplitudeTooLarge(sup));
        }
        let defect = is_antisymmetric(&sft, h);
        if defect > 0.0 {
            return Err(SftError::NotAntisymmetric(defect));
        }
        if !is_monotone(h) {
            return Err(SftError::NotMonotone);
        }
        weights.push(antisymmetric_weight(&sft, h)?);
    }
    let system = WeightedSystem::new(sft.clone(), weights, driving.clone())?;
    let one = CylinderFunction::constant(&sft, 1.0);
    let stochastic = system
        .weights
        .iter()
        .all(|g| transfer_apply(&sft, g.function(), &one).map(|p| p.values.iter().all(|&v| v == 1.0)).unwrap_or(false));

    let f = CylinderFunction::from_fn(&sft, 1, |w| if w[0] == 1 { 1.0 } else { -1.0 })?;
    let ones = Point::periodic(vec![1]);
    let mut identity_residual: f64 = 0.0;
    let mut preserves_antisymmetry = true;
    let mut preserves_monotonicity = true;
    for g in &system.weights {
        let pf = transfer_apply(&sft, g.function(), &f)?;
        let lhs = pf.eval(&sft, &ones)?;
        let rhs = (2.0 * g.function().eval(&sft, &ones)? - 1.0) * f.eval(&sft, &ones)?;
        identity_residual = identity_residual.max((lhs - rhs).abs());
        let mut cur = f.clone();
        for _ in 0..4 {
            cur = transfer_apply(&sft, g.function(), &cur)?;
            preserves_antisymmetry &= is_antisymmetric(&sft, &cur) <= 1e-15;
            preserves_monotonicity &= is_monotone(&cur);
        }
    }

    let (gen, _) = system.generator()?;
    let w = driving.sample_window(0, n, 0);
    let opts = SplittingOptions {
        kappa: Some(theta.ln()),
        ..Default::default()
    };
    let est = cocycle::lyapunov_exponents(&gen, &w, n, gen.dim(), &opts)?;
    let exceptional = cocycle::exceptional_blocks(&est.blocks, &opts);
    Ok(AntisymmetricReport {
        system,
        stochastic,
        lambda1: est.raw[0],
        lambda2: est.raw.get(1).copied().unwrap_or(f64::NEG_INFINITY),
        exceptional,
        identity_residual,
        preserves_antisymmetry,
        preserves_monotonicity,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn two(theta: f64) -> Sft {
        Sft::full(2, theta).unwrap()
    }

    /// Brute-force `|f|_theta` over all pairs of legal words.
    fn lip_oracle(sft: &Sft, f: &CylinderFunction) -> f64 {
        let words = sft.legal_words(f.depth()).unwrap();
        let mut best: f64 = 0.0;
        for &a in &words {
            for &b in &words {
                if a == b {
                    continue;
                }
                let d = first_difference(sft, a, b, f.depth());
                best = best.max((f.values()[a] - f.values()[b]).abs() / sft.theta().powi(d as i32));
            }
        }
        best
    }

    #[test]
    fn d_theta_examples() {
        let s = two(0.5);
        let x = Point::periodic(vec![0, 1]);
        assert_eq!(s.d_theta(&x, &x).unwrap(), 0.0);
        assert_eq!(s.d_theta(&x, &Point::periodic(vec![1])).unwrap(), 1.0);
        let y = Point {
            prefix: vec![0, 1, 0],
            cycle: vec![0],
        };
        assert_eq!(s.d_theta(&x, &y).unwrap(), 0.125);
        let g = Sft::golden_mean(0.5).unwrap();
        assert_eq!(g.d_theta(&Point::periodic(vec![1]), &x).unwrap_err().name(), "IllegalWord");
    }

    #[test]
    fn representatives() {
        let g = Sft::golden_mean(0.5).unwrap();
        assert_eq!(g.representative(&[0, 1]).unwrap(), Point::periodic(vec![0, 1]));
        let r = g.representative(&[1, 0, 1]).unwrap();
        assert_eq!(r.first(6), vec![1, 0, 1, 0, 0, 0]);
        assert!(g.is_irreducible());
        let red = Sft::new(vec![vec![true, true], vec![false, true]], 0.5).unwrap();
        assert!(!red.is_irreducible());
        assert_eq!(Sft::new(vec![vec![true, false], vec![true, false]], 0.5).unwrap_err().name(), "NoPreimage");
    }

    #[test]
    fn lip_matches_pairwise_oracle() {
        let g = Sft::golden_mean(0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for depth in 1..6 {
            let f = CylinderFunction::from_fn(&g, depth, |_| rng.random_range(-1.0..1.0)).unwrap();
            assert!((f.lip() - lip_oracle(&g, &f)).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_examples() {
        let s = two(0.5);
        let half = Weight::constant(&s, 0.5).unwrap();
        let one = CylinderFunction::constant(&s, 1.0);
        let p = transfer_apply(&s, half.function(), &one).unwrap();
        assert!(p.values().iter().all(|&v| v == 1.0));
        let a = 0.8;
        let g = antisymmetric_weight(&s, &linear_profile(&s, a).unwrap()).unwrap();
        assert!(transfer_apply(&s, g.function(), &one).unwrap().values().iter().all(|&v| v == 1.0));
        let f = CylinderFunction::from_fn(&s, 1, |w| if w[0] == 1 { 1.0 } else { -1.0 }).unwrap();
        // Enumerating 2-cylinders: P f(x) = g(1x) - g(0x) = 2 h(x) = a f(x).
        let pf = transfer_apply(&s, g.function(), &f).unwrap();
        for x0 in 0..2 {
            let direct = g.function().eval_word(&s, &[1, x0]).unwrap() - g.function().eval_word(&s, &[0, x0]).unwrap();
            assert!((pf.eval_word(&s, &[x0]).unwrap() - direct).abs() < 1e-15);
            assert!((pf.eval_word(&s, &[x0]).unwrap() - a * f.eval_word(&s, &[x0]).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn transfer_matrix_examples() {
        let s = two(0.5);
        let half = Weight::constant(&s, 0.5).unwrap();
        let tm = transfer_matrix(&s, half.function(), 1).unwrap();
        assert!((tm.matrix.clone() - DMatrix::from_element(2, 2, 0.5)).amax() == 0.0);
        let a = 0.8;
        let g = antisymmetric_weight(&s, &linear_profile(&s, a).unwrap()).unwrap();
        let tm = transfer_matrix(&s, g.function(), 1).unwrap();
        let expect = nalgebra::dmatrix![0.5 + a / 2.0, 0.5 - a / 2.0; 0.5 - a / 2.0, 0.5 + a / 2.0];
        assert!((tm.matrix.clone() - expect).amax() < 1e-15);
        let mut eig: Vec<f64> = tm.matrix.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] - a).abs() < 1e-15 && (eig[1] - 1.0).abs() < 1e-15);
        let gm = Sft::golden_mean(0.5).unwrap();
        let tm = transfer_matrix(&gm, &CylinderFunction::constant(&gm, 1.0), 1).unwrap();
        let rho = tm.matrix.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!((rho - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rn_examples() {
        let s = Sft::full(3, 0.5).unwrap();
        let c = Weight::constant(&s, 0.7).unwrap();
        let ws = vec![&c; 5];
        assert!((rn(&s, &ws).unwrap() - 2.1f64.powi(5)).abs() < 1e-12);
        let s2 = two(0.5);
        let g = antisymmetric_weight(&s2, &linear_profile(&s2, 0.8).unwrap()).unwrap();
        assert_eq!(rn(&s2, &[&g; 7]).unwrap(), 1.0);
    }

    #[test]
    fn rn_root_is_cauchy() {
        let s = Sft::golden_mean(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let weights: Vec<Weight> = (0..2)
            .map(|_| Weight::new(&s, CylinderFunction::from_fn(&s, 2, |_| rng.random_range(0.2..1.0)).unwrap()).unwrap())
            .collect();
        let sys = WeightedSystem::new(s.clone(), weights, DrivingSystem::uniform(2, 1)).unwrap();
        let w = sys.driving.sample_window(0, 256, 0);
        let roots: Vec<f64> = [16, 32, 64, 128, 256]
            .iter()
            .map(|&n| rn(&s, &sys.along(&w, n).unwrap()).unwrap().powf(1.0 / n as f64))
            .collect();
        let diffs: Vec<f64> = roots.windows(2).map(|r| (r[1] - r[0]).abs()).collect();
        assert!(diffs.iter().all(|&d| d < 0.03), "{diffs:?}");
        assert!(diffs[3] < 0.005, "{diffs:?}");
    }

    #[test]
    fn projection_examples() {
        let s = two(0.5);
        let c = CylinderFunction::constant(&s, 2.0);
        assert_eq!(projection_bounds(&s, &c, 3).unwrap().residual_sup, 0.0);
        let f = CylinderFunction::from_fn(&s, 2, |w| w[0] as f64 - 0.3 * w[1] as f64).unwrap();
        assert_eq!(cylinder_projection(&s, &f, 3).unwrap(), f.promote(&s, 3).unwrap());
        // Exhaustive depth-10 oracle for f = sum theta^i x_i.
        let f = CylinderFunction::from_fn(&s, 10, |w| w.iter().enumerate().map(|(i, &x)| 0.5f64.powi(i as i32) * x as f64).sum()).unwrap();
        let pf = cylinder_projection(&s, &f, 3).unwrap();
        let mut worst: f64 = 0.0;
        for c in s.legal_words(10).unwrap() {
            let w = s.decode(c, 10);
            worst = worst.max((f.eval_word(&s, &w).unwrap() - pf.eval_word(&s, &w[..3]).unwrap()).abs());
        }
        assert!(worst <= 0.125 * f.lip() + 1e-15);
        assert!(projection_bounds(&s, &f, 3).unwrap().holds(1e-15));
    }

    #[test]
    fn distortion_examples() {
        let s = two(0.5);
        let c = Weight::constant(&s, 0.5).unwrap();
        assert_eq!(distortion_check(&s, &[&c; 3], 3, 8).unwrap().d, 0.0);
        let g = antisymmetric_weight(&s, &linear_profile(&s, 0.8).unwrap()).unwrap();
        let rep = distortion_check(&s, &[&g; 6], 6, 8).unwrap();
        assert!(rep.d.is_finite());
        assert!(rep.per_k.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(rep.d <= rep.proof_bound);
    }

    #[test]
    fn distortion_depth_three_weight() {
        // Weight depending on three symbols: ratios now vary with x_1.
        let s = two(0.5);
        let g = Weight::new(&s, CylinderFunction::from_fn(&s, 3, |w| 1.0 + 0.3 * w[1] as f64 + 0.2 * w[2] as f64).unwrap()).unwrap();
        let rep = distortion_check(&s, &[&g; 5], 5, 8).unwrap();
        assert!(rep.d > 0.0);
        assert!(rep.d <= rep.proof_bound);
        let spread = rep.per_k.iter().copied().fold(0.0, f64::max) - rep.per_k.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(spread < rep.d);
    }

    #[test]
    fn lipschitz_ly_examples() {
        let s = two(0.5);
        let a = 0.8;
        let g = antisymmetric_weight(&s, &linear_profile(&s, a).unwrap()).unwrap();
        let d = distortion_check(&s, &[&g], 1, 8).unwrap().d;
        assert_eq!(d, 0.0);
        let f = CylinderFunction::from_fn(&s, 1, |w| if w[0] == 1 { 1.0 } else { -1.0 }).unwrap();
        let pf = transfer_apply(&s, g.function(), &f).unwrap();
        assert!((pf.lip() - a * f.lip()).abs() < 1e-15);
        // With K = D = 0 the inequality fails here: 1.6 > 0.5 * 2.
        assert!(pf.lip() > s.theta() * f.lip());
        let k = lipschitz_constant(d);
        let rep = lipschitz_ly_check(&s, &[&g], &[f.clone(), CylinderFunction::constant(&s, 3.0)], k).unwrap();
        assert!(rep.min_slack >= 0.0);
        assert_eq!(rep.slacks[1], k * 3.0);
    }

    #[test]
    fn theorem_family_on_stochastic_shift() {
        let s = two(0.5);
        let g = antisymmetric_weight(&s, &linear_profile(&s, 0.8).unwrap()).unwrap();
        let rep = norm_and_ic_bounds(&s, &[&g; 3], 3, 2.0, 50, 6, 1).unwrap();
        assert_eq!(rep.rn, 1.0);
        assert_eq!(rep.ic_lower, 1.0 / 32.0);
        assert!(rep.family_certified);
        assert!(rep.family_min_distance >= 1.0 / 16.0);
        assert!(rep.rn <= rep.op_norm_sampled && rep.op_norm_sampled <= rep.op_norm_upper);
        assert!(rep.ic_lower <= rep.ic_upper_bound);
        assert!(rep.ic_upper_sampled <= rep.ic_upper_bound + 1e-12);
        let red = Sft::new(vec![vec![true, true], vec![false, true]], 0.5).unwrap();
        let c = Weight::constant(&red, 0.5).unwrap();
        assert_eq!(norm_and_ic_bounds(&red, &[&c], 1, 2.0, 1, 2, 0).unwrap_err().name(), "NotIrreducible");
    }

    #[test]
    fn kappa_from_sampled_upper_bound() {
        let s = two(0.5);
        let g = antisymmetric_weight(&s, &linear_profile(&s, 0.8).unwrap()).unwrap();
        for n in [4, 8, 12] {
            let rep = norm_and_ic_bounds(&s, &vec![&g; n], n, 2.0, 40, n + 2, 5).unwrap();
            assert!(rep.ic_lower <= rep.ic_upper_sampled);
            assert!((rep.ic_upper_sampled.ln() / n as f64 - 0.5f64.ln()).abs() < 0.1);
        }
    }

    #[test]
    fn antisymmetric_constant_profile() {
        let s = two(0.5);
        let rep = antisymmetric_example(0.5, &[linear_profile(&s, 0.8).unwrap()], &DrivingSystem::uniform(1, 0), 2000).unwrap();
        assert!(rep.stochastic);
        assert_eq!(rep.lambda1, 0.0);
        assert!((rep.lambda2 - 0.8f64.ln()).abs() <= 1e-12);
        assert_eq!(rep.identity_residual, 0.0);
        assert!(rep.preserves_antisymmetry && rep.preserves_monotonicity);
        assert_eq!(rep.exceptional.len(), 2);
        let zero = antisymmetric_example(0.5, &[linear_profile(&s, 0.0).unwrap()], &DrivingSystem::uniform(1, 0), 200).unwrap();
        assert_eq!(zero.exceptional.len(), 1);
    }

    #[test]
    fn antisymmetric_rejects_bad_profiles() {
        let s = two(0.5);
        let d = DrivingSystem::uniform(1, 0);
        let big = linear_profile(&s, 1.2).unwrap();
        assert_eq!(antisymmetric_example(0.5, &[big], &d, 10).unwrap_err().name(), "AmplitudeTooLarge");
        let sym = CylinderFunction::constant(&s, 0.1);
        assert_eq!(antisymmetric_example(0.5, &[sym], &d, 10).unwrap_err().name(), "NotAntisymmetric");
        let dec = linear_profile(&s, -0.4).unwrap();
        assert_eq!(antisymmetric_example(0.5, &[dec], &d, 10).unwrap_err().name(), "NotMonotone");
    }

    #[test]
    fn random_amplitudes_match_birkhoff() {
        let s = two(0.5);
        let n = 100_000;
        let driving = DrivingSystem::uniform(2, 12);
        let profiles = [linear_profile(&s, 0.6).unwrap(), linear_profile(&s, 0.9).unwrap()];
        let rep = antisymmetric_example(0.5, &profiles, &driving, n).unwrap();
        // Common eigenvectors (1,1), (1,-1): the second exponent is the
        // Birkhoff mean of ln a along the same word.
        let w = driving.sample_window(0, n, 0);
        let oracle = w.future().iter().map(|&x| if x == 0 { 0.6f64.ln() } else { 0.9f64.ln() }).sum::<f64>() / n as f64;
        assert!((rep.lambda2 - oracle).abs() < 1e-9);
        assert!((rep.lambda2 - (0.6f64.ln() + 0.9f64.ln()) / 2.0).abs() < 1e-2);
        assert_eq!(rep.lambda1, 0.0);
    }

    #[test]
    fn matrix_and_iteration_agree() {
        let s = Sft::golden_mean(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let weights: Vec<Weight> = (0..2)
            .map(|_| Weight::new(&s, CylinderFunction::from_fn(&s, 3, |_| rng.random_range(0.1..1.0)).unwrap()).unwrap())
            .collect();
        let sys = WeightedSystem::new(s.clone(), weights, DrivingSystem::uniform(2, 4)).unwrap();
        let (gen, basis) = sys.generator().unwrap();
        let w = sys.driving.sample_window(0, 6, 0);
        let f = random_cylinder(&s, basis.depth, &mut rng).unwrap();
        let direct = transfer_iterate(&s, &sys.along(&w, 6).unwrap(), &f).unwrap().promote(&s, basis.depth).unwrap();
        let via = cocycle::compose(&gen, &w, 6).unwrap() * basis.to_vector(&s, &f).unwrap();
        let back = basis.from_vector(&s, &via).unwrap();
        let diff = direct.combine(&s, 1.0, &back, -1.0).unwrap();
        assert!(diff.sup_norm() < 1e-12);
        let _ = DVector::<f64>::zeros(1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn projection_lemma_holds(seed in 0u64..100_000, n in 1usize..6) {
            let s = Sft::golden_mean(0.45).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_cylinder(&s, 7, &mut rng).unwrap();
            prop_assert!(projection_bounds(&s, &f, n).unwrap().holds(1e-12));
        }

        #[test]
        fn operator_norm_continuity(seed in 0u64..100_000) {
            let s = Sft::full(3, 0.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = CylinderFunction::from_fn(&s, 2, |_| rng.random_range(0.1..1.0)).unwrap();
            let h = CylinderFunction::from_fn(&s, 2, |_| rng.random_range(0.1..1.0)).unwrap();
            let diff = g.combine(&s, 1.0, &h, -1.0).unwrap();
            let f = random_cylinder(&s, 4, &mut rng).unwrap();
            let f = f.scale(&s, 1.0 / f.norm());
            let lhs = transfer_apply(&s, &g, &f).unwrap().combine(&s, 1.0, &transfer_apply(&s, &h, &f).unwrap(), -1.0).unwrap().norm();
            prop_assert!(lhs <= 2.0 * 3.0 * diff.norm() + 1e-12);
        }

        #[test]
        fn lipschitz_ly_on_random_functions(seed in 0u64..100_000, n in 1usize..5) {
            let s = two(0.5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<Weight> = (0..n)
                .map(|_| Weight::new(&s, CylinderFunction::from_fn(&s, 3, |_| rng.random_range(0.2..1.0)).unwrap()).unwrap())
                .collect();
            let refs: Vec<&Weight> = weights.iter().collect();
            let d = distortion_check(&s, &refs, n, 8).unwrap().d;
            let depth = rng.random_range(1..=6);
            let f = random_cylinder(&s, depth, &mut rng).unwrap();
            let rep = lipschitz_ly_check(&s, &refs, &[f], lipschitz_constant(d)).unwrap();
            prop_assert!(rep.min_slack >= -1e-12);
        }
    }
}
