//! Finite-dimensional subspace geometry.
//!
//! Subspaces of `R^m` are carried as orthonormal frames. Everything the
//! cocycle machinery needs about splittings lives here: projections along
//! complements, restricted norms in a local chart, the gap metric, subspace
//! intersections, and well-conditioned bases for non-euclidean norms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Smallest singular value below which a concatenation of frames is
/// treated as a non-direct sum.
pub const DIRECT_SUM_THRESHOLD: f64 = 1e-10;

/// Two subspaces are considered equal when their gap is below this.
pub const EQUALITY_GAP: f64 = 1e-8;

/// Singular value threshold used when extracting null spaces for
/// intersections.
pub const INTERSECTION_THRESHOLD: f64 = 1e-8;

const ORTHONORMAL_TOLERANCE: f64 = 1e-12;
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrassmannError {
    #[error("sum of subspaces is not direct (smallest singular value {0:e})")]
    DegenerateSum(f64),
    #[error("subspace dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("ambient dimensions differ: {0} vs {1}")]
    AmbientMismatch(usize, usize),
    #[error("spanning set is rank deficient (rank {rank}, wanted {wanted})")]
    RankDeficient { rank: usize, wanted: usize },
    #[error("frame columns are not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("subspace must have dimension at least one")]
    Empty,
    #[error("conditioned basis sandwich violated: ratios in [{lower}, {upper}], allowed [1, {bound}]")]
    ConditioningFailure { lower: f64, upper: f64, bound: f64 },
}

impl GrassmannError {
    pub fn name(&self) -> &'static str {
        match self {
            GrassmannError::DegenerateSum(_) => "DegenerateSum",
            GrassmannError::DimensionMismatch(..) => "DimensionMismatch",
            GrassmannError::AmbientMismatch(..) => "AmbientMismatch",
            GrassmannError::RankDeficient { .. } => "RankDeficient",
            GrassmannError::NotOrthonormal(_) => "NotOrthonormal",
            GrassmannError::Empty => "Empty",
            GrassmannError::ConditioningFailure { .. } => "ConditioningFailure",
        }
    }
}

pub type Result<T> = std::result::Result<T, GrassmannError>;

/// A `d`-dimensional subspace of `R^m`, stored as an `m x d` matrix with
/// orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    frame: DMatrix<f64>,
}

impl Subspace {
    /// Wraps a frame whose columns are already orthonormal.
    pub fn from_frame(frame: DMatrix<f64>) -> Result<Self> {
        if frame.ncols() == 0 || frame.nrows() == 0 {
            return Err(GrassmannError::Empty);
        }
        if frame.ncols() > frame.nrows() {
            return Err(GrassmannError::RankDeficient {
                rank: frame.nrows(),
                wanted: frame.ncols(),
            });
        }
        let defect = orthonormality_defect(&frame);
        if defect > ORTHONORMAL_TOLERANCE {
            return Err(GrassmannError::NotOrthonormal(defect));
        }
        Ok(Subspace { frame })
    }

    /// Span of the columns of `vectors`, which must be linearly independent.
    pub fn span(vectors: &DMatrix<f64>) -> Result<Self> {
        let wanted = vectors.ncols();
        if wanted == 0 || vectors.nrows() == 0 {
            return Err(GrassmannError::Empty);
        }
        let (basis, singular) = left_singular_basis(vectors);
        let top = singular.first().copied().unwrap_or(0.0);
        let rank = singular
            .iter()
            .filter(|&&s| s > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE))
            .count();
        if top == 0.0 || rank < wanted {
            return Err(GrassmannError::RankDeficient { rank, wanted });
        }
        Ok(Subspace {
            frame: basis.columns(0, wanted).into_owned(),
        })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(GrassmannError::Empty);
        }
        Self::span(&DMatrix::from_columns(columns))
    }

    pub fn from_slices(ambient: usize, columns: &[&[f64]]) -> Result<Self> {
        let cols: Vec<DVector<f64>> = columns
            .iter()
            .map(|c| {
                assert_eq!(c.len(), ambient, "column length must equal ambient dimension");
                DVector::from_column_slice(c)
            })
            .collect();
        Self::from_columns(&cols)
    }

    /// The whole ambient space.
    pub fn full(ambient: usize) -> Self {
        Subspace {
            frame: DMatrix::identity(ambient, ambient),
        }
    }

    /// Span of the listed standard basis vectors.
    pub fn coordinate(ambient: usize, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(GrassmannError::Empty);
        }
        let mut frame = DMatrix::zeros(ambient, indices.len());
        for (j, &i) in indices.iter().enumerate() {
            frame[(i, j)] = 1.0;
        }
        Self::from_frame(frame)
    }

    /// Uniformly distributed random subspace (Gaussian frame, orthonormalised).
    pub fn random<R: Rng + ?Sized>(ambient: usize, dim: usize, rng: &mut R) -> Self {
        loop {
            let g = DMatrix::from_fn(ambient, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            if let Ok(s) = Self::span(&g) {
                return s;
            }
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.frame.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    pub fn frame(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn into_frame(self) -> DMatrix<f64> {
        self.frame
    }

    /// Orthogonal projector onto the subspace.
    pub fn orthogonal_projector(&self) -> DMatrix<f64> {
        &self.frame * self.frame.transpose()
    }

    /// Euclidean distance from `v` to the subspace.
    pub fn distance_to(&self, v: &DVector<f64>) -> f64 {
        let coords = self.frame.transpose() * v;
        (v - &self.frame * coords).norm()
    }

    /// Orthogonal complement; `None` when the subspace is the whole space.
    pub fn orthogonal_complement(&self) -> Option<Subspace> {
        let m = self.ambient_dim();
        let d = self.dim();
        if d == m {
            return None;
        }
        let residual = DMatrix::identity(m, m) - self.orthogonal_projector();
        let eig = SymmetricEigen::new(residual);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let cols: Vec<DVector<f64>> = order[..m - d]
            .iter()
            .map(|&j| eig.eigenvectors.column(j).into_owned())
            .collect();
        let frame = DMatrix::from_columns(&cols);
        // Re-orthonormalise to absorb the eigen-solver's rounding.
        let q = frame.qr().q();
        Some(Subspace { frame: q })
    }

    /// Image `A * self`, re-orthonormalised. Fails if `A` collapses the subspace.
    pub fn push_forward(&self, a: &DMatrix<f64>) -> Result<Subspace> {
        if a.ncols() != self.ambient_dim() {
            return Err(GrassmannError::AmbientMismatch(a.ncols(), self.ambient_dim()));
        }
        Self::span(&(a * &self.frame))
    }

    /// True when the gap to `other` is below [`EQUALITY_GAP`].
    pub fn approx_eq(&self, other: &Subspace) -> bool {
        gap(self, other).map(|g| g < EQUALITY_GAP).unwrap_or(false)
    }

    /// True when every column of `other` lies in `self` up to `tol`.
    pub fn contains(&self, other: &Subspace, tol: f64) -> bool {
        if other.ambient_dim() != self.ambient_dim() {
            return false;
        }
        let resid = other.frame() - &self.frame * (self.frame.transpose() * other.frame());
        max_singular_value(&resid) <= tol
    }
}

fn orthonormality_defect(frame: &DMatrix<f64>) -> f64 {
    let d = frame.ncols();
    let gram = frame.transpose() * frame;
    (gram - DMatrix::identity(d, d)).abs().max()
}

/// Singular values sorted in decreasing order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn max_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Left singular vectors ordered by decreasing singular value, plus the
/// sorted singular values.
fn left_singular_basis(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<DVector<f64>> = order.iter().map(|&j| u.column(j).into_owned()).collect();
    let sv = order.iter().map(|&j| svd.singular_values[j]).collect();
    (DMatrix::from_columns(&cols), sv)
}

/// Right null-space basis of `m` (columns), using the `dim` smallest right
/// singular vectors when `dim` is given and the threshold otherwise.
/// Also returns the singular values associated with the returned vectors.
pub fn null_space(m: &DMatrix<f64>, dim: Option<usize>, threshold: f64) -> (DMatrix<f64>, Vec<f64>) {
    let n = m.ncols();
    if m.nrows() == 0 {
        return (DMatrix::identity(n, n), vec![0.0; n]);
    }
    // Pad so the thin SVD returns a full set of right singular vectors.
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, m.nrows()).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let take = match dim {
        Some(k) => k.min(n),
        None => order
            .iter()
            .filter(|&&j| svd.singular_values[j] < threshold)
            .count(),
    };
    let cols: Vec<DVector<f64>> = order[..take]
        .iter()
        .map(|&j| vt.row(j).transpose().into_owned())
        .collect();
    let sv = order[..take].iter().map(|&j| svd.singular_values[j]).collect();
    if cols.is_empty() {
        return (DMatrix::zeros(n, 0), sv);
    }
    (DMatrix::from_columns(&cols), sv)
}

/// Concatenates frames column-wise.
pub fn concat_frames(spaces: &[&Subspace]) -> DMatrix<f64> {
    let m = spaces.first().map(|s| s.ambient_dim()).unwrap_or(0);
    let total: usize = spaces.iter().map(|s| s.dim()).sum();
    let mut out = DMatrix::zeros(m, total);
    let mut at = 0;
    for s in spaces {
        out.columns_mut(at, s.dim()).copy_from(s.frame());
        at += s.dim();
    }
    out
}

/// Smallest singular value of the concatenated frames; positive iff the
/// sum is direct.
pub fn direct_sum_margin(spaces: &[&Subspace]) -> f64 {
    min_singular_value(&concat_frames(spaces))
}

/// Gap between equal-dimensional subspaces: sine of the largest principal
/// angle, computed as `||(I - P_a) B||` for accuracy at small angles.
pub fn gap(a: &Subspace, b: &Subspace) -> Result<f64> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(GrassmannError::AmbientMismatch(a.ambient_dim(), b.ambient_dim()));
    }
    if a.dim() != b.dim() {
        return Err(GrassmannError::DimensionMismatch(a.dim(), b.dim()));
    }
    let resid = b.frame() - a.frame() * (a.frame().transpose() * b.frame());
    Ok(max_singular_value(&resid).min(1.0))
}

/// Principal angles in increasing order.
pub fn principal_angles(a: &Subspace, b: &Subspace) -> Result<Vec<f64>> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(GrassmannError::AmbientMismatch(a.ambient_dim(), b.ambient_dim()));
    }
    let cosines = singular_values(&(a.frame().transpose() * b.frame()));
    Ok(cosines.iter().map(|c| c.clamp(-1.0, 1.0).acos()).collect())
}

/// Intersection of two subspaces of known dimension `dim`. The residual
/// singular values are returned so the caller can judge how well the
/// intersection is resolved.
pub fn intersect(a: &Subspace, b: &Subspace, dim: usize) -> Result<(Subspace, Vec<f64>)> {
    if a.ambient_dim() != b.ambient_dim() {
        return Err(GrassmannError::AmbientMismatch(a.ambient_dim(), b.ambient_dim()));
    }
    if dim == 0 {
        return Err(GrassmannError::Empty);
    }
    // Vectors of a with zero component orthogonal to b.
    let outside = a.frame() - b.frame() * (b.frame().transpose() * a.frame());
    let (coords, residuals) = null_space(&outside, Some(dim), INTERSECTION_THRESHOLD);
    let s = Subspace::span(&(a.frame() * coords))?;
    Ok((s, residuals))
}

/// Sum of subspaces (not necessarily direct), of the stated dimension.
pub fn sum(spaces: &[&Subspace]) -> Result<Subspace> {
    let cat = concat_frames(spaces);
    Subspace::span(&cat)
}

/// Linear idempotent with prescribed range and kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPair {
    pub range: Subspace,
    pub kernel: Subspace,
    pub matrix: DMatrix<f64>,
}

impl ProjectionPair {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    /// `||P^2 - P||` in the spectral norm.
    pub fn idempotence_defect(&self) -> f64 {
        max_singular_value(&(&self.matrix * &self.matrix - &self.matrix))
    }

    /// Spectral norm of the projection restricted to `e`.
    pub fn restricted_norm(&self, e: &Subspace) -> f64 {
        max_singular_value(&(&self.matrix * e.frame()))
    }
}

/// Projection onto `range` along `kernel`.
pub fn project_along(kernel: &Subspace, range: &Subspace) -> Result<ProjectionPair> {
    let m = range.ambient_dim();
    if kernel.ambient_dim() != m {
        return Err(GrassmannError::AmbientMismatch(kernel.ambient_dim(), m));
    }
    if kernel.dim() + range.dim() != m {
        return Err(GrassmannError::DimensionMismatch(kernel.dim() + range.dim(), m));
    }
    let basis = concat_frames(&[range, kernel]);
    let margin = min_singular_value(&basis);
    if margin < DIRECT_SUM_THRESHOLD {
        return Err(GrassmannError::DegenerateSum(margin));
    }
    let inv = basis
        .try_inverse()
        .ok_or(GrassmannError::DegenerateSum(margin))?;
    let matrix = range.frame() * inv.rows(0, range.dim());
    Ok(ProjectionPair {
        range: range.clone(),
        kernel: kernel.clone(),
        matrix,
    })
}

/// The `(e0, f0)`-local norm of `e`: the norm of the projection onto `f0`
/// along `e`, restricted to `e0`. Vanishes exactly when `e = e0`.
pub fn local_norm(e: &Subspace, e0: &Subspace, f0: &Subspace) -> Result<f64> {
    if e.dim() != e0.dim() {
        return Err(GrassmannError::DimensionMismatch(e.dim(), e0.dim()));
    }
    let chart_margin = direct_sum_margin(&[e0, f0]);
    if chart_margin < DIRECT_SUM_THRESHOLD {
        return Err(GrassmannError::DegenerateSum(chart_margin));
    }
    let p = project_along(e, f0)?;
    Ok(p.restricted_norm(e0))
}

/// Ambient norm used for basis conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormTag {
    Euclidean,
    Sup,
    One,
}

impl NormTag {
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        match self {
            NormTag::Euclidean => v.norm(),
            NormTag::Sup => v.amax(),
            NormTag::One => v.lp_norm(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasisOptions {
    /// Coefficient vectors sampled to verify the sandwich.
    pub samples: usize,
    /// Boundary points used to fit the enclosing ellipsoid.
    pub ellipsoid_points: usize,
    /// Refinement rounds (each doubles the ellipsoid point cloud).
    pub rounds: usize,
    pub seed: u64,
}

impl Default for BasisOptions {
    fn default() -> Self {
        BasisOptions {
            samples: 10_000,
            ellipsoid_points: 1_000,
            rounds: 3,
            seed: 0x6a09_e667,
        }
    }
}

/// Basis together with the sampled sandwich constants.
#[derive(Debug, Clone)]
pub struct ConditionedBasis {
    pub vectors: Vec<DVector<f64>>,
    /// Minimum of `||sum a_i e_i|| / ||a||_2` over the verification sample.
    pub lower: f64,
    /// Maximum of the same ratio.
    pub upper: f64,
    /// `4 sqrt(d)`.
    pub bound: f64,
}

impl ConditionedBasis {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.vectors)
    }
}

/// Upper sandwich constant for a `d`-dimensional basis.
pub fn sandwich_bound(d: usize) -> f64 {
    4.0 * (d as f64).sqrt()
}

/// Min and max of `||B a|| / ||a||_2` over `samples` random unit vectors `a`.
pub fn sandwich_ratios<R: Rng + ?Sized>(
    basis: &DMatrix<f64>,
    norm: NormTag,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let d = basis.ncols();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for _ in 0..samples {
        let a = random_unit(d, rng);
        let r = norm.norm(&(basis * &a));
        lo = lo.min(r);
        hi = hi.max(r);
    }
    (lo, hi)
}

fn random_unit<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Basis of `e` whose synthesis map satisfies
/// `||a||_2 <= ||sum a_i e_i|| <= 4 sqrt(d) ||a||_2` in the chosen norm.
///
/// For the euclidean norm the orthonormal frame is returned. Otherwise the
/// minimum-volume enclosing ellipsoid of sampled unit-sphere points is fitted
/// (Khachiyan iterations), the basis is aligned with its axes, and the result
/// is rescaled so the sampled ratio range sits in the middle of `[1, 4 sqrt d]`
/// on a log scale. The sandwich is then checked on an independent sample.
pub fn conditioned_basis(e: &Subspace, norm: NormTag, opts: &BasisOptions) -> Result<ConditionedBasis> {
    let d = e.dim();
    let bound = sandwich_bound(d);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    if norm == NormTag::Euclidean {
        let basis = e.frame().clone();
        let (lower, upper) = sandwich_ratios(&basis, norm, opts.samples, &mut rng);
        return Ok(ConditionedBasis {
            vectors: columns_of(&basis),
            lower,
            upper,
            bound,
        });
    }

    let mut points = opts.ellipsoid_points.max(4 * d);
    let mut last = (0.0, f64::INFINITY);
    for _ in 0..opts.rounds.max(1) {
        let shape = ellipsoid_shape(e, norm, points, &mut rng);
        let candidate = e.frame() * shape;
        let (cal_lo, cal_hi) = sandwich_ratios(&candidate, norm, opts.samples, &mut rng);
        let spread = cal_hi / cal_lo;
        if spread < bound {
            let centre = (bound / spread).sqrt();
            let scaled = candidate * (centre / cal_lo);
            let (lower, upper) = sandwich_ratios(&scaled, norm, opts.samples, &mut rng);
            if lower >= 1.0 && upper <= bound {
                return Ok(ConditionedBasis {
                    vectors: columns_of(&scaled),
                    lower,
                    upper,
                    bound,
                });
            }
            last = (lower, upper);
        } else {
            last = (1.0, spread);
        }
        points *= 2;
    }
    Err(GrassmannError::ConditioningFailure {
        lower: last.0,
        upper: last.1,
        bound,
    })
}

fn columns_of(m: &DMatrix<f64>) -> Vec<DVector<f64>> {
    (0..m.ncols()).map(|j| m.column(j).into_owned()).collect()
}

/// Returns `S` (d x d) such that the ellipsoid `{S a : |a|_2 <= 1}` in frame
/// coordinates approximates the minimum-volume ellipsoid enclosing the unit
/// ball of the restricted norm.
fn ellipsoid_shape<R: Rng + ?Sized>(e: &Subspace, norm: NormTag, points: usize, rng: &mut R) -> DMatrix<f64> {
    let d = e.dim();
    let mut cloud: Vec<DVector<f64>> = Vec::with_capacity(points);
    for _ in 0..points {
        let a = random_unit(d, rng);
        let r = norm.norm(&(e.frame() * &a));
        cloud.push(a / r);
    }
    // Khachiyan iterations for a centred (symmetric) point cloud.
    let n = cloud.len();
    let mut weights = vec![1.0 / n as f64; n];
    for _ in 0..2_000 {
        let mut x = DMatrix::zeros(d, d);
        for (w, p) in weights.iter().zip(&cloud) {
            x += *w * p * p.transpose();
        }
        let xinv = match x.clone().try_inverse() {
            Some(inv) => inv,
            None => break,
        };
        let (best, m_best) = cloud
            .iter()
            .enumerate()
            .map(|(j, p)| (j, (p.transpose() * &xinv * p)[(0, 0)]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty cloud");
        if m_best <= d as f64 * (1.0 + 1e-4) {
            break;
        }
        let step = (m_best / d as f64 - 1.0) / (m_best - 1.0);
        for w in weights.iter_mut() {
            *w *= 1.0 - step;
        }
        weights[best] += step;
    }
    let mut x = DMatrix::zeros(d, d);
    for (w, p) in weights.iter().zip(&cloud) {
        x += *w * p * p.transpose();
    }
    // Ellipsoid {a : a^T (d X)^{-1} a <= 1}; its axes are sqrt(d * eig(X)).
    let eig = SymmetricEigen::new(x * d as f64);
    let mut s = eig.eigenvectors.clone();
    for j in 0..d {
        let scale = eig.eigenvalues[j].max(0.0).sqrt();
        s.column_mut(j).scale_mut(scale);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(x: f64, y: f64) -> Subspace {
        Subspace::from_slices(2, &[&[x, y]]).unwrap()
    }

    #[test]
    fn coordinate_projection() {
        let p = project_along(&line(1.0, 0.0), &line(0.0, 1.0)).unwrap();
        let out = p.apply(&DVector::from_vec(vec![3.0, 4.0]));
        assert!((out[0]).abs() < 1e-14);
        assert!((out[1] - 4.0).abs() < 1e-14);
    }

    #[test]
    fn oblique_projection() {
        // (2,5) = 2 (1,1) + 3 (0,1)
        let p = project_along(&line(1.0, 1.0), &line(0.0, 1.0)).unwrap();
        let out = p.apply(&DVector::from_vec(vec![2.0, 5.0]));
        assert!(out[0].abs() < 1e-14);
        assert!((out[1] - 3.0).abs() < 1e-13);
        assert!(p.idempotence_defect() < 1e-12);
    }

    #[test]
    fn projection_rejects_non_direct_sum() {
        let err = project_along(&line(1.0, 1.0), &line(2.0, 2.0)).unwrap_err();
        assert_eq!(err.name(), "DegenerateSum");
    }

    #[test]
    fn projection_rejects_wrong_dimensions() {
        let k = Subspace::coordinate(3, &[0]).unwrap();
        let r = Subspace::coordinate(3, &[1]).unwrap();
        assert!(matches!(project_along(&k, &r), Err(GrassmannError::DimensionMismatch(..))));
    }

    #[test]
    fn local_norm_vanishes_at_centre() {
        let e0 = line(1.0, 0.0);
        let f0 = line(0.0, 1.0);
        assert!(local_norm(&e0, &e0, &f0).unwrap() < 1e-15);
    }

    #[test]
    fn local_norm_of_tilted_line() {
        // Oracle: solve (1,0) = alpha (1,t) + beta (0,1) directly.
        let e0 = line(1.0, 0.0);
        let f0 = line(0.0, 1.0);
        for &t in &[0.3, -0.3, 2.5, -7.0, 1e-6] {
            let sys = nalgebra::Matrix2::<f64>::new(1.0, 0.0, t, 1.0);
            let sol = sys.lu().solve(&nalgebra::Vector2::new(1.0, 0.0)).unwrap();
            let oracle = sol[1].abs();
            let got = local_norm(&line(1.0, t), &e0, &f0).unwrap();
            assert!((got - oracle).abs() < 1e-12 * (1.0 + oracle), "t={t}: {got} vs {oracle}");
            assert!((got - t.abs()).abs() < 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn gap_examples() {
        let a = line(1.0, 0.0);
        assert_eq!(gap(&a, &a).unwrap(), 0.0);
        assert!((gap(&a, &line(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        for &phi in &[0.1f64, 0.7, 1.3, 2.9, -0.4] {
            let b = line(phi.cos(), phi.sin());
            // Oracle: sin of the angle from the inner product.
            let cos = (a.frame().column(0).dot(&b.frame().column(0))).abs();
            let oracle = (1.0 - cos * cos).sqrt();
            let g = gap(&a, &b).unwrap();
            assert!((g - oracle).abs() < 1e-12);
            assert!((g - phi.sin().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_dimension_mismatch() {
        let a = Subspace::coordinate(3, &[0]).unwrap();
        let b = Subspace::coordinate(3, &[0, 1]).unwrap();
        assert_eq!(gap(&a, &b).unwrap_err().name(), "DimensionMismatch");
    }

    #[test]
    fn gap_resolves_tiny_angles() {
        let a = line(1.0, 0.0);
        let b = line(1.0, 1e-11);
        let g = gap(&a, &b).unwrap();
        assert!((g - 1e-11).abs() < 1e-20);
    }

    #[test]
    fn euclidean_basis_of_full_space_is_orthonormal() {
        let e = Subspace::full(3);
        let cb = conditioned_basis(&e, NormTag::Euclidean, &BasisOptions::default()).unwrap();
        let m = cb.matrix();
        assert!(orthonormality_defect(&m) < 1e-14);
        assert!((cb.lower - 1.0).abs() < 1e-12 && (cb.upper - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_basis_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let e = Subspace::random(3, 2, &mut rng);
        let cb = conditioned_basis(&e, NormTag::Sup, &BasisOptions::default()).unwrap();
        assert_eq!(cb.bound, 4.0 * 2f64.sqrt());
        // Independent dense sampling oracle over the coefficient sphere.
        let (lo, hi) = sandwich_ratios(&cb.matrix(), NormTag::Sup, 10_000, &mut rng);
        assert!(lo >= 1.0, "lower {lo}");
        assert!(hi <= cb.bound, "upper {hi}");
    }

    #[test]
    fn complement_and_intersection() {
        let a = Subspace::coordinate(3, &[0, 1]).unwrap();
        let c = a.orthogonal_complement().unwrap();
        assert!(c.approx_eq(&Subspace::coordinate(3, &[2]).unwrap()));
        let b = Subspace::from_slices(3, &[&[1.0, 0.0, 1.0], &[0.0, 1.0, 1.0]]).unwrap();
        let (i, resid) = intersect(&a, &b, 1).unwrap();
        assert!(resid[0] < 1e-12);
        assert!(i.approx_eq(&line3(1.0, -1.0, 0.0)));
        assert!(Subspace::full(3).orthogonal_complement().is_none());
    }

    fn line3(x: f64, y: f64, z: f64) -> Subspace {
        Subspace::from_slices(3, &[&[x, y, z]]).unwrap()
    }

    #[test]
    fn span_rejects_dependent_columns() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(matches!(Subspace::span(&m), Err(GrassmannError::RankDeficient { .. })));
    }
}
