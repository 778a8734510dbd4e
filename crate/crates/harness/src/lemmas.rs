//! Seeded randomized corpora for the structural lemmas.

use nalgebra::DMatrix;
use oseledets::grassmann::{self, BasisOptions, NormTag, Subspace};
use oseledets::sft::{self, CylinderFunction, Sft, Weight};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct LemmaOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Worst observed value of the checked quantity (see each corpus).
    pub worst: f64,
}

type Corpus = fn(&mut ChaCha8Rng) -> Option<(bool, f64)>;

const CORPORA: [(&str, Corpus); 6] = [
    ("projection_pair", projection_pair),
    ("gap_metric", gap_metric),
    ("conditioned_basis", conditioned_basis),
    ("cylinder_projection", cylinder_projection),
    ("distortion", distortion),
    ("lipschitz_ly", lipschitz_ly),
];

/// Runs every corpus for `cases` seeded cases. Case `j` of corpus `c` uses
/// the generator seeded with `seed` on stream `c * 2^32 + j`.
pub fn run_suite(cases: usize, seed: u64) -> Vec<LemmaOutcome> {
    CORPORA
        .iter()
        .enumerate()
        .map(|(ci, (name, f))| {
            let results: Vec<Option<(bool, f64)>> = (0..cases)
                .into_par_iter()
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(((ci as u64) << 32) + j as u64);
                    f(&mut rng)
                })
                .collect();
            let run: Vec<(bool, f64)> = results.into_iter().flatten().collect();
            LemmaOutcome {
                name,
                cases: run.len(),
                failures: run.iter().filter(|r| !r.0).count(),
                worst: run.iter().map(|r| r.1).fold(0.0, f64::max),
            }
        })
        .collect()
}

/// Idempotence and `P + Q = I` for complementary projections, relative to
/// `||P||`. Worst: largest relative defect.
fn projection_pair(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let d = rng.random_range(2..=6);
    let k = rng.random_range(1..d);
    let e = Subspace::random(d, k, rng);
    let f = Subspace::random(d, d - k, rng);
    let p = grassmann::project_along(&f, &e).ok()?;
    let q = grassmann::project_along(&e, &f).ok()?;
    let scale = grassmann::max_singular_value(&p.matrix).max(1.0);
    let idem = p.idempotence_defect() / (scale * scale);
    let sum = grassmann::max_singular_value(&(&p.matrix + &q.matrix - DMatrix::identity(d, d))) / scale;
    let worst = idem.max(sum);
    Some((worst <= 1e-9, worst))
}

/// Gap metric: zero on the diagonal, symmetric, in `[0, 1]`, triangle
/// inequality. Worst: largest violation.
fn gap_metric(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let d = rng.random_range(2..=7);
    let k = rng.random_range(1..d);
    let a = Subspace::random(d, k, rng);
    let b = Subspace::random(d, k, rng);
    let c = Subspace::random(d, k, rng);
    let g = |x: &Subspace, y: &Subspace| grassmann::gap(x, y).expect("equal dimensions");
    let (ab, ba, bc, ac) = (g(&a, &b), g(&b, &a), g(&b, &c), g(&a, &c));
    let violation = [
        g(&a, &a),
        (ab - ba).abs(),
        (ac - ab - bc).max(0.0),
        (-ab).max(ab - 1.0).max(0.0),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Some((violation <= 1e-12, violation))
}

/// `||a||_2 <= ||sum a_i e_i|| <= 4 sqrt(d) ||a||_2` on an independent
/// sample. Worst: largest of `1 - lower` and `upper / bound`.
fn conditioned_basis(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let ambient = rng.random_range(3..=6);
    let d = rng.random_range(1..=3.min(ambient));
    let e = Subspace::random(ambient, d, rng);
    let norm = if rng.random_bool(0.5) { NormTag::Sup } else { NormTag::One };
    let opts = BasisOptions {
        samples: 1_000,
        ellipsoid_points: 300,
        rounds: 2,
        seed: rng.random(),
    };
    let Ok(cb) = grassmann::conditioned_basis(&e, norm, &opts) else {
        return Some((false, f64::INFINITY));
    };
    let (lo, hi) = grassmann::sandwich_ratios(&cb.matrix(), norm, 2_000, rng);
    let worst = (1.0 - lo).max(hi / cb.bound);
    Some((lo >= 1.0 - 1e-12 && hi <= cb.bound, worst))
}

/// `||(I - Pi_n) f||_inf <= theta^n |f|_theta` and
/// `|(I - Pi_n) f|_theta <= max(2 theta, 1) |f|_theta`. Worst: largest ratio
/// of residual to bound.
fn cylinder_projection(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let theta = rng.random_range(0.3..0.8);
    let shift = if rng.random_bool(0.5) {
        Sft::golden_mean(theta)
    } else {
        Sft::full(3, theta)
    }
    .expect("valid shift");
    let depth = rng.random_range(1..=7);
    let n = rng.random_range(1..=6);
    let f = sft::random_cylinder(&shift, depth, rng).ok()?;
    let b = sft::projection_bounds(&shift, &f, n).ok()?;
    let ratio = |r: f64, bound: f64| if bound > 0.0 { r / bound } else if r > 0.0 { f64::INFINITY } else { 0.0 };
    let worst = ratio(b.residual_sup, b.sup_bound).max(ratio(b.residual_lip, b.lip_bound));
    Some((b.holds(1e-12), worst))
}

fn random_weights(shift: &Sft, n: usize, depth: usize, rng: &mut ChaCha8Rng) -> Vec<Weight> {
    (0..n)
        .map(|_| {
            let f = CylinderFunction::from_fn(shift, depth, |_| rng.random_range(0.2..1.0)).expect("small depth");
            Weight::new(shift, f).expect("positive")
        })
        .collect()
}

/// Distortion constants are finite, bounded uniformly in `k` by the proof
/// constant. Worst: largest `D / proof bound`.
fn distortion(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let theta = rng.random_range(0.3..0.8);
    let shift = Sft::full(2, theta).expect("valid shift");
    let k_max = rng.random_range(1..=6);
    let weights = random_weights(&shift, k_max, 3, rng);
    let refs: Vec<&Weight> = weights.iter().collect();
    let rep = sft::distortion_check(&shift, &refs, k_max, 8).ok()?;
    let worst = rep.d / rep.proof_bound;
    Some((rep.d.is_finite() && rep.d <= rep.proof_bound, worst))
}

/// `|P^(n) f|_theta <= R_n (theta^n |f|_theta + K ||f||_inf)`. Worst: largest
/// negative slack (0 when all slacks are non-negative).
fn lipschitz_ly(rng: &mut ChaCha8Rng) -> Option<(bool, f64)> {
    let theta = rng.random_range(0.3..0.8);
    let shift = if rng.random_bool(0.5) {
        Sft::golden_mean(theta)
    } else {
        Sft::full(2, theta)
    }
    .expect("valid shift");
    let n = rng.random_range(1..=4);
    let weights = random_weights(&shift, n, 3, rng);
    let refs: Vec<&Weight> = weights.iter().collect();
    let d = sft::distortion_check(&shift, &refs, n, 8).ok()?.d;
    let depth = rng.random_range(1..=6);
    let f = sft::random_cylinder(&shift, depth, rng).ok()?;
    let rep = sft::lipschitz_ly_check(&shift, &refs, &[f], sft::lipschitz_constant(d)).ok()?;
    Some((rep.min_slack >= -1e-12, (-rep.min_slack).max(0.0)))
}
