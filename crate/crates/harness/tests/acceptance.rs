//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{dmatrix, DMatrix, DVector};
use oseledets::cocycle::{
    self, CounterexampleOptions, DrivingSystem, Generator, OmegaWindow, SplittingOptions,
};
use oseledets::grassmann::{self, Subspace};
use oseledets::interval::{self, BVFunction, PiecewiseMap, RandomIntervalSystem};
use oseledets::sft::{self, Sft, Weight};
use oseledets_harness::{lemmas, run, sweep, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counterexample threshold, frozen from the oracle run in
/// `counterexample_oracle`: half the smaller oracle max gap (0.979), rounded down.
const COUNTEREXAMPLE_THRESHOLD: f64 = 0.45;

/// LY constant for the beta(2.5) map, frozen from a 10 000-sample calibration
/// (feasible D = 0.3997, seed 2024) and rounded up; below the closed-form 4.
const FROZEN_LY_D: f64 = 0.5;

type Outcome = (bool, String);
type Criterion = (u32, &'static str, fn() -> Result<Outcome, String>);

fn opts() -> SplittingOptions {
    SplittingOptions::default()
}

fn diagonal_mix() -> (Generator, DrivingSystem) {
    let gen = Generator::new(vec![dmatrix![2.0, 0.0; 0.0, 0.5], dmatrix![3.0, 0.0; 0.0, 0.25]]).unwrap();
    (gen, DrivingSystem::uniform(2, 11))
}

fn criterion_1() -> Result<Outcome, String> {
    let gen = Generator::constant(dmatrix![2.0, 0.0; 0.0, 0.5]).map_err(|e| e.to_string())?;
    let w = OmegaWindow::constant(0, 0, 1000);
    let est = cocycle::lyapunov_exponents(&gen, &w, 1000, 2, &opts()).map_err(|e| e.to_string())?;
    let err_const = (est.raw[0] - 2f64.ln()).abs().max((est.raw[1] + 2f64.ln()).abs());

    let start = Instant::now();
    let (gen, d) = diagonal_mix();
    let n = 100_000;
    let w = d.sample_window(0, n, 0);
    let est = cocycle::lyapunov_exponents(&gen, &w, n, 2, &opts()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    // Birkhoff means of the diagonal logs along the same word.
    let mut means = [0.0, 0.0];
    for &s in w.future() {
        let a = gen.matrix(s);
        means[0] += a[(0, 0)].ln() / n as f64;
        means[1] += a[(1, 1)].ln() / n as f64;
    }
    means.sort_by(|a, b| b.total_cmp(a));
    let err_mix = (est.raw[0] - means[0]).abs().max((est.raw[1] - means[1]).abs());
    Ok((
        err_const <= 1e-12 && err_mix <= 1e-2 && elapsed < Duration::from_secs(5),
        format!("constant err {err_const:.1e}, mix err {err_mix:.1e}, mix runtime {:.2}s", elapsed.as_secs_f64()),
    ))
}

fn criterion_2() -> Result<Outcome, String> {
    let gen = Generator::constant(dmatrix![2.0, 1.0; 0.0, 0.5]).map_err(|e| e.to_string())?;
    let w = OmegaWindow::constant(0, 200, 201);
    let rep = cocycle::oseledets_splitting(&gen, &w, 200, 200, &opts()).map_err(|e| e.to_string())?;
    let e1 = Subspace::from_slices(2, &[&[1.0, 0.0]]).unwrap();
    let e2 = Subspace::from_slices(2, &[&[2.0, -3.0]]).unwrap();
    let g1 = grassmann::gap(&rep.splitting[0], &e1).map_err(|e| e.to_string())?;
    let g2 = grassmann::gap(&rep.splitting[1], &e2).map_err(|e| e.to_string())?;
    let eq = rep.equivariance_residuals.iter().copied().fold(0.0, f64::max);
    Ok((
        g1 <= 1e-8 && g2 <= 1e-8 && eq <= 1e-6,
        format!("gaps {g1:.1e}, {g2:.1e}; equivariance {eq:.1e}"),
    ))
}

fn uniqueness_case(gen: &Generator, w: &OmegaWindow, steps: usize, gap: f64) -> Result<(f64, f64, f64), String> {
    let rep = cocycle::oseledets_splitting(gen, w, 200, 200, &opts()).map_err(|e| e.to_string())?;
    let e1 = &rep.splitting[0];
    let tilt = e1.frame().column(0) + rep.splitting[1].frame().column(0) * 0.5;
    let candidate = Subspace::from_columns(&[tilt.into_owned()]).unwrap();
    let g = cocycle::uniqueness_diagnostic(gen, w, &candidate, &rep, 1, steps, &opts()).map_err(|e| e.to_string())?;
    let own = cocycle::uniqueness_diagnostic(gen, w, e1, &rep, 1, steps, &opts()).map_err(|e| e.to_string())?;
    let slope = cocycle::fit_log_slope(&g, 1e-300);
    Ok((slope, -gap, own.iter().copied().fold(0.0, f64::max)))
}

fn criterion_3() -> Result<Outcome, String> {
    let gen = Generator::constant(dmatrix![2.0, 1.0; 0.0, 0.5]).unwrap();
    let w = OmegaWindow::constant(0, 200, 200 + 30 + 1);
    let (s1, t1, m1) = uniqueness_case(&gen, &w, 30, 4f64.ln())?;
    let (gen, d) = diagonal_mix();
    let steps = 200;
    let w = d.sample_window(200, 200 + steps + 1, 0);
    let est = cocycle::lyapunov_exponents(&gen, &d.sample_window(0, 100_000, 1), 100_000, 2, &opts()).unwrap();
    let (s2, t2, m2) = uniqueness_case(&gen, &w, steps, est.raw[0] - est.raw[1])?;
    let ok = (s1 - t1).abs() <= 0.1 * t1.abs() && (s2 - t2).abs() <= 0.1 * t2.abs() && m1 <= 1e-8 && m2 <= 1e-8;
    Ok((
        ok,
        format!("constant slope {s1:.4} vs {t1:.4}, mix slope {s2:.4} vs {t2:.4}; true max g {:.1e}", m1.max(m2)),
    ))
}

fn criterion_4() -> Result<Outcome, String> {
    let (gen, d) = diagonal_mix();
    let n = 10_000;
    let est = cocycle::lyapunov_exponents(&gen, &d.sample_window(0, 100_000, 1), 100_000, 2, &opts()).unwrap();
    let w = d.sample_window(200 + n, 201, 0);
    let rep = cocycle::oseledets_splitting(&gen, &w, 200, 200, &opts()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for i in 1..=2 {
        let back = cocycle::backward_decay_check(&gen, &w, &rep, i, n, &opts()).map_err(|e| e.to_string())?;
        let err = (back.rate + est.raw[i - 1]).abs();
        worst = worst.max(err);
        detail.push(format!("block {i} rate {:.4} vs {:.4}", back.rate, -est.raw[i - 1]));
    }
    Ok((worst <= 5e-2, detail.join(", ")))
}

/// Independent power-iteration oracle: top direction after each past,
/// gap between two independent pasts.
fn counterexample_oracle(a: &[DMatrix<f64>; 2], pairs: usize, past: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = |rng: &mut ChaCha8Rng| {
        let mut v = DVector::from_vec(vec![0.6, 0.8]);
        for _ in 0..past {
            v = &a[rng.random_range(0..2)] * v;
            v /= v.norm();
        }
        v
    };
    (0..pairs)
        .map(|_| {
            let (u, v) = (top(&mut rng), top(&mut rng));
            (1.0 - u.dot(&v).powi(2)).max(0.0).sqrt()
        })
        .fold(0.0, f64::max)
}

fn criterion_5() -> Result<Outcome, String> {
    let start = Instant::now();
    let d = DrivingSystem::uniform(2, 2);
    let o = CounterexampleOptions::default();
    let third = 1.0 / 3.0;
    let diag = dmatrix![3.0, 0.0; 0.0, third];
    let commuting = cocycle::noncommuting_base_demo(&diag, &dmatrix![2.0, 0.0; 0.0, 0.5], &d, &o).map_err(|e| e.to_string())?;
    let literal = [diag.clone(), dmatrix![0.0, third; 3.0, 0.0]];
    let posed = [diag.clone(), dmatrix![1.0, third; 3.0, 2.0]];
    let lit = cocycle::noncommuting_base_demo(&literal[0], &literal[1], &d, &o).map_err(|e| e.to_string())?;
    let pos = cocycle::noncommuting_base_demo(&posed[0], &posed[1], &d, &o).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let oracle = counterexample_oracle(&literal, 50, 100, 99).min(counterexample_oracle(&posed, 50, 100, 99));
    let ok = commuting.max_gap <= 1e-8
        && lit.max_gap > COUNTEREXAMPLE_THRESHOLD
        && pos.max_gap > COUNTEREXAMPLE_THRESHOLD
        && oracle > COUNTEREXAMPLE_THRESHOLD
        && elapsed < Duration::from_secs(10);
    Ok((
        ok,
        format!(
            "commuting {:.1e}, diag/antidiag {:.3}, [[1,1/3],[3,2]] {:.3} (threshold {COUNTEREXAMPLE_THRESHOLD}, oracle {oracle:.3}), {:.2}s",
            commuting.max_gap,
            lit.max_gap,
            pos.max_gap,
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_6() -> Result<Outcome, String> {
    let doubling = RandomIntervalSystem::new(vec![PiecewiseMap::doubling()], DrivingSystem::uniform(1, 0)).unwrap();
    let w = OmegaWindow::constant(0, 100, 101);
    let acim = interval::random_acim(&doubling, &w, 64, 100, 100, &opts()).map_err(|e| e.to_string())?;
    let flat = acim.densities[0].iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max);

    let mixed = RandomIntervalSystem::new(
        vec![PiecewiseMap::tripling(), PiecewiseMap::linear(0.75, 0.0).unwrap()],
        DrivingSystem::uniform(2, 5),
    )
    .unwrap();
    let chi = interval::chi_estimate(&mixed, 100_000, 64);
    let chi_err = (chi.chi - 2.0 / 3.0).abs();
    let kappa_err = (chi.kappa_star - (2.0f64 / 3.0).ln()).abs();

    let beta = PiecewiseMap::beta(2.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let samples: Vec<BVFunction> = (0..100).map(|_| interval::random_bv(&mut rng, 8)).collect();
    let ly = interval::ly_inequality_check(&beta, &samples, 0.25, Some(FROZEN_LY_D)).map_err(|e| e.to_string())?;
    let ok = acim.lambda1.abs() <= 1e-10
        && flat <= 1e-8
        && chi_err <= 1e-3
        && kappa_err <= 1e-3
        && ly.min_slack >= 0.0
        && FROZEN_LY_D <= ly.sufficient_d;
    Ok((
        ok,
        format!(
            "lambda1 {:.1e}, flatness {flat:.1e}, chi err {chi_err:.1e}, kappa err {kappa_err:.1e}, LY min slack {:.3} (a = {}, D = {FROZEN_LY_D})",
            acim.lambda1, ly.min_slack, ly.a
        ),
    ))
}

fn criterion_7() -> Result<Outcome, String> {
    let sys = RandomIntervalSystem::new(vec![PiecewiseMap::doubling()], DrivingSystem::uniform(1, 0)).unwrap();
    let w = OmegaWindow::constant(0, 0, 2);
    let rep = interval::essrad_sandwich_check(&sys, &w, 2, 200, 3).map_err(|e| e.to_string())?;
    let ok = rep.a_n == 0.25 && rep.family_min_distance >= 2.0 * 0.9 * rep.a_n && rep.ic_lower <= rep.fr_upper;
    Ok((
        ok,
        format!(
            "a_2 = {}, min family distance {:.4} >= {:.4}, ic_lower {:.4} <= fr_upper {:.4}",
            rep.a_n,
            rep.family_min_distance,
            1.8 * rep.a_n,
            rep.ic_lower,
            rep.fr_upper
        ),
    ))
}

fn criterion_8() -> Result<Outcome, String> {
    let s = Sft::full(2, 0.5).unwrap();
    let one = DrivingSystem::uniform(1, 0);
    let rep = sft::antisymmetric_example(0.5, &[sft::linear_profile(&s, 0.8).unwrap()], &one, 2000)
        .map_err(|e| e.to_string())?;
    let l2_err = (rep.lambda2 - 0.8f64.ln()).abs();
    let profiles = [sft::linear_profile(&s, 0.6).unwrap(), sft::linear_profile(&s, 0.9).unwrap()];
    let mix = sft::antisymmetric_example(0.5, &profiles, &DrivingSystem::uniform(2, 8), 100_000)
        .map_err(|e| e.to_string())?;
    let target = (0.6f64.ln() + 0.9f64.ln()) / 2.0;
    let mix_err = (mix.lambda2 - target).abs();
    let ok = rep.lambda1 == 0.0
        && rep.stochastic
        && l2_err <= 1e-12
        && mix_err <= 1e-2
        && rep.identity_residual == 0.0
        && mix.identity_residual == 0.0;
    Ok((
        ok,
        format!(
            "lambda1 = {}, lambda2 err {l2_err:.1e}, random amplitudes err {mix_err:.1e}, identity residual {}",
            rep.lambda1,
            rep.identity_residual.max(mix.identity_residual)
        ),
    ))
}

fn criterion_9() -> Result<Outcome, String> {
    let s = Sft::full(2, 0.5).unwrap();
    let g = sft::antisymmetric_weight(&s, &sft::linear_profile(&s, 0.8).unwrap()).unwrap();
    let mut ok = true;
    let mut worst_ratio = f64::INFINITY;
    for n in 1..=6 {
        let ws: Vec<&Weight> = vec![&g; n];
        let d = sft::distortion_check(&s, &ws, n, 8).map_err(|e| e.to_string())?;
        let k = sft::lipschitz_constant(d.d);
        let b = sft::norm_and_ic_bounds(&s, &ws, n, k, 200, n + 2, n as u64).map_err(|e| e.to_string())?;
        let half = 0.5f64.powi(n as i32) * b.rn / 2.0;
        worst_ratio = worst_ratio.min(b.family_min_distance / half);
        ok &= b.family_certified
            && b.family_min_distance >= half
            && b.ic_lower == 0.5f64.powi(n as i32) * b.rn / 4.0
            && b.rn <= b.op_norm_sampled
            && b.op_norm_sampled <= b.op_norm_upper;
    }
    Ok((ok, format!("n = 1..6, min distance / (theta^n R_n / 2) = {worst_ratio:.3}, K = max(D, 2)")))
}

fn criterion_10() -> Result<Outcome, String> {
    let start = Instant::now();
    let outcomes = lemmas::run_suite(64, 10);
    let elapsed = start.elapsed();
    let failures: Vec<String> = outcomes
        .iter()
        .filter(|o| o.failures > 0 || o.cases == 0)
        .map(|o| format!("{} ({}/{})", o.name, o.failures, o.cases))
        .collect();
    let total: usize = outcomes.iter().map(|o| o.cases).sum();
    Ok((
        failures.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} corpora, {total} cases, failures [{}], {:.1}s",
            outcomes.len(),
            failures.join(", "),
            elapsed.as_secs_f64()
        ),
    ))
}

fn criterion_11() -> Result<Outcome, String> {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    let mut same = true;
    let mut checked = 0;
    for name in ["cocycle_constant", "interval_doubling", "sft_antisymmetric", "lemma_suite"] {
        let path = format!("{dir}/{name}.toml");
        let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
        let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
        let a = run(&cfg).map_err(|e| e.to_string())?.to_line();
        let b = run(&cfg).map_err(|e| e.to_string())?.to_line();
        same &= a == b;
        checked += 1;
    }
    let template = oseledets_harness::config::parse_table(
        &std::fs::read_to_string(format!("{dir}/interval_doubling.toml")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let grid = vec![oseledets_harness::parse_grid_axis("interval.k=16,32").map_err(|e| e.to_string())?];
    let lines = |r: Vec<oseledets_harness::ResultRecord>| r.iter().map(|x| x.to_line()).collect::<Vec<_>>();
    same &= lines(sweep(&template, &grid).map_err(|e| e.to_string())?) == lines(sweep(&template, &grid).map_err(|e| e.to_string())?);

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("r{i}.jsonl"));
        let status = Command::new(env!("CARGO_BIN_EXE_oseledets"))
            .args(["run", "--config", &format!("{dir}/sft_antisymmetric.toml"), "--out"])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        same &= status.success();
        files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    same &= files[0] == files[1] && !files[0].is_empty();
    Ok((same, format!("{checked} configs via library, one sweep, one CLI run: byte-identical")))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (1, "closed-form exponents", criterion_1),
        (2, "splitting on solvable cases", criterion_2),
        (3, "uniqueness diagnostic", criterion_3),
        (4, "backward rates", criterion_4),
        (5, "non-invertible base counterexample", criterion_5),
        (6, "interval application", criterion_6),
        (7, "essential-radius sandwich", criterion_7),
        (8, "SFT application", criterion_8),
        (9, "norm and index-of-compactness sandwich", criterion_9),
        (10, "lemma suites", criterion_10),
        (11, "reproducibility", criterion_11),
    ];
    let mut failed = 0;
    for (i, name, f) in criteria {
        let (ok, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
        if !ok {
            failed += 1;
        }
        println!("criterion {i:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
