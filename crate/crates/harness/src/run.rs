//! Dispatch of a validated configuration to the computational modules.

use std::time::Instant;

use nalgebra::DMatrix;
use oseledets::cocycle::{
    self, CounterexampleOptions, DrivingSystem, Generator, SplittingOptions,
};
use oseledets::grassmann::Subspace;
use oseledets::interval::{self, Branch, PiecewiseMap, RandomIntervalSystem};
use oseledets::sft::{self, CylinderFunction, Sft, Weight, WeightedSystem};

use crate::config::{to_matrix, Kind, MapSpec, RunConfig, SftConfig};
use crate::lemmas;
use crate::record::ResultRecord;
use crate::HarnessError;

/// Module failure: error name plus message.
#[derive(Debug, Clone)]
pub struct NumericFailure {
    pub name: String,
    pub message: String,
}

macro_rules! numeric_from {
    ($($t:ty),*) => {$(
        impl From<$t> for NumericFailure {
            fn from(e: $t) -> Self {
                NumericFailure { name: e.name().to_string(), message: e.to_string() }
            }
        }
    )*};
}

numeric_from!(
    cocycle::CocycleError,
    interval::IntervalError,
    sft::SftError,
    oseledets::grassmann::GrassmannError
);

type Numeric<T> = Result<T, NumericFailure>;

/// System built from a configuration; construction failures are
/// configuration errors.
enum System {
    Cocycle(Generator, DrivingSystem),
    Interval(RandomIntervalSystem),
    Sft(SftSystem),
    Counterexample(DMatrix<f64>, DMatrix<f64>, DrivingSystem),
    LemmaSuite(usize),
}

enum SftSystem {
    Antisymmetric(Vec<CylinderFunction>, DrivingSystem),
    Weighted(WeightedSystem),
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn driving(cfg: &RunConfig, alphabet: usize) -> Result<DrivingSystem, HarnessError> {
    let seed = cfg.seed();
    let d = &cfg.driving;
    let out = if let Some(p) = &d.probabilities {
        DrivingSystem::bernoulli(p.clone(), seed).map_err(config_err)?
    } else if let Some(t) = &d.transition {
        DrivingSystem::markov(to_matrix(t), seed).map_err(config_err)?
    } else {
        DrivingSystem::uniform(alphabet, seed)
    };
    if out.alphabet_size() != alphabet {
        return Err(HarnessError::Config(format!(
            "driving law has {} symbols, system has {alphabet}",
            out.alphabet_size()
        )));
    }
    Ok(out)
}

fn named_map(name: &str) -> Result<PiecewiseMap, HarnessError> {
    let parts: Vec<&str> = name.split(':').collect();
    let num = |i: usize| -> Result<f64, HarnessError> {
        parts
            .get(i)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| HarnessError::Config(format!("bad map `{name}`")))
    };
    match parts[0] {
        "doubling" => Ok(PiecewiseMap::doubling()),
        "tripling" => Ok(PiecewiseMap::tripling()),
        "tent" => Ok(PiecewiseMap::tent()),
        "identity" => Ok(PiecewiseMap::identity()),
        "full" => match num(1)? {
            k if k >= 1.0 && k.fract() == 0.0 => Ok(PiecewiseMap::full_branch(k as usize)),
            _ => Err(HarnessError::Config(format!("bad map `{name}`"))),
        },
        "beta" => PiecewiseMap::beta(num(1)?).map_err(config_err),
        "linear" => PiecewiseMap::linear(num(1)?, num(2)?).map_err(config_err),
        _ => Err(HarnessError::Config(format!("unknown map `{name}`"))),
    }
}

fn build_sft(c: &SftConfig) -> Result<Sft, HarnessError> {
    match &c.transitions {
        Some(t) => Sft::new(t.iter().map(|r| r.iter().map(|&x| x != 0).collect()).collect(), c.theta),
        None => Sft::full(c.symbols, c.theta),
    }
    .map_err(config_err)
}

fn prepare(cfg: &RunConfig) -> Result<System, HarnessError> {
    Ok(match cfg.kind {
        Kind::Cocycle => {
            let c = cfg.cocycle.as_ref().expect("validated");
            let gen = Generator::new(c.matrices.iter().map(to_matrix).collect()).map_err(config_err)?;
            let d = driving(cfg, gen.alphabet_size())?;
            System::Cocycle(gen, d)
        }
        Kind::Interval => {
            let c = cfg.interval.as_ref().expect("validated");
            let maps = c
                .maps
                .iter()
                .map(|m| match m {
                    MapSpec::Named(name) => named_map(name),
                    MapSpec::Branches { branches } => {
                        PiecewiseMap::new(branches.iter().map(|b| Branch::affine(b[0], b[1], b[2], b[3])).collect())
                            .map_err(config_err)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            let d = driving(cfg, maps.len())?;
            System::Interval(RandomIntervalSystem::new(maps, d).map_err(config_err)?)
        }
        Kind::Sft => {
            let c = cfg.sft.as_ref().expect("validated");
            let s = build_sft(c)?;
            if let Some(amps) = &c.amplitudes {
                if c.transitions.is_some() || c.symbols != 2 {
                    return Err(HarnessError::Config("amplitudes need the full 2-shift".into()));
                }
                let profiles = amps
                    .iter()
                    .map(|&a| sft::linear_profile(&s, a))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(config_err)?;
                let d = driving(cfg, profiles.len())?;
                System::Sft(SftSystem::Antisymmetric(profiles, d))
            } else {
                let ws = c.weights.as_ref().expect("validated");
                let weights = ws
                    .iter()
                    .map(|v| {
                        CylinderFunction::new(&s, c.weight_depth, v.clone()).and_then(|f| Weight::new(&s, f))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(config_err)?;
                let d = driving(cfg, weights.len())?;
                System::Sft(SftSystem::Weighted(WeightedSystem::new(s, weights, d).map_err(config_err)?))
            }
        }
        Kind::Counterexample => {
            let c = cfg.counterexample.as_ref().expect("validated");
            let d = driving(cfg, 2)?;
            System::Counterexample(to_matrix(&c.a0), to_matrix(&c.a1), d)
        }
        Kind::LemmaSuite => System::LemmaSuite(cfg.lemma_suite.clone().unwrap_or_default().cases),
    })
}

fn splitting_options(cfg: &RunConfig) -> SplittingOptions {
    SplittingOptions {
        gap_tolerance: cfg.tolerances.gap,
        convergence_tolerance: cfg.tolerances.convergence,
        ..Default::default()
    }
}

/// Runs one configuration. Module failures produce an error record;
/// only configuration problems are returned as `Err`.
pub fn run(cfg: &RunConfig) -> Result<ResultRecord, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let system = prepare(cfg)?;
    let mut rec = ResultRecord::new(cfg.kind.as_str(), cfg.digest(), cfg.seed());
    let outcome = match &system {
        System::Cocycle(gen, d) => run_cocycle(cfg, gen, d, &mut rec),
        System::Interval(sys) => run_interval(cfg, sys, &mut rec),
        System::Sft(s) => run_sft(cfg, s, &mut rec),
        System::Counterexample(a0, a1, d) => run_counterexample(cfg, a0, a1, d, &mut rec),
        System::LemmaSuite(cases) => run_lemmas(cfg, *cases, &mut rec),
    };
    if let Err(e) = outcome {
        rec.fail(&e.name, e.message);
    }
    if cfg.output.wall_time {
        rec.wall_time = Some(start.elapsed().as_secs_f64());
    }
    Ok(rec)
}

fn push_blocks(rec: &mut ResultRecord, exponents: &[f64], multiplicities: &[usize]) {
    for (i, (l, m)) in exponents.iter().zip(multiplicities).enumerate() {
        rec.scalar(&format!("lambda{}", i + 1), *l);
        rec.count(&format!("multiplicity{}", i + 1), *m);
    }
    rec.series("exponents", exponents.to_vec());
}

fn run_cocycle(cfg: &RunConfig, gen: &Generator, d: &DrivingSystem, rec: &mut ResultRecord) -> Numeric<()> {
    let c = cfg.cocycle.as_ref().expect("validated");
    let opts = splitting_options(cfg);
    let past = c.n_past + c.backward_steps;
    let future = c.n.max(c.n_future + 1 + c.uniqueness_steps);
    let w = d.sample_window(past, future, 0);
    let est = cocycle::lyapunov_exponents(gen, &w, c.n, gen.dim(), &opts)?;
    rec.count("n", c.n);
    rec.count("dim", gen.dim());
    let exps: Vec<f64> = est.blocks.iter().map(|b| b.exponent).collect();
    let mults: Vec<usize> = est.blocks.iter().map(|b| b.multiplicity).collect();
    push_blocks(rec, &exps, &mults);
    rec.series(
        "raw_exponents",
        est.raw.iter().copied().filter(|x| x.is_finite()).collect(),
    );
    if !c.splitting {
        return Ok(());
    }
    let report = cocycle::oseledets_splitting(gen, &w, c.n_past, c.n_future, &opts)?;
    rec.count("n_past", c.n_past);
    rec.count("n_future", c.n_future);
    rec.count("splitting_blocks", report.multiplicities.len());
    rec.scalar("direct_sum_margin", report.direct_sum_margin);
    rec.scalar(
        "equivariance_residual_max",
        report.equivariance_residuals.iter().copied().fold(0.0, f64::max),
    );
    rec.scalar(
        "convergence_gap_max",
        report.convergence_gaps.iter().copied().fold(0.0, f64::max),
    );
    rec.series("equivariance_residuals", report.equivariance_residuals.clone());
    rec.series("convergence_gaps", report.convergence_gaps.clone());

    let blocks = report.multiplicities.len();
    if c.uniqueness_steps > 0 && blocks >= 2 {
        let e1 = &report.splitting[0];
        let push = report.splitting[1].frame().column(0).into_owned();
        let cols: Vec<_> = e1.frame().column_iter().map(|v| v.into_owned() + &push * 0.5).collect();
        let candidate = Subspace::from_columns(&cols)?;
        let g = cocycle::uniqueness_diagnostic(gen, &w, &candidate, &report, 1, c.uniqueness_steps, &opts)?;
        let own = cocycle::uniqueness_diagnostic(gen, &w, e1, &report, 1, c.uniqueness_steps, &opts)?;
        rec.scalar("g_slope", cocycle::fit_log_slope(&g, 1e-300));
        rec.scalar("g_true_max", own.iter().copied().fold(0.0, f64::max));
        rec.series("g_decay", g);
    }
    if c.backward_steps > 0 {
        let i = c.backward_block.unwrap_or(blocks);
        let back = cocycle::backward_decay_check(gen, &w, &report, i, c.backward_steps, &opts)?;
        rec.count("backward_block", i);
        rec.scalar("backward_rate", back.rate);
        rec.series("backward_log_norms", back.log_norms);
    }
    Ok(())
}

fn run_interval(cfg: &RunConfig, sys: &RandomIntervalSystem, rec: &mut ResultRecord) -> Numeric<()> {
    let c = cfg.interval.as_ref().expect("validated");
    let opts = splitting_options(cfg);
    let chi = interval::chi_estimate(sys, c.chi_n, c.chi_samples);
    rec.scalar("chi", chi.chi);
    rec.scalar("kappa_star", chi.kappa_star);
    rec.scalar("chi_exact", interval::chi_exact(sys));
    rec.count("k", c.k);
    let w = sys.driving.sample_window(c.n_past, c.n_future + 1, 0);
    let acim = interval::random_acim(sys, &w, c.k, c.n_past, c.n_future, &opts)?;
    rec.scalar("kappa", acim.kappa);
    rec.scalar("lambda1", acim.lambda1);
    rec.count("d1", acim.d1);
    push_blocks(rec, &acim.report.exponents, &acim.report.multiplicities);
    if let Some(gap) = acim.refinement_gap {
        rec.scalar("refinement_gap", gap);
    }
    if acim.d1 == 1 {
        let density = &acim.densities[0];
        rec.scalar(
            "density_max_deviation_from_uniform",
            density.iter().map(|x| (x - 1.0).abs()).fold(0.0, f64::max),
        );
        rec.series("density", density.iter().copied().collect());
    }
    Ok(())
}

fn run_sft(cfg: &RunConfig, s: &SftSystem, rec: &mut ResultRecord) -> Numeric<()> {
    let c = cfg.sft.as_ref().expect("validated");
    let opts = splitting_options(cfg);
    let system = match s {
        SftSystem::Antisymmetric(profiles, d) => {
            let rep = sft::antisymmetric_example(c.theta, profiles, d, c.n)?;
            rec.scalar("lambda1", rep.lambda1);
            rec.scalar("lambda2", rep.lambda2);
            rec.scalar("identity_residual", rep.identity_residual);
            rec.scalar("stochastic", rep.stochastic as u8 as f64);
            rec.scalar("preserves_antisymmetry", rep.preserves_antisymmetry as u8 as f64);
            rec.scalar("preserves_monotonicity", rep.preserves_monotonicity as u8 as f64);
            rec.count("exceptional_blocks", rep.exceptional.len());
            rep.system
        }
        SftSystem::Weighted(system) => {
            let (gen, _) = system.generator()?;
            let w = system.driving.sample_window(0, c.n, 0);
            let est = cocycle::lyapunov_exponents(&gen, &w, c.n, gen.dim(), &opts)?;
            rec.scalar("lambda1", est.raw[0]);
            if let Some(l2) = est.raw.get(1) {
                rec.scalar("lambda2", *l2);
            }
            system.clone()
        }
    };
    rec.count("n", c.n);
    let nb = c.bounds_n;
    let w = system.driving.sample_window(0, nb, 0);
    let weights = system.along(&w, nb)?;
    let shift = &system.sft;
    let dist = sft::distortion_check(shift, &weights, nb, 8)?;
    let k = sft::lipschitz_constant(dist.d);
    let m = c.m_proj.unwrap_or(nb);
    let b = sft::norm_and_ic_bounds(shift, &weights, m, k, c.samples, m + 2, cfg.seed())?;
    let roots = (1..=nb)
        .map(|j| sft::rn(shift, &weights[..j]).map(|r| r.powf(1.0 / j as f64)))
        .collect::<Result<Vec<_>, _>>()?;
    rec.count("bounds_n", nb);
    rec.count("m_proj", m);
    rec.scalar("rn", b.rn);
    rec.scalar("distortion_d", dist.d);
    rec.scalar("distortion_proof_bound", dist.proof_bound);
    rec.scalar("k_ly", k);
    rec.scalar("op_norm_sampled", b.op_norm_sampled);
    rec.scalar("op_norm_upper", b.op_norm_upper);
    rec.scalar("ic_lower", b.ic_lower);
    rec.scalar("ic_upper_sampled", b.ic_upper_sampled);
    rec.scalar("ic_upper_bound", b.ic_upper_bound);
    rec.scalar("family_min_distance", b.family_min_distance);
    rec.scalar("family_certified", b.family_certified as u8 as f64);
    rec.scalar("kappa_estimate", b.ic_upper_sampled.ln() / nb as f64);
    rec.scalar("lambda_star_estimate", b.rn.ln() / nb as f64);
    rec.series("distortion_per_k", dist.per_k);
    rec.series("rn_roots", roots);
    Ok(())
}

fn run_counterexample(
    cfg: &RunConfig,
    a0: &DMatrix<f64>,
    a1: &DMatrix<f64>,
    d: &DrivingSystem,
    rec: &mut ResultRecord,
) -> Numeric<()> {
    let c = cfg.counterexample.as_ref().expect("validated");
    let opts = CounterexampleOptions {
        pairs: c.pairs,
        past_len: c.past_len,
        future_len: c.future_len,
        exponent_horizon: c.horizon,
        splitting: splitting_options(cfg),
    };
    let rep = cocycle::noncommuting_base_demo(a0, a1, d, &opts)?;
    rec.scalar("max_gap", rep.max_gap);
    rec.scalar("exponent_separation", rep.exponent_separation);
    rec.scalar("commutator_norm", rep.commutator_norm);
    rec.count("pairs", c.pairs);
    rec.series("pair_gaps", rep.pair_gaps.iter().map(|p| p.1).collect());
    Ok(())
}

fn run_lemmas(cfg: &RunConfig, cases: usize, rec: &mut ResultRecord) -> Numeric<()> {
    let outcomes = lemmas::run_suite(cases, cfg.seed());
    let mut failed = Vec::new();
    for o in &outcomes {
        rec.count(&format!("{}_cases", o.name), o.cases);
        rec.count(&format!("{}_failures", o.name), o.failures);
        rec.scalar(&format!("{}_worst", o.name), o.worst);
        if o.failures > 0 {
            failed.push(o.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(NumericFailure {
            name: "LemmaViolation".into(),
            message: format!("failed: {}", failed.join(", ")),
        })
    }
}
