//! Run configuration: TOML text with one section per system kind.
//!
//! ```toml
//! kind = "cocycle"
//! seed = 7
//!
//! [driving]
//! probabilities = [0.5, 0.5]
//!
//! [cocycle]
//! matrices = [[[2.0, 0.0], [0.0, 0.5]], [[0.5, 0.0], [0.0, 2.0]]]
//! n = 100000
//! ```
//!
//! See `docs/config.md` for the full grammar.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Cocycle,
    Interval,
    Sft,
    Counterexample,
    LemmaSuite,
}

impl Kind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Cocycle => "cocycle",
            Kind::Interval => "interval",
            Kind::Sft => "sft",
            Kind::Counterexample => "counterexample",
            Kind::LemmaSuite => "lemma-suite",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: Option<u64>,
    #[serde(default)]
    pub driving: DrivingConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub cocycle: Option<CocycleConfig>,
    pub interval: Option<IntervalConfig>,
    pub sft: Option<SftConfig>,
    pub counterexample: Option<CounterexampleConfig>,
    #[serde(rename = "lemma-suite")]
    pub lemma_suite: Option<LemmaSuiteConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Driving law. Without either field the law is uniform over the alphabet.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingConfig {
    pub probabilities: Option<Vec<f64>>,
    pub transition: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub gap: f64,
    pub convergence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gap: oseledets::cocycle::DEFAULT_GAP_TOLERANCE,
            convergence: oseledets::cocycle::DEFAULT_CONVERGENCE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Record file (newline-delimited JSON); stdout when absent.
    pub path: Option<String>,
    /// Include `wall_time` in records. Off by default so that reruns are
    /// byte-identical.
    pub wall_time: bool,
}

pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CocycleConfig {
    pub matrices: Vec<MatrixRows>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_window")]
    pub n_past: usize,
    #[serde(default = "default_window")]
    pub n_future: usize,
    #[serde(default = "yes")]
    pub splitting: bool,
    /// Steps of the uniqueness diagnostic for a perturbed `E_1`; 0 skips it.
    #[serde(default)]
    pub uniqueness_steps: usize,
    /// Steps of the backward decay check; 0 skips it.
    #[serde(default)]
    pub backward_steps: usize,
    /// Block for the backward check (1-based); the last block by default.
    pub backward_block: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSpec {
    /// `doubling`, `tripling`, `tent`, `identity`, `beta:<b>`, `linear:<slope>:<intercept>`
    /// or `full:<k>`.
    Named(String),
    /// Affine branches `[a, b, slope, intercept]`.
    Branches { branches: Vec<[f64; 4]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalConfig {
    pub maps: Vec<MapSpec>,
    #[serde(default = "default_bins")]
    pub k: usize,
    #[serde(default = "default_window")]
    pub n_past: usize,
    #[serde(default = "default_window")]
    pub n_future: usize,
    #[serde(default = "default_n")]
    pub chi_n: usize,
    #[serde(default = "default_chi_samples")]
    pub chi_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SftConfig {
    pub theta: f64,
    /// Full shift on this many symbols when `transitions` is absent.
    #[serde(default = "default_symbols")]
    pub symbols: usize,
    pub transitions: Option<Vec<Vec<u8>>>,
    /// Antisymmetric weights `1/2 +- a (x_0 - 1/2)`, one amplitude per driving symbol.
    pub amplitudes: Option<Vec<f64>>,
    /// Explicit weights, one value list per driving symbol, indexed by word
    /// code of length `weight_depth`.
    pub weights: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_weight_depth")]
    pub weight_depth: usize,
    /// Steps for the exponents of the transfer-matrix cocycle.
    #[serde(default = "default_n")]
    pub n: usize,
    /// `n` for the norm and index-of-compactness bounds.
    #[serde(default = "default_bounds_n")]
    pub bounds_n: usize,
    /// Projection depth; `bounds_n` by default.
    pub m_proj: Option<usize>,
    #[serde(default = "default_sft_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub a0: MatrixRows,
    pub a1: MatrixRows,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_window")]
    pub past_len: usize,
    #[serde(default = "default_window")]
    pub future_len: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSuiteConfig {
    /// Randomized cases per lemma.
    pub cases: usize,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        LemmaSuiteConfig { cases: 64 }
    }
}

fn default_n() -> usize {
    10_000
}
fn default_window() -> usize {
    200
}
fn default_bins() -> usize {
    64
}
fn default_chi_samples() -> usize {
    16
}
fn default_symbols() -> usize {
    2
}
fn default_weight_depth() -> usize {
    2
}
fn default_bounds_n() -> usize {
    6
}
fn default_sft_samples() -> usize {
    200
}
fn default_pairs() -> usize {
    50
}
fn default_horizon() -> usize {
    100_000
}
fn yes() -> bool {
    true
}

/// Parses TOML text into a table, for sweeps that edit keys before validation.
pub fn parse_table(text: &str) -> Result<toml::Table, HarnessError> {
    text.parse::<toml::Table>().map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn read_table(path: &Path) -> Result<toml::Table, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    parse_table(&text)
}

/// Sets a dotted key (`interval.k`), creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), HarnessError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a grid or override value as TOML, falling back to a string.
pub fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self, HarnessError> {
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        Self::from_table(parse_table(text)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated configs carry a seed")
    }

    /// SHA-256 of the canonical JSON form of the configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("configs serialize");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.seed.is_none() {
            return bad("seed is required".into());
        }
        let t = &self.tolerances;
        if !(t.gap > 0.0 && t.convergence > 0.0) {
            return bad("tolerances must be > 0".into());
        }
        if let Some(p) = &self.driving.probabilities {
            if p.is_empty() || p.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad("driving.probabilities must be non-negative".into());
            }
        }
        if let Some(m) = &self.driving.transition {
            square(m, "driving.transition")?;
        }
        match self.kind {
            Kind::Cocycle => {
                let c = section(&self.cocycle, "cocycle")?;
                if c.matrices.is_empty() {
                    return bad("cocycle.matrices is empty".into());
                }
                let d = square(&c.matrices[0], "cocycle.matrices")?;
                for m in &c.matrices {
                    if square(m, "cocycle.matrices")? != d {
                        return bad("cocycle matrices differ in size".into());
                    }
                }
                positive(c.n, "cocycle.n")?;
                positive(c.n_past, "cocycle.n_past")?;
                positive(c.n_future, "cocycle.n_future")?;
            }
            Kind::Interval => {
                let c = section(&self.interval, "interval")?;
                if c.maps.is_empty() {
                    return bad("interval.maps is empty".into());
                }
                positive(c.k, "interval.k")?;
                positive(c.chi_n, "interval.chi_n")?;
                positive(c.chi_samples, "interval.chi_samples")?;
            }
            Kind::Sft => {
                let c = section(&self.sft, "sft")?;
                if !(c.theta > 0.0 && c.theta < 1.0) {
                    return bad(format!("sft.theta = {} not in (0, 1)", c.theta));
                }
                if c.amplitudes.is_some() == c.weights.is_some() {
                    return bad("sft needs exactly one of amplitudes, weights".into());
                }
                positive(c.n, "sft.n")?;
                positive(c.bounds_n, "sft.bounds_n")?;
                positive(c.weight_depth, "sft.weight_depth")?;
            }
            Kind::Counterexample => {
                let c = section(&self.counterexample, "counterexample")?;
                if square(&c.a0, "counterexample.a0")? != square(&c.a1, "counterexample.a1")? {
                    return bad("counterexample matrices differ in size".into());
                }
                positive(c.pairs, "counterexample.pairs")?;
                positive(c.horizon, "counterexample.horizon")?;
            }
            Kind::LemmaSuite => {
                if let Some(c) = &self.lemma_suite {
                    positive(c.cases, "lemma-suite.cases")?;
                }
            }
        }
        Ok(())
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T, HarnessError> {
    s.as_ref().ok_or_else(|| HarnessError::Config(format!("missing [{name}] section")))
}

fn positive(v: usize, name: &str) -> Result<(), HarnessError> {
    if v == 0 {
        return Err(HarnessError::Config(format!("{name} must be positive")));
    }
    Ok(())
}

fn square(m: &MatrixRows, name: &str) -> Result<usize, HarnessError> {
    let d = m.len();
    if d == 0 || m.iter().any(|r| r.len() != d) || m.iter().flatten().any(|x| !x.is_finite()) {
        return Err(HarnessError::Config(format!("{name}: expected a finite square matrix")));
    }
    Ok(d)
}

pub fn to_matrix(m: &MatrixRows) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| m[i][j])
}
