//! Configuration-driven runs, sweeps and plot-data emission for the
//! `oseledets` library.

pub mod config;
pub mod lemmas;
pub mod record;
pub mod run;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use thiserror::Error;

pub use config::RunConfig;
pub use record::{ResultRecord, Status};
pub use run::run;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl HarnessError {
    /// Process exit code: 2 for input problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numeric(_) => 3,
            _ => 2,
        }
    }
}

/// Sweep axis: dotted config key and its values.
pub type GridAxis = (String, Vec<toml::Value>);

/// Parses `key=v1,v2,...`.
pub fn parse_grid_axis(text: &str) -> Result<GridAxis, HarnessError> {
    let (key, values) = text
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("grid `{text}` is not KEY=V1,V2,...")))?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| config::parse_value(v.trim()))
        .collect();
    Ok((key.trim().to_string(), values))
}

/// Grid points in row-major order (the first axis varies slowest).
pub fn grid_points(grid: &[GridAxis]) -> Vec<Vec<(String, toml::Value)>> {
    if grid.is_empty() || grid.iter().any(|(_, v)| v.is_empty()) {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for (key, values) in grid {
        points = points
            .into_iter()
            .flat_map(|p: Vec<(String, toml::Value)>| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

/// One record per grid point, in grid order. Point `i` runs with seed
/// `seed ^ i`. Failed points (configuration or numerical) become error
/// records rather than aborting the sweep.
pub fn sweep(template: &toml::Table, grid: &[GridAxis]) -> Result<Vec<ResultRecord>, HarnessError> {
    let base_seed = template
        .get("seed")
        .and_then(|v| v.as_integer())
        .ok_or_else(|| HarnessError::Config("seed is required".into()))? as u64;
    let points = grid_points(grid);
    let kind = template.get("kind").and_then(|v| v.as_str()).unwrap_or("unknown").to_string();
    Ok(points
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let seed = base_seed ^ i as u64;
            let mut table = template.clone();
            let labels: BTreeMap<String, String> = point.iter().map(|(k, v)| (k.clone(), v.to_string())).collect();
            let built = point
                .iter()
                .try_for_each(|(k, v)| config::set_key(&mut table, k, v.clone()))
                .and_then(|_| config::set_key(&mut table, "seed", toml::Value::Integer(seed as i64)))
                .and_then(|_| RunConfig::from_table(table))
                .and_then(|cfg| run(&cfg));
            let mut rec = built.unwrap_or_else(|e| {
                let mut r = ResultRecord::new(&kind, String::new(), seed);
                r.fail("ConfigError", e.to_string());
                r
            });
            rec.index = Some(i);
            rec.grid = labels;
            rec
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Tab-separated table of the selected fields, one header row, columns in
/// selector order. Scalars, grid keys and `index`, `seed`, `kind`, `status`
/// give one row per record; selecting a series switches to long format with
/// one row per series entry, where the pseudo-field `k` is the entry index
/// (outside long format `k` is an ordinary scalar, such as the Ulam bin count).
pub fn emit_plotdata(records: &[ResultRecord], selector: &[String]) -> Result<String, HarnessError> {
    const META: [&str; 4] = ["index", "seed", "kind", "status"];
    let mut scalars = BTreeSet::new();
    let mut series = BTreeSet::new();
    let mut grid = BTreeSet::new();
    for r in records {
        scalars.extend(r.scalars.keys().cloned());
        series.extend(r.series.keys().cloned());
        grid.extend(r.grid.keys().cloned());
        scalars.extend(r.dropped.iter().cloned());
    }
    for f in selector {
        let known = META.contains(&f.as_str())
            || f == "k"
            || scalars.contains(f)
            || series.contains(f)
            || grid.contains(f);
        if !known {
            return Err(HarnessError::UnknownField(f.clone()));
        }
    }
    let long = selector.iter().any(|f| series.contains(f));
    let mut out = selector.join("\t");
    out.push('\n');
    for r in records {
        let value = |f: &str, k: Option<usize>| -> String {
            match f {
                "index" => r.index.map(|i| i.to_string()).unwrap_or_else(|| "NA".into()),
                "seed" => r.seed.to_string(),
                "kind" => r.kind.clone(),
                "status" => if r.is_ok() { "ok" } else { "error" }.into(),
                "k" if long => k.map(|k| k.to_string()).unwrap_or_else(|| "NA".into()),
                _ => {
                    if let Some(g) = r.grid.get(f) {
                        g.clone()
                    } else if let Some(s) = r.series.get(f) {
                        cell(k.and_then(|k| s.get(k).copied()))
                    } else {
                        cell(r.scalars.get(f).copied())
                    }
                }
            }
        };
        let rows = if long {
            selector
                .iter()
                .filter_map(|f| r.series.get(f).map(Vec::len))
                .max()
                .unwrap_or(0)
        } else {
            1
        };
        for k in 0..rows {
            let idx = if long { Some(k) } else { None };
            let line: Vec<String> = selector.iter().map(|f| value(f, idx)).collect();
            out.push_str(&line.join("\t"));
            out.push('\n');
        }
    }
    Ok(out)
}
