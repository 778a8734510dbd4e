//! Result records, one JSON object per line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::HarnessError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config_digest: String,
    pub kind: String,
    pub seed: u64,
    /// Position in a sweep.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    /// Grid values of a sweep point, as TOML text.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grid: BTreeMap<String, String>,
    pub status: Status,
    /// Module error name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub scalars: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
    /// Fields left out because a value was not finite.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl ResultRecord {
    pub fn new(kind: &str, digest: String, seed: u64) -> Self {
        ResultRecord {
            schema_version: SCHEMA_VERSION,
            config_digest: digest,
            kind: kind.to_string(),
            seed,
            index: None,
            grid: BTreeMap::new(),
            status: Status::Ok,
            error: None,
            message: None,
            scalars: BTreeMap::new(),
            series: BTreeMap::new(),
            dropped: Vec::new(),
            wall_time: None,
        }
    }

    pub fn scalar(&mut self, name: &str, v: f64) {
        if v.is_finite() {
            self.scalars.insert(name.to_string(), v);
        } else {
            self.dropped.push(name.to_string());
        }
    }

    pub fn count(&mut self, name: &str, v: usize) {
        self.scalar(name, v as f64);
    }

    pub fn series(&mut self, name: &str, v: Vec<f64>) {
        if v.iter().all(|x| x.is_finite()) {
            self.series.insert(name.to_string(), v);
        } else {
            self.dropped.push(name.to_string());
        }
    }

    pub fn fail(&mut self, name: &str, message: String) {
        self.status = Status::Error;
        self.error = Some(name.to_string());
        self.message = Some(message);
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }

    pub fn from_line(line: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(line).map_err(|e| HarnessError::Config(format!("bad record: {e}")))
    }
}

/// Writes records to `path`, or stdout when `None`.
pub fn write_records(records: &[ResultRecord], path: Option<&Path>) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display()))),
        None => write_stdout(&text),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
pub fn write_stdout(text: &str) -> Result<(), HarnessError> {
    match std::io::stdout().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(HarnessError::Io(e.to_string())),
        _ => Ok(()),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ResultRecord>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(ResultRecord::from_line).collect()
}
