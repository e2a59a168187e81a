//! Versioned JSON reports and CSV plot-data tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    /// Command line (or protocol name) that produced the report.
    pub command: Vec<String>,
    /// Full configuration, including every seed.
    pub config: Value,
    /// SHA-256 of the canonical JSON form of `config`.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub results: Value,
    pub timing: Timing,
    pub warnings: Vec<String>,
}

fn to_value(x: &impl Serialize) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| CliError::input(format!("cannot serialize: {e}")))
}

/// Hex SHA-256 of the canonical serialization. `serde_json` maps keep keys
/// sorted, so equal configurations hash equally.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON values always serialize");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ReportDocument {
    pub fn new(
        command: Vec<String>,
        config: &impl Serialize,
        seeds: BTreeMap<String, u64>,
        results: &impl Serialize,
        elapsed_seconds: f64,
        warnings: Vec<String>,
    ) -> CliResult<Self> {
        let config = to_value(config)?;
        Ok(ReportDocument {
            schema_version: SCHEMA_VERSION,
            command,
            config_hash: config_hash(&config),
            config,
            seeds,
            results: to_value(results)?,
            timing: Timing { elapsed_seconds },
            warnings,
        })
    }

    /// True if the embedded configuration still hashes to `config_hash`.
    pub fn hash_matches(&self) -> bool {
        config_hash(&self.config) == self.config_hash
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let io = |source| CliError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut f = BufWriter::new(File::create(path).map_err(io)?);
        f.write_all(self.to_json().as_bytes()).map_err(io)?;
        f.write_all(b"\n").map_err(io)?;
        f.flush().map_err(io)
    }
}

/// A numeric table written as CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlotTable {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        PlotTable {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn write_csv(&self, out: impl Write) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| CliError::input(format!("writing {}: {e}", self.file_name()));
        w.write_record(&self.header).map_err(err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string())).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::input(format!("writing {}: {e}", self.file_name())))
    }

    pub fn write_to_dir(&self, dir: &Path) -> CliResult<()> {
        let path = dir.join(self.file_name());
        let f = File::create(&path).map_err(|source| CliError::Io { path, source })?;
        self.write_csv(BufWriter::new(f))
    }
}
