//! Versioned CSV tables, JSON sidecars and configuration hashes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::{target_fidelity, TargetState};
use crate::optimizer::OptimizationReport;
use crate::propagation::SimulationResult;

pub const TRAJECTORY_SCHEMA: &str = "optoprep.trajectory/1";
pub const SIDECAR_SCHEMA: &str = "optoprep.sidecar/1";
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the compact JSON form of `value`, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes a CSV whose first line is `# <schema> columns=<n>`.
pub fn write_table(path: &Path, schema: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "# {schema} columns={}", header.len())?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::Contract(format!("row with {} fields for {} columns", r.len(), header.len())));
        }
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Reads a table written by [`write_table`], checking the schema line.
pub fn read_table(path: &Path, schema: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let (first, body) = text.split_once('\n').ok_or_else(|| Error::Contract("empty table".into()))?;
    if !first.starts_with(&format!("# {schema} ")) {
        return Err(Error::Contract(format!("expected schema {schema}, found {first:?}")));
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()).map_err(csv_err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// Floats are written with full round-trip precision.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Trajectory table: time (in `T`), one population column per Fock level,
/// and the target fidelity where it can be evaluated.
pub fn write_trajectory(path: &Path, result: &SimulationResult, target: Option<&TargetState>) -> Result<()> {
    let d = result.cavity_dim();
    let mut header = vec!["time_T".to_string()];
    header.extend((0..d).map(|n| format!("pop_{n}")));
    header.push("fidelity".into());
    let states_per_snapshot = result.reduced_cavity_states.len() == result.times.len();
    let mut rows = Vec::with_capacity(result.times.len());
    for (i, (t, pops)) in result.times.iter().zip(&result.cavity_populations).enumerate() {
        let mut row = vec![num(*t)];
        row.extend(pops.iter().map(|p| num(*p)));
        let fid = match (target, states_per_snapshot) {
            (Some(tg), true) => num(target_fidelity(&result.reduced_cavity_states[i], tg)?.0),
            (Some(TargetState::Fock { n }), false) if *n < d => num(pops[*n].clamp(0.0, 1.0).sqrt()),
            _ => String::new(),
        };
        row.push(fid);
        rows.push(row);
    }
    write_table(path, TRAJECTORY_SCHEMA, &header, &rows)
}

/// Metadata written next to every output table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: String,
    pub code_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
    pub warnings: Vec<String>,
}

impl Sidecar {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Result<Self> {
        Ok(Self {
            schema: SIDECAR_SCHEMA.into(),
            code_version: CODE_VERSION.into(),
            command: command.into(),
            config: serde_json::to_value(config)?,
            config_hash: config_hash(config)?,
            outputs: Vec::new(),
            results: serde_json::Value::Null,
            warnings: Vec::new(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn read_report(path: &Path) -> Result<OptimizationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read pulse file {}: {e}", path.display())))?;
    OptimizationReport::from_json(&text)
}

pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    Ok(dir.to_path_buf())
}
