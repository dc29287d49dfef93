//! Run provenance: every command writes `run.json` with the resolved command,
//! the SHA-256 of each input file and the metrics it reported. Re-executing
//! the recorded command on the same inputs reproduces the metrics exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::error::{CliError, CliResult};

pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub tool: String,
    pub command: Command,
    /// Specs and configs as resolved after defaults and overrides.
    #[serde(default)]
    pub resolved: Value,
    /// Input path to lowercase hex SHA-256.
    pub inputs: BTreeMap<PathBuf, String>,
    pub metrics: Value,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn hash_inputs(files: &[PathBuf]) -> CliResult<BTreeMap<PathBuf, String>> {
    files.iter().map(|p| Ok((p.clone(), sha256_file(p)?))).collect()
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

/// Numeric leaves of `metrics` as `(dotted.name, value)` pairs.
pub fn flatten_metrics(metrics: &Value) -> Vec<(String, f64)> {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, f64)>) {
        let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
        match v {
            Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    out.push((prefix.to_string(), x));
                }
            }
            Value::Bool(b) => out.push((prefix.to_string(), f64::from(u8::from(*b)))),
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    walk(&join(&i.to_string()), item, out);
                }
            }
            Value::Object(map) => {
                for (k, item) in map {
                    walk(&join(k), item, out);
                }
            }
            Value::Null | Value::String(_) => {}
        }
    }
    let mut out = Vec::new();
    walk("", metrics, &mut out);
    out
}

pub fn write_metrics_csv(metrics: &Value, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(["name", "value"]).map_err(|e| CliError::csv(path, e))?;
    for (name, value) in flatten_metrics(metrics) {
        w.write_record([name, value.to_string()]).map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Names of metrics whose values differ between two runs, compared bitwise.
pub fn metric_differences(a: &Value, b: &Value) -> Vec<String> {
    let fa = flatten_metrics(a);
    let fb: BTreeMap<String, f64> = flatten_metrics(b).into_iter().collect();
    let mut diffs: Vec<String> = fa
        .iter()
        .filter(|(k, v)| fb.get(k).map(|w| w.to_bits()) != Some(v.to_bits()))
        .map(|(k, _)| k.clone())
        .collect();
    if fa.len() != fb.len() {
        diffs.push(format!("metric count {} vs {}", fa.len(), fb.len()));
    }
    diffs
}
