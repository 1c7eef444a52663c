use std::io::Write;
use std::path::Path;

use serde_json::{Map, Value};

use crate::commands::Artifact;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// CSV cells become JSON numbers where they parse as finite floats; `-inf`
/// and friends stay strings.
fn cell_value(s: &str) -> Value {
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        _ => s
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite() && !s.contains('/'))
            .and_then(serde_json::Number::from_f64)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(s.to_string())),
    }
}

pub fn render(artifact: &Artifact, format: Format) -> Result<Vec<u8>, CliError> {
    match (artifact, format) {
        (Artifact::Csv { header, rows }, Format::Csv) => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let to_io = |e: csv::Error| CliError::Io(std::io::Error::other(e));
            w.write_record(header).map_err(to_io)?;
            for row in rows {
                w.write_record(row).map_err(to_io)?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.into_error()))
        }
        (Artifact::Csv { header, rows }, Format::Json) => {
            let records: Vec<Value> = rows
                .iter()
                .map(|row| {
                    let m: Map<String, Value> = header
                        .iter()
                        .cloned()
                        .zip(row.iter().map(|c| cell_value(c)))
                        .collect();
                    Value::Object(m)
                })
                .collect();
            json_bytes(&Value::Array(records))
        }
        (Artifact::Json(v), _) => json_bytes(v),
    }
}

pub fn json_bytes(v: &Value) -> Result<Vec<u8>, CliError> {
    let mut out = serde_json::to_vec_pretty(v).map_err(|e| CliError::Io(e.into()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn emit(bytes: &[u8], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, bytes)?;
        }
        None => std::io::stdout().lock().write_all(bytes)?,
    }
    Ok(())
}
