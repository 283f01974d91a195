//! Error reporting, exit codes and output writers.

use esreg::EsregError;
use serde::Serialize;
use serde_json::{json, Value};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Input,
    Fit,
    Covariance,
    Io,
}

#[derive(Debug, Clone)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Input, message: message.into() }
    }

    pub fn fit(e: EsregError) -> Self {
        Self { kind: ErrorKind::Fit, message: e.to_string() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { kind: ErrorKind::Io, message: message.into() }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Input => 2,
            ErrorKind::Fit | ErrorKind::Io => 3,
            ErrorKind::Covariance => 4,
        }
    }

    /// Machine-readable error object on stderr.
    pub fn emit(&self) {
        let err = json!({
            "error": { "kind": self.kind, "message": self.message, "exit_code": self.exit_code() }
        });
        eprintln!("{}", serde_json::to_string(&err).expect("serializable"));
    }
}

impl From<EsregError> for CliError {
    fn from(e: EsregError) -> Self {
        match e {
            EsregError::InvalidLevel(_) | EsregError::InvalidInput(_) | EsregError::Dimension(_) => {
                CliError::input(e.to_string())
            }
            other => CliError::fit(other),
        }
    }
}

pub fn metadata() -> Value {
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({ "version": env!("CARGO_PKG_VERSION"), "generated_unix_time": now })
}

/// Non-finite numbers become JSON null.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "NaN".into()
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let io_err = |e: csv::Error| CliError::io(format!("cannot write {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(header).map_err(io_err)?;
    for r in rows {
        w.write_record(r).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

/// `PREFIX` + `suffix`, keeping the directory part of the prefix.
pub fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}
