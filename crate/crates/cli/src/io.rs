//! CSV readers for regression data, return series and forecast tracks.

use crate::report::CliError;
use esreg::evaluate::{ForecastDay, ForecastTrack, ReturnSeries};
use std::path::Path;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))
}

fn line_of(rec: &csv::StringRecord, fallback: usize) -> u64 {
    rec.position().map(|p| p.line()).unwrap_or(fallback as u64)
}

fn parse_field(rec: &csv::StringRecord, j: usize, path: &Path, line: u64) -> Result<f64, CliError> {
    let raw = rec.get(j).unwrap_or("");
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::input(format!(
            "{} line {line}: column {} is not a finite number: '{raw}'",
            path.display(),
            j + 1
        ))),
    }
}

/// All-numeric table: header names plus rows.
pub fn read_numeric(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::input(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec, i + 2);
        let row = (0..rec.len()).map(|j| parse_field(&rec, j, path, line)).collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    Ok((header, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    let msg = match e.kind() {
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            format!("expected {expected_len} fields, found {len}")
        }
        _ => e.to_string(),
    };
    CliError::input(format!("{} line {line}: {msg}", path.display()))
}

/// Daily series with columns `date, return, rv`.
pub fn read_daily(path: &Path) -> Result<ReturnSeries, CliError> {
    let mut rdr = reader(path)?;
    let (mut dates, mut ret, mut rv) = (Vec::new(), Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec, i + 2);
        if rec.len() != 3 {
            return Err(CliError::input(format!("{} line {line}: expected date,return,rv", path.display())));
        }
        dates.push(rec[0].to_string());
        ret.push(parse_field(&rec, 1, path, line)?);
        rv.push(parse_field(&rec, 2, path, line)?);
    }
    Ok(ReturnSeries::new(dates, ret, rv)?)
}

/// Intraday returns with columns `date, return`, aggregated per date.
pub fn read_intraday(path: &Path) -> Result<ReturnSeries, CliError> {
    let mut rdr = reader(path)?;
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec, i + 2);
        if rec.len() != 2 {
            return Err(CliError::input(format!("{} line {line}: expected date,return", path.display())));
        }
        records.push((rec[0].to_string(), parse_field(&rec, 1, path, line)?));
    }
    Ok(ReturnSeries::from_intraday(&records)?)
}

/// Forecast track with columns `date, var, es, realized`.
pub fn read_track(path: &Path) -> Result<ForecastTrack, CliError> {
    let mut rdr = reader(path)?;
    let mut days = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = line_of(&rec, i + 2);
        if rec.len() != 4 {
            return Err(CliError::input(format!("{} line {line}: expected date,var,es,realized", path.display())));
        }
        days.push(ForecastDay {
            date: rec[0].to_string(),
            var: parse_field(&rec, 1, path, line)?,
            es: parse_field(&rec, 2, path, line)?,
            realized: parse_field(&rec, 3, path, line)?,
        });
    }
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ForecastTrack { label, days, gaps: Vec::new() })
}
