//! Deterministic CSV/JSON table writers.
//!
//! All numbers go through fixed-format helpers so a rerun with the same
//! configuration and seed reproduces the files byte for byte.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Scientific notation with six significant decimals (probabilities, w).
pub fn sci(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    format!("{x:.6e}")
}

/// Currency-like quantities.
pub fn money(x: f64) -> String {
    format!("{x:.2}")
}

/// Dimensionless values with millirange resolution.
pub fn val(x: f64) -> String {
    format!("{x:.6}")
}

/// Repair year or the no-repair marker.
pub fn repair_year(t: Option<usize>) -> String {
    match t {
        Some(t) => t.to_string(),
        None => "no-repair".to_string(),
    }
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Other(format!("json serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}
