//! CSV and manifest emission. Floats carry 17 significant digits so files
//! round-trip exactly; every file opens with a unit comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::Result;

/// 17 significant digits: exact f64 round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct CsvWriter {
    buffer: String,
}

impl CsvWriter {
    pub fn new(gamma_ref: f64, columns: &[&str]) -> Self {
        let mut buffer = String::new();
        let _ = writeln!(
            buffer,
            "# units: frequencies in Gamma_ref = {}, times in 1/Gamma_ref",
            fmt_f64(gamma_ref)
        );
        let _ = writeln!(buffer, "{}", columns.join(","));
        CsvWriter { buffer }
    }

    pub fn row(&mut self, values: &[f64]) {
        let line: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(self.buffer, "{}", line.join(","));
    }

    pub fn contents(&self) -> &str {
        &self.buffer
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &self.buffer)?;
        Ok(())
    }
}

/// `t,re,im` correlation table.
pub fn correlation_csv(
    gamma_ref: f64,
    times: &[f64],
    values: &[Complex64],
    path: &Path,
) -> Result<()> {
    let mut w = CsvWriter::new(gamma_ref, &["t", "re", "im"]);
    for (&t, v) in times.iter().zip(values) {
        w.row(&[t, v.re, v.im]);
    }
    w.write(path)
}

pub fn write_json(value: &serde_json::Value, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, format!("{}\n", serde_json::to_string_pretty(value).expect("json")))?;
    Ok(())
}

pub fn out_path(dir: &Path, prefix: &str, suffix: &str) -> PathBuf {
    dir.join(format!("{prefix}_{suffix}"))
}
