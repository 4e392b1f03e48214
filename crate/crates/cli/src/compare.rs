//! `confes compare <run>...`: mean and sample standard deviation of the
//! last-window test accuracy per (method, noise) cell, over every seed of
//! every listed run. Runs must share the same data configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::manifest::Manifest;
use crate::CliError;

pub const COMPARE_CSV_HEADER: &str = "method,noise,n,mean,std";

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub method: String,
    pub noise: String,
    pub values: Vec<f64>,
}

impl Cell {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Sample standard deviation; `None` for a single value.
    pub fn std(&self) -> Option<f64> {
        let n = self.values.len();
        if n < 2 {
            return None;
        }
        let m = self.mean();
        let ss: f64 = self.values.iter().map(|v| (v - m) * (v - m)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

fn required<'a>(m: &'a Manifest, key: &str, dir: &Path) -> Result<&'a str, CliError> {
    m.get(key)
        .ok_or_else(|| CliError::Manifest(format!("{}: manifest has no '{key}'", dir.display())))
}

/// Cells sorted by (method, noise).
pub fn collect(dirs: &[PathBuf]) -> Result<Vec<Cell>, CliError> {
    if dirs.is_empty() {
        return Err(CliError::Config("no run directories given".into()));
    }
    let mut hash: Option<(String, &Path)> = None;
    let mut cells: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for dir in dirs {
        let m = Manifest::read(dir)?;
        if required(&m, "command", dir)? != "run" {
            return Err(CliError::Incompatible(format!(
                "{} is not a training run",
                dir.display()
            )));
        }
        let h = required(&m, "data_config_hash", dir)?;
        match &hash {
            None => hash = Some((h.to_owned(), dir)),
            Some((first, first_dir)) if first != h => {
                return Err(CliError::Incompatible(format!(
                    "{} and {} use different data configurations",
                    first_dir.display(),
                    dir.display()
                )))
            }
            Some(_) => {}
        }
        let noise = required(&m, "noise", dir)?.to_owned();
        for (key, value) in m.with_prefix("result.") {
            let Some(rest) = key.strip_suffix(".last_window_acc") else {
                continue;
            };
            let method = rest
                .split_once('.')
                .map(|(_, method)| method)
                .ok_or_else(|| {
                    CliError::Manifest(format!("{}: bad result key '{key}'", dir.display()))
                })?;
            let v: f64 = value.parse().map_err(|_| {
                CliError::Manifest(format!("{}: bad value for '{key}'", dir.display()))
            })?;
            cells
                .entry((method.to_owned(), noise.clone()))
                .or_default()
                .push(v);
        }
    }
    Ok(cells
        .into_iter()
        .map(|((method, noise), values)| Cell {
            method,
            noise,
            values,
        })
        .collect())
}

pub fn to_csv(cells: &[Cell]) -> String {
    let mut out = String::from(COMPARE_CSV_HEADER);
    out.push('\n');
    for c in cells {
        let std = c.std().map(|s| format!("{s:.16e}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{std}",
            c.method,
            c.noise,
            c.values.len(),
            c.mean()
        );
    }
    out
}

pub fn to_table(cells: &[Cell]) -> String {
    let rows: Vec<[String; 4]> = cells
        .iter()
        .map(|c| {
            let acc = match c.std() {
                Some(s) => format!("{:.2} +- {:.2}", 100.0 * c.mean(), 100.0 * s),
                None => format!("{:.2}", 100.0 * c.mean()),
            };
            [
                c.method.clone(),
                c.noise.clone(),
                c.values.len().to_string(),
                acc,
            ]
        })
        .collect();
    let head = ["method", "noise", "n", "accuracy (%)"];
    let mut width = head.map(str::len);
    for r in &rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: [&str; 4]| {
        let s = cols
            .iter()
            .zip(width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(head);
    for r in &rows {
        line([&r[0], &r[1], &r[2], &r[3]]);
    }
    out
}
