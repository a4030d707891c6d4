//! Diagnostics table, CSV and plot files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::experiments::plot::{LinePlot, Series};
use crate::experiments::RunRecord;
use crate::trajectory::{Quantity, Trajectory};

pub const CSV_FILE: &str = "diagnostics.csv";
pub const SNAPSHOT_FILE: &str = "config.snapshot";

/// Plot files and the CSV columns each one draws.
pub const PLOT_FILES: [(&str, &str, &[&str]); 4] = [
    (
        "state_errors.svg",
        "state-space errors",
        &["e2_mean", "r2_mean"],
    ),
    (
        "mapped_errors.svg",
        "mapped errors",
        &["ae2_mean", "ar2_mean"],
    ),
    ("misfit.svg", "data misfit", &["phi_mean", "theta2_mean"]),
    (
        "deviation_matrices.svg",
        "deviation matrices",
        &["e_fro", "f_fro", "r_fro"],
    ),
];

/// One row per recorded time: `t`, then mean/min/max of each per-member
/// quantity, then the Frobenius norms of `E`, `F`, `R`. Truth-dependent
/// columns appear only when the truth is known.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl DiagnosticsTable {
    pub fn columns(has_truth: bool) -> Vec<String> {
        let mut header = vec!["t".to_string()];
        for q in Quantity::ALL {
            if q.needs_truth() && !has_truth {
                continue;
            }
            for agg in ["mean", "min", "max"] {
                header.push(format!("{}_{agg}", q.name()));
            }
        }
        if has_truth {
            header.extend(["e_fro", "f_fro", "r_fro"].map(String::from));
        }
        header
    }

    pub fn from_trajectory(traj: &Trajectory, has_truth: bool) -> Self {
        let header = Self::columns(has_truth);
        let rows = traj
            .diagnostics
            .iter()
            .map(|d| {
                let mut row = vec![d.t];
                for q in Quantity::ALL {
                    if q.needs_truth() && !has_truth {
                        continue;
                    }
                    let a = d.aggregate(q);
                    row.extend(match a {
                        Some(a) => [a.mean, a.min, a.max],
                        None => [f64::NAN; 3],
                    });
                }
                if has_truth {
                    row.extend(match d.matrices {
                        Some(m) => [m.e, m.f, m.r],
                        None => [f64::NAN; 3],
                    });
                }
                row
            })
            .collect();
        Self { header, rows }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// CSV text; numbers use the shortest representation that round-trips.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
    }

    /// Log-log plot of the named columns against `t`.
    pub fn plot(&self, title: &str, columns: &[&str]) -> LinePlot {
        let t = self.column("t").unwrap_or_default();
        let series = columns
            .iter()
            .filter_map(|c| {
                let ys = self.column(c)?;
                Some(Series {
                    label: c.to_string(),
                    points: t.iter().copied().zip(ys).collect(),
                })
            })
            .collect();
        LinePlot {
            title: title.to_string(),
            x_label: "t".into(),
            y_label: "value".into(),
            log_x: true,
            log_y: true,
            series,
        }
    }
}

/// Writes the CSV, the config snapshot and the plots into `dir`, returning
/// the paths written.
pub fn emit_outputs(rec: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let table = rec.table();
    let mut written = Vec::new();
    let csv_path = dir.join(CSV_FILE);
    fs::write(&csv_path, table.to_csv()?)?;
    written.push(csv_path);
    let snap = dir.join(SNAPSHOT_FILE);
    fs::write(&snap, &rec.snapshot)?;
    written.push(snap);
    for (file, title, cols) in PLOT_FILES {
        let plot = table.plot(title, cols);
        if plot.series.is_empty() {
            continue;
        }
        let path = dir.join(file);
        fs::write(&path, plot.to_svg())?;
        written.push(path);
    }
    Ok(written)
}
