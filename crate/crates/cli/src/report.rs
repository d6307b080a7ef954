//! CSV/text report writers. All numeric formatting is fixed-width so
//! reports are byte-identical across runs with the same seed.

use anyhow::{Context, Result};
use gban_core::fusion::GateReport;
use gban_core::train::EpochRecord;
use std::path::Path;

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn write_epoch_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_wa\n");
    for r in log {
        s.push_str(&format!("{},{:.6},{:.6}\n", r.epoch, r.train_loss, r.val_wa));
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// A WA table in the two-way comparison layout: one label column, one
/// column per variant, and a final Avg row.
pub fn comparison_table(label: &str, columns: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = String::new();
    s.push_str(label);
    for c in columns {
        s.push(',');
        s.push_str(c);
    }
    s.push('\n');
    for (name, values) in rows {
        s.push_str(name);
        for v in values {
            s.push_str(&format!(",{v:.4}"));
        }
        s.push('\n');
    }
    if !rows.is_empty() {
        let n = rows.len() as f64;
        let cols = rows[0].1.len();
        s.push_str("Avg");
        for c in 0..cols {
            let avg = rows.iter().map(|(_, v)| v[c]).sum::<f64>() / n;
            s.push_str(&format!(",{avg:.4}"));
        }
        s.push('\n');
    }
    s
}

pub fn gate_report_text(report: &GateReport) -> String {
    let mut s = String::new();
    s.push_str(&format!("mean_zp: {:.6}\n", report.mean_zp));
    s.push_str(&format!("mean_zq: {:.6}\n", report.mean_zq));
    for (name, w) in report.weights() {
        s.push_str(&format!("weight_{name}: {w:.6}\n"));
    }
    s
}

/// Dense matrix as plain CSV rows.
pub fn matrix_csv(data: &[f64], rows: usize, cols: usize, row_stride: usize) -> String {
    let mut s = String::new();
    for r in 0..rows {
        let row = &data[r * row_stride..r * row_stride + cols];
        let line: Vec<String> = row.iter().map(|v| format!("{v:.8}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}
