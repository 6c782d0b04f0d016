//! Result table rows, one per mechanism, written as CSV.

use std::path::Path;

use jam_core::evaluator::EvalReport;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub instance: String,
    pub samples: usize,
    pub rev: f64,
    pub rev_se: f64,
    pub sw: f64,
    pub sw_se: f64,
    /// Empty for the baseline in printed tables; always measured.
    pub rgt: f64,
    pub ir_violations: usize,
    /// Paired t-test of per-sample revenue against the baseline.
    pub p_value: Option<f64>,
}

impl ResultRow {
    pub fn from_report(instance: &str, report: &EvalReport, p_value: Option<f64>) -> Self {
        Self {
            method: report.mechanism.clone(),
            instance: instance.to_string(),
            samples: report.samples,
            rev: report.revenue.mean,
            rev_se: report.revenue.se,
            sw: report.welfare.mean,
            sw_se: report.welfare.se,
            rgt: report.regret,
            ir_violations: report.ir_violations,
            p_value,
        }
    }
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv(path: &Path) -> CliResult<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Fixed-width text table.
pub fn render(rows: &[ResultRow]) -> String {
    let mut out = format!(
        "{:<10} {:<8} {:>8} {:>16} {:>16} {:>10} {:>10}\n",
        "method", "instance", "samples", "rev", "sw", "rgt", "p-value"
    );
    for r in rows {
        let p = r.p_value.map_or("-".to_string(), |p| format!("{p:.2e}"));
        out.push_str(&format!(
            "{:<10} {:<8} {:>8} {:>8.4}+-{:<6.4} {:>8.4}+-{:<6.4} {:>10.5} {:>10}\n",
            r.method, r.instance, r.samples, r.rev, r.rev_se, r.sw, r.sw_se, r.rgt, p
        ));
    }
    out
}
