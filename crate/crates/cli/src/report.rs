//! Aggregation of per-case metrics into the two-arm comparison table.

use std::fmt::Write as _;
use std::path::Path;

use crowngen_core::context::Arm;
use crowngen_core::metrics::{CaseMetrics, MarginReport};

use crate::error::{CliError, Result};
use crate::stages::{CASES_DIR, FAILED_FILE, METRICS_FILE};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const CSV_HEADER: &str = "arm,n_cases,n_failed,cd_l1,cd_l2,max_um,min_um,avg_um,std_um";

/// One row of the comparison table: means over the evaluated cases.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRow {
    pub arm: Arm,
    pub n_cases: usize,
    pub n_failed: usize,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub margin: MarginReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ArmRow>,
    pub missing: Vec<Arm>,
}

/// Reads `<out>/<arm>/cases/*/metrics.json` in case-id order. Cases with a
/// failure marker count as failed. `None` when the arm has no cases at all.
pub fn collect_arm(out_dir: &Path, arm: Arm) -> Result<Option<ArmRow>> {
    let root = out_dir.join(arm.name()).join(CASES_DIR);
    if !root.is_dir() {
        return Ok(None);
    }
    let mut dirs: Vec<_> = std::fs::read_dir(&root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut metrics = Vec::new();
    let mut n_failed = 0;
    for dir in dirs {
        let path = dir.join(METRICS_FILE);
        if dir.join(FAILED_FILE).exists() {
            n_failed += 1;
        } else if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let m: CaseMetrics =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            metrics.push(m);
        }
    }
    if metrics.is_empty() && n_failed == 0 {
        return Ok(None);
    }
    Ok(Some(aggregate(arm, &metrics, n_failed)))
}

/// Means of chamfer values and margin statistics over `metrics`; all zeros
/// when every case failed.
pub fn aggregate(arm: Arm, metrics: &[CaseMetrics], n_failed: usize) -> ArmRow {
    let n = metrics.len();
    let mean = |f: fn(&CaseMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            metrics.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let margins: Vec<MarginReport> = metrics.iter().map(|m| m.margin).collect();
    ArmRow {
        arm,
        n_cases: n,
        n_failed,
        cd_l1: mean(|m| m.cd_l1),
        cd_l2: mean(|m| m.cd_l2),
        margin: MarginReport::mean_of(&margins).unwrap_or(MarginReport::ZERO),
    }
}

pub fn build_report(out_dir: &Path) -> Result<Report> {
    let mut report = Report { rows: Vec::new(), missing: Vec::new() };
    for arm in [Arm::WithMargin, Arm::Baseline] {
        match collect_arm(out_dir, arm)? {
            Some(row) => report.rows.push(row),
            None => report.missing.push(arm),
        }
    }
    if report.rows.is_empty() {
        return Err(CliError::Input(format!(
            "no evaluated cases under {} (expected <arm>/{CASES_DIR}/<case>/{METRICS_FILE})",
            out_dir.display()
        )));
    }
    Ok(report)
}

impl Report {
    /// Full-precision CSV, one row per present arm.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let m = &r.margin;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.arm.name(),
                r.n_cases,
                r.n_failed,
                r.cd_l1,
                r.cd_l2,
                m.max_um,
                m.min_um,
                m.avg_um,
                m.std_um
            );
        }
        s
    }

    /// Human-readable summary: chamfer ×10⁻³, margin distances in μm.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>6} {:>7} {:>12} {:>12} {:>10} {:>10} {:>10} {:>10}",
            "arm", "cases", "failed", "CD-L1 e-3", "CD-L2 e-3", "max um", "min um", "avg um", "std um"
        );
        for r in &self.rows {
            let m = &r.margin;
            let _ = writeln!(
                s,
                "{:<12} {:>6} {:>7} {:>12.3} {:>12.3} {:>10.2} {:>10.2} {:>10.2} {:>10.2}",
                r.arm.name(),
                r.n_cases,
                r.n_failed,
                r.cd_l1 * 1e3,
                r.cd_l2 * 1e3,
                m.max_um,
                m.min_um,
                m.avg_um,
                m.std_um
            );
        }
        for arm in &self.missing {
            let _ = writeln!(s, "warning: arm {} has no evaluated cases", arm.name());
        }
        if let [a, b] = self.rows.as_slice() {
            let _ = writeln!(
                s,
                "margin avg distance, {} minus {}: {:.2} um",
                a.arm.name(),
                b.arm.name(),
                a.margin.avg_um - b.margin.avg_um
            );
        }
        s
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        for (name, body) in [(REPORT_CSV, self.to_csv()), (REPORT_TXT, self.to_text())] {
            let path = out_dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }
}
