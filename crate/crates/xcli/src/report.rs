//! Comparison tables over run summaries.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Result;

use crate::runner::{RunStatus, RunSummary};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

/// Summaries sorted by final error, failed runs last; the first completed
/// run is the best.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<RunSummary>,
    pub best: Option<usize>,
    pub loss_names: Vec<String>,
}

fn by_error(a: &RunSummary, b: &RunSummary) -> Ordering {
    match (a.final_rel_l2_error, b.final_rel_l2_error) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
    .then_with(|| a.run_id.cmp(&b.run_id))
}

pub fn report(summaries: &[RunSummary]) -> Report {
    let mut rows = summaries.to_vec();
    rows.sort_by(by_error);
    let best = rows
        .iter()
        .position(|r| r.status == RunStatus::Completed && r.final_rel_l2_error.is_some());
    let mut loss_names: Vec<String> = Vec::new();
    for r in &rows {
        for k in r.final_losses.keys() {
            if !loss_names.contains(k) {
                loss_names.push(k.clone());
            }
        }
    }
    Report { rows, best, loss_names }
}

fn opt_list<T: ToString>(v: &Option<Vec<T>>, sep: &str) -> String {
    v.as_ref()
        .map(|v| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep))
        .unwrap_or_default()
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Completed => "completed",
        RunStatus::Failed => "failed",
    }
}

impl Report {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["rank", "best", "run_id", "label", "status", "final_rel_l2_error"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.loss_names.iter().map(|n| format!("loss_{n}")));
        h.extend(
            ["seed", "repeat", "sigma", "transition", "hidden", "iterations", "wall_time_s", "config_hash"]
                .iter()
                .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut row = vec![
                (i + 1).to_string(),
                (self.best == Some(i)).to_string(),
                r.run_id.clone(),
                r.label.clone(),
                status_name(r.status).to_string(),
                r.final_rel_l2_error.map(|e| format!("{e:e}")).unwrap_or_default(),
            ];
            row.extend(
                self.loss_names
                    .iter()
                    .map(|n| r.final_losses.get(n).map(|v| format!("{v:e}")).unwrap_or_default()),
            );
            row.extend([
                r.seed.to_string(),
                r.repeat.to_string(),
                opt_list(&r.sigma, "+"),
                r.transition.map(|t| t.to_string()).unwrap_or_default(),
                opt_list(&r.hidden, "x"),
                r.iterations.to_string(),
                format!("{:.3}", r.wall_time_s),
                r.config_hash.clone(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.run_id.len()).max().unwrap_or(6).max(6);
        let mut s = String::new();
        let _ = writeln!(s, "  {:>4}  {:<width$}  {:>12}  {:>10}  status", "rank", "run", "rel. L2", "time [s]");
        for (i, r) in self.rows.iter().enumerate() {
            let mark = if self.best == Some(i) { '*' } else { ' ' };
            let err = r.final_rel_l2_error.map(|e| format!("{e:.4e}")).unwrap_or_else(|| "-".into());
            let _ = write!(
                s,
                "{mark} {:>4}  {:<width$}  {err:>12}  {:>10.1}  {}",
                i + 1,
                r.run_id,
                r.wall_time_s,
                status_name(r.status)
            );
            if let Some(m) = &r.message {
                let _ = write!(s, " ({m})");
            }
            s.push('\n');
        }
        s
    }
}

/// Writes `report.csv` and `report.txt` into `dir`; returns their names.
pub fn write_report(dir: &Path, summaries: &[RunSummary]) -> Result<Vec<String>> {
    let r = report(summaries);
    let mut csv = Vec::new();
    r.write_csv(&mut csv)?;
    fs::write(dir.join(REPORT_CSV), csv)?;
    fs::write(dir.join(REPORT_TXT), r.to_text())?;
    Ok(vec![REPORT_CSV.into(), REPORT_TXT.into()])
}
