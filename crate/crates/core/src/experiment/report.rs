//! Side-by-side comparison of finished runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::RunSummary;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Reads every `summary.json`, sorted ascending by minimum test loss.
pub fn collect(dirs: &[PathBuf]) -> Result<Vec<ReportRow>> {
    let mut rows = dirs
        .iter()
        .map(|d| {
            Ok(ReportRow {
                dir: d.clone(),
                summary: RunSummary::read(d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.summary.min_test_loss.total_cmp(&b.summary.min_test_loss));
    Ok(rows)
}

pub fn text_table(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.summary.name.len()).max().unwrap_or(4).max(4);
    let mut out = format!(
        "{:<width$}  {:<10}  {:>8}  {:>12}  {:>12}\n",
        "name", "model", "params", "min_train", "min_test"
    );
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{:<width$}  {:<10}  {:>8}  {:>12.4e}  {:>12.4e}",
            s.name, s.model, s.param_count, s.min_train_loss, s.min_test_loss
        );
    }
    out
}

pub fn csv_table(rows: &[ReportRow]) -> String {
    let mut out = String::from("name,model,params,min_train_loss,min_test_loss,dir\n");
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{}",
            s.name,
            s.model,
            s.param_count,
            s.min_train_loss,
            s.min_test_loss,
            display(&r.dir)
        );
    }
    out
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
