//! Text tables and artifact files.

use std::fmt::Write as _;
use std::path::Path;

use emofuse_core::autograd::suite::SuiteRow;
use emofuse_core::train::{AblationRow, MetricsReport};
use emofuse_core::CLASSES;
use serde::Serialize;

use crate::Failure;

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    let fail = |e: std::io::Error| Failure::Data(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(fail)?;
    }
    std::fs::write(path, contents).map_err(fail)
}

pub fn json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Internal(e.to_string()))
}

fn pct(v: Option<f64>) -> String {
    v.map(|x| format!("{:.1}", 100.0 * x)).unwrap_or_else(|| "-".into())
}

/// One row per subset: pooled per-class accuracy, pooled and fold-mean
/// weighted accuracy, in percent.
pub fn summary_table(rows: &[AblationRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.subset.to_string().len())
        .max()
        .unwrap_or(6)
        .max(6);
    let mut out = format!("{:<width$} {:>6}", "subset", "fusion");
    for c in CLASSES {
        let _ = write!(out, " {c:>6}");
    }
    out.push_str("   pooled     mean\n");
    for r in rows {
        let _ = write!(out, "{:<width$} {:>6}", r.subset.to_string(), r.fusion_input);
        for v in &r.summary.pooled.per_class {
            let _ = write!(out, " {:>6}", pct(*v));
        }
        let _ = writeln!(
            out,
            " {:>8} {:>8}",
            pct(Some(r.summary.pooled.weighted_accuracy)),
            pct(Some(r.summary.mean_weighted_accuracy))
        );
    }
    out
}

/// Confusion matrix (rows are true classes) with recall per row.
pub fn report_table(r: &MetricsReport) -> String {
    let mut out = String::from("true\\pred");
    for c in CLASSES {
        let _ = write!(out, " {c:>5}");
    }
    out.push_str("  recall\n");
    for (t, row) in r.confusion.rows().iter().enumerate() {
        let _ = write!(out, "{:<9}", CLASSES[t]);
        for n in row {
            let _ = write!(out, " {n:>5}");
        }
        let _ = writeln!(out, "  {:>6}", pct(r.per_class[t]));
    }
    let _ = writeln!(
        out,
        "weighted accuracy {:.1}% ({}/{})",
        100.0 * r.weighted_accuracy,
        r.confusion.correct(),
        r.confusion.total()
    );
    out
}

/// Worst error per operation over all seeds, and the overall worst.
pub fn gradcheck_table(rows: &[SuiteRow], tolerance: f64) -> (String, f64) {
    let mut out = format!(
        "{:<22} {:>5} {:>12} {:>12} {:>7}  ok\n",
        "op", "seeds", "max rel err", "max abs err", "coords"
    );
    let mut worst = 0.0f64;
    let mut ops: Vec<&str> = Vec::new();
    for r in rows {
        if !ops.contains(&r.op) {
            ops.push(r.op);
        }
    }
    for op in ops {
        let mine: Vec<&SuiteRow> = rows.iter().filter(|r| r.op == op).collect();
        let rel = mine.iter().map(|r| r.report.max_rel_error).fold(0.0, f64::max);
        let abs = mine.iter().map(|r| r.report.max_abs_error).fold(0.0, f64::max);
        let coords: usize = mine.iter().map(|r| r.report.coordinates).sum();
        worst = worst.max(rel);
        let ok = if rel <= tolerance { "yes" } else { "NO" };
        let _ = writeln!(
            out,
            "{op:<22} {:>5} {rel:>12.3e} {abs:>12.3e} {coords:>7}  {ok}",
            mine.len()
        );
    }
    let _ = writeln!(out, "worst relative error {worst:.3e} (tolerance {tolerance:e})");
    (out, worst)
}
