use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::run::{summary_path, Summary};
use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 8] = [
    "name", "mode", "sizes", "iter", "backprop_s", "flop_ratio", "dev_%", "test_%",
];

fn cells(s: &Summary) -> [String; 8] {
    let sizes: Vec<String> = s.final_hidden_sizes.iter().map(usize::to_string).collect();
    let ratio = if s.hidden_flop_ratio.is_empty() {
        "-".to_string()
    } else {
        let r: Vec<String> = s.hidden_flop_ratio.iter().map(|r| format!("{r:.4}")).collect();
        r.join("/")
    };
    [
        s.name.clone(),
        serde_json::to_value(s.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default(),
        sizes.join("x"),
        (s.best_epoch + 1).to_string(),
        format!("{:.2}", s.backprop_seconds),
        ratio,
        format!("{:.2}", 100.0 * s.dev_accuracy),
        format!("{:.2}", 100.0 * s.test_accuracy),
    ]
}

/// Aligned table, one row per summary, sorted by name. `iter` is the
/// 1-based best-by-dev epoch.
pub fn render(summaries: &[Summary]) -> String {
    let mut rows: Vec<[String; 8]> = summaries.iter().map(cells).collect();
    rows.sort_by(|a, b| a[0].cmp(&b[0]));
    let header = REPORT_COLUMNS.map(str::to_owned);
    let mut width = [0; 8];
    for r in std::iter::once(&header).chain(&rows) {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    for r in std::iter::once(&header).chain(&rows) {
        let line: Vec<String> = r
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

pub fn load_summary(path: &Path) -> Result<Summary> {
    let p = summary_path(path);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "summary",
        reason: format!("{}: {e}", p.display()),
    })
}

/// Reads summary files (or run directories) and renders them.
pub fn report<P: AsRef<Path>>(paths: &[P]) -> Result<String> {
    let summaries = paths
        .iter()
        .map(|p| load_summary(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(render(&summaries))
}
