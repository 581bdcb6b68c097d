use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReplayMetrics;
use crate::store::{write_atomic, StoreError};

pub const CSV_HEADER: &str =
    "profile,runs,sets,matched_suggested,generated_suggested,matched_selected,generated_selected,rag_calls,rag_bypassed,p50_ms,p95_ms,max_ms,degraded";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    TextTable,
    Csv,
}

fn cells(label: &str, m: &ReplayMetrics) -> [String; 13] {
    [
        label.to_string(),
        m.runs.to_string(),
        m.suggestion_sets.to_string(),
        m.matched_suggested.to_string(),
        m.generated_suggested.to_string(),
        m.matched_selected.to_string(),
        m.generated_selected.to_string(),
        m.rag_calls_made.to_string(),
        m.rag_calls_bypassed.to_string(),
        m.end_to_end.p50_ms.to_string(),
        m.end_to_end.p95_ms.to_string(),
        m.end_to_end.max_ms.to_string(),
        m.degraded.to_string(),
    ]
}

/// One row per profile under the fixed header. Latency columns are
/// end-to-end suggestion rounds.
pub fn render_csv(rows: &[(String, ReplayMetrics)]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for (label, m) in rows {
        w.write_record(cells(label, m)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Column-aligned side-by-side table with the same columns as the CSV.
pub fn render_table(rows: &[(String, ReplayMetrics)]) -> String {
    let header: Vec<String> = CSV_HEADER.split(',').map(str::to_string).collect();
    let body: Vec<[String; 13]> = rows.iter().map(|(l, m)| cells(l, m)).collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |row: &[String]| {
        for (i, cell) in row.iter().enumerate() {
            if i == 0 {
                let _ = write!(out, "{cell:<w$}", w = widths[i]);
            } else {
                let _ = write!(out, "  {cell:>w$}", w = widths[i]);
            }
        }
        out.push('\n');
    };
    line(&header);
    for r in &body {
        line(r);
    }
    out
}

pub fn emit_report(rows: &[(String, ReplayMetrics)], path: &Path, format: ReportFormat) -> Result<(), StoreError> {
    let text = match format {
        ReportFormat::Csv => render_csv(rows),
        ReportFormat::TextTable => render_table(rows),
    };
    write_atomic(path, text.as_bytes())
}
