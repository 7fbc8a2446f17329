//! `trace.csv`: header plus one row per iteration, LF endings, floats in
//! shortest round-trip form.

use std::fmt::Write as _;

use wpm_core::simulator::TraceRow;

pub const HEADER: &str = "iteration,mean_loss,mean_accuracy,consensus_distance";

pub fn to_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.t, r.mean_loss, r.mean_accuracy, r.consensus_distance).unwrap();
    }
    out
}

/// Parses a trace; errors name the 1-based row.
pub fn from_csv(text: &str) -> Result<Vec<TraceRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == HEADER => {}
        Some(h) => return Err(format!("row 1: expected header {HEADER:?}, found {h:?}")),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let row = n + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(format!("row {row}: expected 4 fields, found {}", f.len()));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| format!("row {row}: {s:?}: {e}"));
        rows.push(TraceRow {
            t: f[0].parse().map_err(|e| format!("row {row}: {:?}: {e}", f[0]))?,
            mean_loss: num(f[1])?,
            mean_accuracy: num(f[2])?,
            consensus_distance: num(f[3])?,
        });
    }
    Ok(rows)
}
