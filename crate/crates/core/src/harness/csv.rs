//! Trace CSV files.

use std::fmt::Write as _;
use std::path::Path;

use crate::engines::StepRecord;
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "t,residual,consensus_error,optimality_error,tracking_error,comm_entries_cum,grad_evals_cum";

/// Metric columns shared by trace and aggregate files, in file order.
pub const METRICS: [&str; 6] = [
    "residual",
    "consensus_error",
    "optimality_error",
    "tracking_error",
    "comm_entries_cum",
    "grad_evals_cum",
];

pub fn metric_values(r: &StepRecord) -> [f64; 6] {
    [
        r.residual,
        r.consensus_error,
        r.optimality_error,
        r.tracking_error,
        r.comm_entries_cum as f64,
        r.grad_evals_cum,
    ]
}

pub fn trace_csv(records: &[StepRecord]) -> String {
    let mut out = String::with_capacity(32 + records.len() * 140);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
            r.t, r.residual, r.consensus_error, r.optimality_error, r.tracking_error, r.comm_entries_cum, r.grad_evals_cum
        );
    }
    out
}

pub fn export_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    std::fs::write(path, trace_csv(records))?;
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        what: "trace csv",
        line,
        message: message.into(),
    }
}

fn field<T: std::str::FromStr>(raw: &str, line: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse().map_err(|e| parse_err(line, format!("{name}: {e}")))
}

/// Parses a file written by [`export_csv`].
pub fn read_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == TRACE_HEADER => {}
        _ => return Err(parse_err(1, "missing or unexpected header")),
    }
    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 7 {
            return Err(parse_err(lineno, format!("expected 7 columns, found {}", cols.len())));
        }
        let record = StepRecord {
            t: field(cols[0], lineno, "t")?,
            residual: field(cols[1], lineno, "residual")?,
            consensus_error: field(cols[2], lineno, "consensus_error")?,
            optimality_error: field(cols[3], lineno, "optimality_error")?,
            tracking_error: field(cols[4], lineno, "tracking_error")?,
            comm_entries_cum: field(cols[5], lineno, "comm_entries_cum")?,
            grad_evals_cum: field(cols[6], lineno, "grad_evals_cum")?,
        };
        if let Some(prev) = records.last().map(|r: &StepRecord| r.t) {
            if record.t <= prev {
                return Err(parse_err(lineno, "steps must increase"));
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Mean and population standard deviation of each metric over replicas.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub t: usize,
    pub mean: [f64; 6],
    pub std: [f64; 6],
}

/// Aggregates replica traces row by row. Replicas that stop early (a
/// consensus threshold) are truncated to the shortest one; the recorded
/// steps must agree on the common prefix.
pub fn aggregate(replicas: &[&[StepRecord]]) -> Result<Vec<AggregateRow>> {
    let rows = replicas.iter().map(|r| r.len()).min().ok_or_else(|| Error::invalid("no replicas to aggregate"))?;
    let k = replicas.len() as f64;
    (0..rows)
        .map(|row| {
            let t = replicas[0][row].t;
            if let Some(other) = replicas.iter().find(|r| r[row].t != t) {
                return Err(Error::invalid(format!(
                    "replicas recorded different steps at row {row}: {t} and {}",
                    other[row].t
                )));
            }
            let values: Vec<[f64; 6]> = replicas.iter().map(|r| metric_values(&r[row])).collect();
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for c in 0..6 {
                mean[c] = values.iter().map(|v| v[c]).sum::<f64>() / k;
                std[c] = (values.iter().map(|v| (v[c] - mean[c]).powi(2)).sum::<f64>() / k).sqrt();
            }
            Ok(AggregateRow { t, mean, std })
        })
        .collect()
}

pub fn aggregate_header() -> String {
    let mut h = String::from("t");
    for m in METRICS {
        let _ = write!(h, ",{m}_mean,{m}_std");
    }
    h
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = aggregate_header();
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.t);
        for c in 0..6 {
            let _ = write!(out, ",{:.16e},{:.16e}", r.mean[c], r.std[c]);
        }
        out.push('\n');
    }
    out
}

/// Parses a file written from [`aggregate_csv`].
pub fn read_aggregate_csv(text: &str) -> Result<Vec<AggregateRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == aggregate_header() => {}
        _ => return Err(parse_err(1, "missing or unexpected aggregate header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != 13 {
            return Err(parse_err(lineno, format!("expected 13 columns, found {}", cols.len())));
        }
        let mut row = AggregateRow {
            t: field(cols[0], lineno, "t")?,
            mean: [0.0; 6],
            std: [0.0; 6],
        };
        for c in 0..6 {
            row.mean[c] = field(cols[1 + 2 * c], lineno, METRICS[c])?;
            row.std[c] = field(cols[2 + 2 * c], lineno, METRICS[c])?;
        }
        rows.push(row);
    }
    Ok(rows)
}
