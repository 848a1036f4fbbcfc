//! Long-format CSV of sparse observations: `subject_id,group,time,value`.

use std::collections::HashMap;
use std::io::Read;

use sparsepower::process::{Group, SparseDataset, Subject};

use crate::error::{CliError, CliResult};

pub const HEADER: [&str; 4] = ["subject_id", "group", "time", "value"];

/// Parsed data plus the original time range, so results can be mapped back.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub dataset: SparseDataset,
    pub time_min: f64,
    pub time_max: f64,
    /// Rows dropped because `value` was empty or `NA`.
    pub missing_values: usize,
}

fn parse_f64(field: &str, what: &str, line: u64) -> CliResult<f64> {
    let v: f64 = field.trim().parse().map_err(|_| CliError::config(format!("line {line}: bad {what} `{field}`")))?;
    if !v.is_finite() {
        return Err(CliError::config(format!("line {line}: {what} must be finite")));
    }
    Ok(v)
}

pub fn read_csv<R: Read>(reader: R) -> CliResult<CsvData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::None).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::config(format!("line 1: {e}")))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(CliError::config(format!(
            "line 1: header must be exactly `{}`, got `{}`",
            HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    // subjects in first-appearance order: (id, group, times, values)
    let mut order: Vec<(String, Group, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut missing_values = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::config(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(CliError::config(format!("line {line}: empty subject_id")));
        }
        let group = match rec[1].trim() {
            "1" => Group::One,
            "2" => Group::Two,
            g => return Err(CliError::config(format!("line {line}: group must be 1 or 2, got `{g}`"))),
        };
        let time = parse_f64(&rec[2], "time", line)?;
        let raw = rec[3].trim();
        let value = if raw.is_empty() || raw == "NA" { None } else { Some(parse_f64(raw, "value", line)?) };

        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            order.push((id.to_string(), group, Vec::new(), Vec::new()));
            order.len() - 1
        });
        let entry = &mut order[slot];
        if entry.1 != group {
            return Err(CliError::config(format!(
                "line {line}: subject `{id}` appears in groups {} and {}",
                entry.1.label(),
                group.label()
            )));
        }
        match value {
            Some(v) => {
                entry.2.push(time);
                entry.3.push(v);
            }
            None => missing_values += 1,
        }
    }

    if order.is_empty() {
        return Err(CliError::config("no data rows"));
    }
    if let Some(s) = order.iter().find(|s| s.2.is_empty()) {
        return Err(CliError::config(format!("subject `{}` has no observed values", s.0)));
    }
    let count = |g| order.iter().filter(|s| s.1 == g).count();
    let (n1, n2) = (count(Group::One), count(Group::Two));
    if n1 == 0 || n2 == 0 {
        return Err(CliError::config(format!(
            "data contain a single group (group 1: {n1} subjects, group 2: {n2}); need both"
        )));
    }
    if n1 < 2 || n2 < 2 {
        return Err(CliError::config(format!("need at least 2 subjects per group, got {n1} and {n2}")));
    }

    let all = order.iter().flat_map(|s| s.2.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let subjects = order
        .into_iter()
        .map(|(id, group, times, values)| {
            let mut pairs: Vec<(f64, f64)> = times.iter().map(|t| (t - lo) / span).zip(values).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let (times, values) = pairs.into_iter().unzip();
            Subject { id, group, times, values }
        })
        .collect();
    Ok(CsvData { dataset: SparseDataset { subjects, tau2: f64::NAN }, time_min: lo, time_max: hi, missing_values })
}

/// Writes a dataset in the input format, times mapped to `[lo, hi]`.
pub fn write_csv<W: std::io::Write>(out: W, data: &SparseDataset, lo: f64, hi: f64) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| CliError::config(e.to_string());
    w.write_record(HEADER).map_err(io)?;
    for s in &data.subjects {
        for (t, v) in s.times.iter().zip(&s.values) {
            let g = s.group.label().to_string();
            let time = (lo + t * (hi - lo)).to_string();
            w.write_record([s.id.as_str(), g.as_str(), time.as_str(), v.to_string().as_str()]).map_err(io)?;
        }
    }
    w.flush().map_err(|e| CliError::config(e.to_string()))
}
