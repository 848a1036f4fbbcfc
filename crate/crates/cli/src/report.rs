//! Report rendering. JSON reports are an envelope
//! `{schema_version, command, input, result}`; CSV reports are flat tables.
//! Neither contains timestamps or host details, so equal inputs give equal bytes.

use serde::Serialize;
use sparsepower::harness::GridRow;

use crate::commands::{PowerReport, SampleSizeRow, TestReport};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, I: Serialize, R: Serialize> {
    schema_version: u32,
    command: &'a str,
    input: &'a I,
    result: &'a R,
}

pub fn json<I: Serialize, R: Serialize>(command: &str, input: &I, result: &R) -> CliResult<Vec<u8>> {
    let env = Envelope { schema_version: SCHEMA_VERSION, command, input, result };
    let mut out = serde_json::to_vec_pretty(&env).map_err(|e| CliError::numerical(format!("cannot encode report: {e}")))?;
    out.push(b'\n');
    Ok(out)
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let err = |e: csv::Error| CliError::numerical(format!("cannot write CSV: {e}"));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::numerical(format!("cannot write CSV: {e}")))
}

/// The requested size first, then any curve points.
pub fn power_csv(r: &PowerReport) -> CliResult<Vec<u8>> {
    let mut rows = vec![vec![
        r.result.n1.to_string(),
        r.result.n2.to_string(),
        r.n.to_string(),
        num(r.result.power),
        num(r.result.se),
    ]];
    rows.extend(r.curve.iter().map(|c| {
        vec![c.n1.to_string(), c.n2.to_string(), c.n.to_string(), num(c.power), num(c.se)]
    }));
    table(&["n1", "n2", "n", "power", "se"], rows)
}

pub fn samplesize_csv(rows: &[SampleSizeRow]) -> CliResult<Vec<u8>> {
    let body = rows
        .iter()
        .map(|r| {
            vec![
                num(r.eta),
                num(r.target),
                r.n1.to_string(),
                r.n2.to_string(),
                r.total.to_string(),
                num(r.power),
                opt(r.power_below),
                r.k.to_string(),
                opt(r.empirical.as_ref().map(|e| e.rate)),
            ]
        })
        .collect();
    table(&["eta", "target", "n1", "n2", "total", "power", "power_below", "k", "empirical"], body)
}

pub fn validate_csv(rows: &[GridRow]) -> CliResult<Vec<u8>> {
    let body = rows
        .iter()
        .map(|r| {
            let e = r.empirical.as_ref();
            vec![
                num(r.eta),
                r.n.to_string(),
                num(r.missing),
                r.k.to_string(),
                num(r.theoretical),
                num(r.theoretical_se),
                opt(e.map(|e| e.rate)),
                opt(e.map(|e| e.ci_low)),
                opt(e.map(|e| e.ci_high)),
                e.map_or_else(String::new, |e| e.failures.to_string()),
                r.flagged.map_or_else(String::new, |f| f.to_string()),
            ]
        })
        .collect();
    table(
        &[
            "eta",
            "n",
            "missing",
            "k",
            "theoretical",
            "theoretical_se",
            "empirical",
            "ci_low",
            "ci_high",
            "failures",
            "flagged",
        ],
        body,
    )
}

pub fn test_csv(r: &TestReport) -> CliResult<Vec<u8>> {
    let t = &r.test;
    table(
        &["statistic", "k", "n1", "n2", "alpha", "threshold", "p_value", "reject", "tau2"],
        vec![vec![
            num(t.statistic),
            t.k.to_string(),
            t.n1.to_string(),
            t.n2.to_string(),
            num(t.alpha),
            num(t.threshold),
            num(t.p_value),
            t.reject.to_string(),
            num(r.tau2),
        ]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_keys() {
        let out = json("power", &serde_json::json!({"a": 1}), &serde_json::json!({"b": 2})).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["command"], "power");
        assert_eq!(v["input"]["a"], 1);
        assert_eq!(v["result"]["b"], 2);
    }

    #[test]
    fn csv_quotes_and_blanks() {
        let out = table(&["a", "b"], vec![vec!["x,y".into(), num(f64::NAN)]]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\r\n\"x,y\",\r\n");
    }
}
