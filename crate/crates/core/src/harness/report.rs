//! Gate reports: a JSON summary and long-format CSV plot data.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One gate: a simulated value compared against its theoretical target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub id: String,
    pub target_ref: String,
    pub simulated: f64,
    pub theoretical: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Abscissa for plotting (theta, threshold, time, ...).
    #[serde(skip)]
    pub x: f64,
    #[serde(skip)]
    pub stderr: f64,
}

impl Check {
    /// Passes when `|simulated - theoretical| <= tolerance`.
    pub fn within(id: impl Into<String>, target_ref: &str, x: f64, simulated: f64, theoretical: f64, stderr: f64, tolerance: f64) -> Self {
        Self {
            id: id.into(),
            target_ref: target_ref.to_string(),
            simulated,
            theoretical,
            tolerance,
            passed: (simulated - theoretical).abs() <= tolerance,
            x,
            stderr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub params: serde_json::Value,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

pub const CSV_HEADER: [&str; 6] = ["experiment", "check_id", "x", "simulated", "theoretical", "stderr"];

/// Scientific notation with 17 significant digits, enough to round-trip any f64.
fn sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Writes the long-format plot data of `report`.
pub fn emit_plot_data<W: Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for c in &report.checks {
        w.write_record([
            report.experiment.clone(),
            c.id.clone(),
            sig17(c.x),
            sig17(c.simulated),
            sig17(c.theoretical),
            sig17(c.stderr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One parsed CSV row.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct PlotRow {
    pub experiment: String,
    pub check_id: String,
    pub x: f64,
    pub simulated: f64,
    pub theoretical: f64,
    pub stderr: f64,
}

pub fn read_plot_data<R: Read>(input: R) -> Result<Vec<PlotRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        Report {
            experiment: "clt".into(),
            params: serde_json::json!({"alpha": 1.5}),
            checks: vec![
                Check::within("a", "ref", 0.1, 1.0 / 3.0, 0.3, 1e-3, 0.05),
                Check::within("b", "ref", 2.0, std::f64::consts::PI, 1e-300, 5e-324, 0.0),
            ],
        }
    }

    #[test]
    fn empty_report_is_header_only() {
        let r = Report { experiment: "x".into(), params: serde_json::Value::Null, checks: vec![] };
        let mut buf = vec![];
        emit_plot_data(&r, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "experiment,check_id,x,simulated,theoretical,stderr\n");
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let r = sample_report();
        let mut buf = vec![];
        emit_plot_data(&r, &mut buf).unwrap();
        let rows = read_plot_data(&buf[..]).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, c) in rows.iter().zip(&r.checks) {
            assert_eq!(row.check_id, c.id);
            assert_eq!((row.x, row.simulated, row.theoretical, row.stderr), (c.x, c.simulated, c.theoretical, c.stderr));
        }
    }

    #[test]
    fn json_keys() {
        let r = sample_report();
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["checks", "experiment", "params"]);
        let check: Vec<&String> = v["checks"][0].as_object().unwrap().keys().collect();
        assert_eq!(check, ["id", "passed", "simulated", "target_ref", "theoretical", "tolerance"]);
        assert!(!r.all_passed());
        assert_eq!(r.failed().count(), 1);
    }
}
