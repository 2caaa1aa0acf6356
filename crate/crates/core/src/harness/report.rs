use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DesignSpec, MethodSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub block: usize,
    pub taus: Vec<f64>,
    /// The estimator actually used, after any tuning.
    pub estimator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFailure {
    pub block: usize,
    pub kind: String,
    pub message: String,
}

/// Aggregates for one (design, method) pair. With carryover effects
/// `mean_tau` and `var_tau` are per lag and `rmse` pools all lags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub design: DesignSpec,
    pub method: MethodSpec,
    pub rmse: f64,
    pub mean_tau: Vec<f64>,
    /// Population variance over blocks (divisor `m`).
    pub var_tau: Vec<f64>,
    pub estimates: Vec<BlockEstimate>,
    pub failures: Vec<BlockFailure>,
}

impl CellSummary {
    pub fn from_estimates(
        design: DesignSpec,
        method: MethodSpec,
        truth: &[f64],
        estimates: Vec<BlockEstimate>,
        failures: Vec<BlockFailure>,
    ) -> Self {
        let m = estimates.len() as f64;
        let lags = truth.len();
        let mean_tau: Vec<f64> = (0..lags)
            .map(|l| estimates.iter().map(|e| e.taus[l]).sum::<f64>() / m)
            .collect();
        let var_tau: Vec<f64> = (0..lags)
            .map(|l| {
                estimates
                    .iter()
                    .map(|e| (e.taus[l] - mean_tau[l]).powi(2))
                    .sum::<f64>()
                    / m
            })
            .collect();
        let sq: f64 = estimates
            .iter()
            .flat_map(|e| e.taus.iter().zip(truth).map(|(a, b)| (a - b).powi(2)))
            .sum();
        CellSummary {
            design,
            method,
            rmse: (sq / (m * lags as f64)).sqrt(),
            mean_tau,
            var_tau,
            estimates,
            failures,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub taus: Vec<f64>,
    pub m_blocks: usize,
    pub cells: Vec<CellSummary>,
}

impl ExperimentReport {
    pub fn cell(&self, design: DesignSpec, method: MethodSpec) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.design == design && c.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "markdown",
        })
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report)?),
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Markdown => Ok(to_markdown(report)),
    }
}

const CSV_HEADER: [&str; 7] = [
    "record", "design", "method", "block", "lag", "value", "note",
];

/// Long format: one value per row. `f64` display is the shortest string that
/// parses back to the same number, so the CSV loses no precision.
fn to_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let row = |w: &mut csv::Writer<Vec<u8>>,
               record: &str,
               cell: Option<&CellSummary>,
               block: Option<usize>,
               lag: Option<usize>,
               value: String,
               note: &str|
     -> Result<()> {
        let (design, method) = cell.map_or((String::new(), String::new()), |c| {
            (c.design.to_string(), c.method.to_string())
        });
        w.write_record([
            record,
            &design,
            &method,
            &block.map_or(String::new(), |b| b.to_string()),
            &lag.map_or(String::new(), |l| l.to_string()),
            &value,
            note,
        ])?;
        Ok(())
    };

    row(
        &mut w,
        "m_blocks",
        None,
        None,
        None,
        report.m_blocks.to_string(),
        "",
    )?;
    for (l, tau) in report.taus.iter().enumerate() {
        row(&mut w, "tau", None, None, Some(l), tau.to_string(), "")?;
    }
    for cell in &report.cells {
        let c = Some(cell);
        row(&mut w, "rmse", c, None, None, cell.rmse.to_string(), "")?;
        for (l, v) in cell.mean_tau.iter().enumerate() {
            row(&mut w, "mean_tau", c, None, Some(l), v.to_string(), "")?;
        }
        for (l, v) in cell.var_tau.iter().enumerate() {
            row(&mut w, "var_tau", c, None, Some(l), v.to_string(), "")?;
        }
        for e in &cell.estimates {
            for (l, v) in e.taus.iter().enumerate() {
                row(
                    &mut w,
                    "estimate",
                    c,
                    Some(e.block),
                    Some(l),
                    v.to_string(),
                    &e.estimator,
                )?;
            }
        }
        for f in &cell.failures {
            row(
                &mut w,
                "failure",
                c,
                Some(f.block),
                None,
                f.kind.clone(),
                &f.message,
            )?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    record: String,
    design: String,
    method: String,
    block: Option<usize>,
    lag: Option<usize>,
    value: String,
    note: String,
}

/// Inverse of the CSV emitter.
pub fn parse_report_csv(text: &str) -> Result<ExperimentReport> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut report = ExperimentReport {
        taus: Vec::new(),
        m_blocks: 0,
        cells: Vec::new(),
    };
    for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let parse_err = |message: String| Error::Parse { line, message };
        let number = || -> Result<f64> {
            row.value
                .parse::<f64>()
                .map_err(|e| parse_err(format!("value {:?}: {e}", row.value)))
        };
        let lag = || row.lag.ok_or_else(|| parse_err("missing lag".into()));
        let block = || row.block.ok_or_else(|| parse_err("missing block".into()));

        if row.record == "m_blocks" {
            report.m_blocks = row
                .value
                .parse()
                .map_err(|e| parse_err(format!("m_blocks: {e}")))?;
            continue;
        }
        if row.record == "tau" {
            set_at(&mut report.taus, lag()?, number()?);
            continue;
        }

        let design: DesignSpec = row.design.parse()?;
        let method: MethodSpec = row.method.parse()?;
        let pos = match report
            .cells
            .iter()
            .position(|c| c.design == design && c.method == method)
        {
            Some(p) => p,
            None => {
                report.cells.push(CellSummary {
                    design,
                    method,
                    rmse: f64::NAN,
                    mean_tau: Vec::new(),
                    var_tau: Vec::new(),
                    estimates: Vec::new(),
                    failures: Vec::new(),
                });
                report.cells.len() - 1
            }
        };
        let cell = &mut report.cells[pos];
        match row.record.as_str() {
            "rmse" => cell.rmse = number()?,
            "mean_tau" => set_at(&mut cell.mean_tau, lag()?, number()?),
            "var_tau" => set_at(&mut cell.var_tau, lag()?, number()?),
            "estimate" => {
                let b = block()?;
                if cell.estimates.last().is_none_or(|e| e.block != b) {
                    cell.estimates.push(BlockEstimate {
                        block: b,
                        taus: Vec::new(),
                        estimator: row.note.clone(),
                    });
                }
                let e = cell.estimates.last_mut().expect("just pushed");
                set_at(&mut e.taus, lag()?, number()?);
            }
            "failure" => cell.failures.push(BlockFailure {
                block: block()?,
                kind: row.value.clone(),
                message: row.note.clone(),
            }),
            other => return Err(parse_err(format!("unknown record {other:?}"))),
        }
    }
    Ok(report)
}

fn set_at(v: &mut Vec<f64>, i: usize, x: f64) {
    if v.len() <= i {
        v.resize(i + 1, f64::NAN);
    }
    v[i] = x;
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.6}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Methods × designs grid, one row per pair.
fn to_markdown(report: &ExperimentReport) -> String {
    let mut out = String::new();
    let taus = join(&report.taus);
    let _ = writeln!(
        out,
        "Synthetic effect τ = [{taus}], m = {} blocks.\n",
        report.m_blocks
    );
    out.push_str("| method | design | RMSE | mean τ̂ | Var(τ̂) | blocks |\n");
    out.push_str("|---|---|---:|---:|---:|---:|\n");
    for cell in &report.cells {
        let _ = writeln!(
            out,
            "| {} | {} | {:.6} | {} | {} | {} |",
            cell.method,
            cell.design,
            cell.rmse,
            join(&cell.mean_tau),
            cell.var_tau
                .iter()
                .map(|x| format!("{x:.3e}"))
                .collect::<Vec<_>>()
                .join(", "),
            cell.estimates.len()
        );
    }
    out
}
