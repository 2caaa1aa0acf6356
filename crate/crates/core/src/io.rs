//! CSV forms of designs, fraction paths and covariates.
//!
//! A design is either a matrix (`unit,<period>,…` with ±1 cells) or an
//! adoption table (`unit,adoption` with 1-based periods, empty for never).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::design::{DesignMatrix, FractionPath, Regime, Stratification};
use crate::error::{Error, Result};
use crate::objective::CovariateSpec;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Reads either design form. Adoption tables need `n_periods`.
pub fn read_design<R: Read>(reader: R, n_periods: Option<usize>) -> Result<DesignMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let is_adoption = header.len() == 2
        && header
            .get(1)
            .is_some_and(|h| h.eq_ignore_ascii_case("adoption"));

    if is_adoption {
        let t = n_periods
            .ok_or_else(|| Error::invalid("adoption tables need the number of periods"))?;
        let mut adoption = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = rec.get(1).unwrap_or("");
            adoption.push(match cell {
                "" | "never" | "none" => None,
                s => Some(
                    s.parse::<usize>()
                        .map_err(|e| parse_err(i + 2, format!("adoption {s:?}: {e}")))?,
                ),
            });
        }
        return DesignMatrix::from_adoption(&adoption, t);
    }

    let mut rows: Vec<Vec<i8>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .skip(1)
            .map(|s| match s {
                "1" | "+1" => Ok(1),
                "-1" | "0" => Ok(-1),
                other => Err(parse_err(i + 2, format!("design cell {other:?} is not ±1"))),
            })
            .collect::<Result<Vec<i8>>>()?;
        rows.push(row);
    }
    let design = DesignMatrix::from_rows(&rows, Regime::Reversible)?;
    if let Some(t) = n_periods {
        if design.n_periods() != t {
            return Err(Error::Dimension(format!(
                "design has {} periods, expected {t}",
                design.n_periods()
            )));
        }
    }
    if design.all_rows_monotone() {
        DesignMatrix::new(design.entries().clone(), Regime::Irreversible)
    } else {
        Ok(design)
    }
}

pub fn load_design(path: impl AsRef<Path>, n_periods: Option<usize>) -> Result<DesignMatrix> {
    read_design(File::open(path)?, n_periods)
}

/// Matrix form with units and periods numbered from 1.
pub fn write_design<W: Write>(design: &DesignMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string()];
    header.extend((1..=design.n_periods()).map(|t| t.to_string()));
    w.write_record(&header)?;
    for i in 0..design.n_units() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend((0..design.n_periods()).map(|t| design.get(i, t).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_adoption<W: Write>(design: &DesignMatrix, writer: W) -> Result<()> {
    if !design.all_rows_monotone() {
        return Err(Error::invalid("adoption tables need a staggered design"));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["unit", "adoption"])?;
    for (i, a) in design.adoption_periods().iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            a.map_or(String::new(), |a| a.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `period,omega` rows with 1-based periods.
pub fn read_path<R: Read>(reader: R) -> Result<FractionPath> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(rec.len().saturating_sub(1)).unwrap_or("");
        values.push(
            cell.parse::<f64>()
                .map_err(|e| parse_err(i + 2, format!("omega {cell:?}: {e}")))?,
        );
    }
    FractionPath::new(values)
}

pub fn load_path(path: impl AsRef<Path>) -> Result<FractionPath> {
    read_path(File::open(path)?)
}

pub fn write_path<W: Write>(path: &FractionPath, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["period", "omega"])?;
    for (t, v) in path.as_slice().iter().enumerate() {
        w.write_record([(t + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `unit,x1,…,xr` rows, reordered to match `unit_ids`.
pub fn read_covariates<R: Read>(reader: R, unit_ids: &[String]) -> Result<CovariateSpec> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let r = rdr.headers()?.len().saturating_sub(1);
    if r == 0 {
        return Err(Error::invalid("covariate file has no covariate columns"));
    }
    let mut x = DMatrix::from_element(unit_ids.len(), r, f64::NAN);
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let unit = rec.get(0).unwrap_or("");
        let row = unit_ids
            .iter()
            .position(|u| u == unit)
            .ok_or_else(|| parse_err(i + 2, format!("unknown unit {unit:?}")))?;
        for c in 0..r {
            let cell = rec.get(c + 1).unwrap_or("");
            x[(row, c)] = cell
                .parse()
                .map_err(|e| parse_err(i + 2, format!("covariate {cell:?}: {e}")))?;
        }
    }
    if let Some(i) = (0..unit_ids.len()).find(|&i| x.row(i).iter().any(|v| v.is_nan())) {
        return Err(Error::invalid(format!(
            "no covariates for unit {:?}",
            unit_ids[i]
        )));
    }
    CovariateSpec::new(x)
}

/// `unit,stratum` rows in design row order; any label type works.
pub fn read_strata<R: Read>(reader: R) -> Result<Stratification> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut keys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let key = rec
            .get(1)
            .ok_or_else(|| parse_err(i + 2, "expected unit,stratum"))?;
        keys.push(key.to_string());
    }
    Stratification::from_keys(&keys)
}

/// `unit,u1,…,uk` rows read as an N × k matrix, without centering.
pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let k = rdr.headers()?.len().saturating_sub(1);
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(parse_err(
                i + 2,
                format!("expected {} fields, got {}", k + 1, rec.len()),
            ));
        }
        for cell in rec.iter().skip(1) {
            values.push(
                cell.parse::<f64>()
                    .map_err(|e| parse_err(i + 2, format!("{cell:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    if rows == 0 || k == 0 {
        return Err(Error::invalid("matrix file is empty"));
    }
    Ok(DMatrix::from_row_slice(rows, k, &values))
}
