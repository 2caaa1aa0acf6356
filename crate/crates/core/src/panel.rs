//! Balanced outcome panels, CSV ingestion, historical block splitting and
//! synthetic treatment injection.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::DesignMatrix;
use crate::error::{Error, Result};

/// N×T matrix of outcomes with unit and period labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix {
    values: DMatrix<f64>,
    unit_ids: Vec<String>,
    period_ids: Vec<String>,
}

impl PanelMatrix {
    pub fn new(
        values: DMatrix<f64>,
        unit_ids: Vec<String>,
        period_ids: Vec<String>,
    ) -> Result<Self> {
        let (n, t) = values.shape();
        if n < 2 || t < 2 {
            return Err(Error::invalid(format!(
                "panel must be at least 2×2, got {n}×{t}"
            )));
        }
        if unit_ids.len() != n || period_ids.len() != t {
            return Err(Error::Dimension(format!(
                "{}×{} labels for a {n}×{t} panel",
                unit_ids.len(),
                period_ids.len()
            )));
        }
        if let Some(((i, j), _)) = values
            .iter()
            .enumerate()
            .map(|(k, v)| ((k % n, k / n), v))
            .find(|(_, v)| !v.is_finite())
        {
            return Err(Error::invalid(format!(
                "non-finite value at unit {}, period {}",
                unit_ids[i], period_ids[j]
            )));
        }
        ensure_unique(&unit_ids, "unit")?;
        ensure_unique(&period_ids, "period")?;
        Ok(PanelMatrix {
            values,
            unit_ids,
            period_ids,
        })
    }

    /// Panel with labels `u1..uN` and `1..T`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let unit_ids = (1..=values.nrows()).map(|i| format!("u{i}")).collect();
        let period_ids = (1..=values.ncols()).map(|t| t.to_string()).collect();
        PanelMatrix::new(values, unit_ids, period_ids)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_ids(&self) -> &[String] {
        &self.period_ids
    }

    pub fn n_units(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.values.ncols()
    }

    /// Columns `start..start + len`.
    pub fn periods(&self, start: usize, len: usize) -> Result<PanelMatrix> {
        if start + len > self.n_periods() {
            return Err(Error::invalid(format!(
                "periods {}..{} exceed the panel's {} periods",
                start + 1,
                start + len,
                self.n_periods()
            )));
        }
        PanelMatrix::new(
            self.values.columns(start, len).into_owned(),
            self.unit_ids.clone(),
            self.period_ids[start..start + len].to_vec(),
        )
    }

    /// Rows for the given units, in that order.
    pub fn units(&self, units: &[usize]) -> Result<PanelMatrix> {
        PanelMatrix::new(
            self.values.select_rows(units),
            units.iter().map(|&i| self.unit_ids[i].clone()).collect(),
            self.period_ids.clone(),
        )
    }

    pub fn with_values(&self, values: DMatrix<f64>) -> Result<PanelMatrix> {
        PanelMatrix::new(values, self.unit_ids.clone(), self.period_ids.clone())
    }
}

fn ensure_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::invalid(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelFormat {
    /// Rows `unit,period,value`.
    Long,
    /// Header `unit,<period>...`, one row per unit.
    Wide,
}

pub fn load_panel(path: impl AsRef<Path>, format: PanelFormat) -> Result<PanelMatrix> {
    read_panel(std::fs::File::open(path)?, format)
}

pub fn read_panel<R: Read>(reader: R, format: PanelFormat) -> Result<PanelMatrix> {
    match format {
        PanelFormat::Long => read_long(reader),
        PanelFormat::Wide => read_wide(reader),
    }
}

fn parse_value(raw: &str, line: usize) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| Error::Parse {
        line,
        message: format!("value {raw:?} is not a number"),
    })
}

/// Order period labels: all integers, or all ISO dates.
fn period_order(labels: &[String]) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    if let Ok(ints) = labels
        .iter()
        .map(|p| p.trim().parse::<i64>())
        .collect::<std::result::Result<Vec<_>, _>>()
    {
        idx.sort_by_key(|&k| ints[k]);
        return Ok(idx);
    }
    if let Ok(dates) = labels
        .iter()
        .map(|p| NaiveDate::parse_from_str(p.trim(), "%Y-%m-%d"))
        .collect::<std::result::Result<Vec<_>, _>>()
    {
        idx.sort_by_key(|&k| dates[k]);
        return Ok(idx);
    }
    Err(Error::invalid(
        "period labels must all be integers or all be ISO dates (YYYY-MM-DD)",
    ))
}

fn read_long<R: Read>(reader: R) -> Result<PanelMatrix> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("missing column {name:?}"),
            })
    };
    let (cu, cp, cv) = (col("unit")?, col("period")?, col("value")?);

    let mut units: Vec<String> = Vec::new();
    let mut unit_index: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();
    let mut period_index: HashMap<String, usize> = HashMap::new();
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();

    for (k, record) in csv.records().enumerate() {
        let line = k + 2;
        let record = record?;
        let field = |c: usize| {
            record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: "row has too few fields".into(),
            })
        };
        let (unit, period) = (field(cu)?.to_string(), field(cp)?.to_string());
        let value = parse_value(field(cv)?, line)?;
        let i = *unit_index.entry(unit.clone()).or_insert_with(|| {
            units.push(unit);
            units.len() - 1
        });
        let t = *period_index.entry(period.clone()).or_insert_with(|| {
            periods.push(period);
            periods.len() - 1
        });
        if cells.insert((i, t), value).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate cell ({}, {})", units[i], periods[t]),
            });
        }
    }

    let order = period_order(&periods)?;
    let mut values = DMatrix::zeros(units.len(), periods.len());
    for (i, unit) in units.iter().enumerate() {
        for (col, &t) in order.iter().enumerate() {
            values[(i, col)] = *cells.get(&(i, t)).ok_or_else(|| Error::MissingCell {
                unit: unit.clone(),
                period: periods[t].clone(),
            })?;
        }
    }
    let period_ids = order.iter().map(|&t| periods[t].clone()).collect();
    PanelMatrix::new(values, units, period_ids)
}

fn read_wide<R: Read>(reader: R) -> Result<PanelMatrix> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let periods: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let order = period_order(&periods)?;

    let mut units = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, record) in csv.records().enumerate() {
        let line = k + 2;
        let record = record?;
        let unit = record.get(0).unwrap_or_default().to_string();
        let mut row = Vec::with_capacity(periods.len());
        for (t, period) in periods.iter().enumerate() {
            let raw =
                record
                    .get(t + 1)
                    .filter(|s| !s.is_empty())
                    .ok_or_else(|| Error::MissingCell {
                        unit: unit.clone(),
                        period: period.clone(),
                    })?;
            row.push(parse_value(raw, line)?);
        }
        units.push(unit);
        rows.push(row);
    }
    let values = DMatrix::from_fn(rows.len(), periods.len(), |i, col| rows[i][order[col]]);
    let period_ids = order.iter().map(|&t| periods[t].clone()).collect();
    PanelMatrix::new(values, units, period_ids)
}

/// Write `unit,period,value` rows.
pub fn write_panel_long<W: std::io::Write>(panel: &PanelMatrix, writer: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["unit", "period", "value"])?;
    for (i, unit) in panel.unit_ids.iter().enumerate() {
        for (t, period) in panel.period_ids.iter().enumerate() {
            csv.write_record([
                unit.as_str(),
                period.as_str(),
                &panel.values[(i, t)].to_string(),
            ])?;
        }
    }
    csv.flush()?;
    Ok(())
}

/// Consecutive equal-length windows of a historical panel.
#[derive(Debug, Clone)]
pub struct BlockSplit {
    pub blocks: Vec<PanelMatrix>,
    pub window_stride: usize,
    pub overlap_allowed: bool,
}

impl BlockSplit {
    pub fn from_blocks(blocks: Vec<PanelMatrix>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("need at least one block"))?;
        if blocks
            .iter()
            .any(|b| b.values.shape() != first.values.shape())
        {
            return Err(Error::Dimension("blocks differ in shape".into()));
        }
        Ok(BlockSplit {
            blocks,
            window_stride: 0,
            overlap_allowed: true,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn n_units(&self) -> usize {
        self.blocks[0].n_units()
    }

    pub fn n_periods(&self) -> usize {
        self.blocks[0].n_periods()
    }
}

/// Block `j` (0-based) covers periods `j·stride .. j·stride + block_len`.
pub fn split_blocks(
    history: &PanelMatrix,
    block_len: usize,
    count: usize,
    stride: usize,
) -> Result<BlockSplit> {
    if stride == 0 || count == 0 || block_len < 2 {
        return Err(Error::invalid(
            "need stride ≥ 1, at least one block and block length ≥ 2",
        ));
    }
    let t_total = history.n_periods();
    let max_blocks = if block_len > t_total {
        0
    } else {
        (t_total - block_len) / stride + 1
    };
    if count > max_blocks {
        return Err(Error::BlocksDoNotFit { max_blocks });
    }
    let blocks = (0..count)
        .map(|j| history.periods(j * stride, block_len))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockSplit {
        blocks,
        window_stride: stride,
        overlap_allowed: stride < block_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Direct,
    Carryover,
}

/// Effect added to treated outcomes; `taus[l]` applies `l` periods after
/// adoption and later effects accumulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEffect {
    kind: EffectKind,
    taus: Vec<f64>,
}

impl SyntheticEffect {
    pub fn direct(tau: f64) -> Self {
        SyntheticEffect {
            kind: EffectKind::Direct,
            taus: vec![tau],
        }
    }

    pub fn carryover(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::invalid("carryover effect needs at least one τ"));
        }
        if taus.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("effects must be finite"));
        }
        Ok(SyntheticEffect {
            kind: EffectKind::Carryover,
            taus,
        })
    }

    pub fn kind(&self) -> EffectKind {
        self.kind
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    /// Number of lagged periods `ℓ`.
    pub fn lags(&self) -> usize {
        self.taus.len() - 1
    }
}

/// Add the synthetic effect to a control panel under `design`.
pub fn apply_synthetic_treatment(
    control: &PanelMatrix,
    design: &DesignMatrix,
    effect: &SyntheticEffect,
) -> Result<PanelMatrix> {
    if control.values.shape() != (design.n_units(), design.n_periods()) {
        return Err(Error::Dimension(format!(
            "panel is {}×{}, design is {}×{}",
            control.n_units(),
            control.n_periods(),
            design.n_units(),
            design.n_periods()
        )));
    }
    let mut values = control.values.clone();
    match effect.kind {
        EffectKind::Direct => {
            let tau = effect.taus[0];
            for (v, &z) in values.iter_mut().zip(design.entries().iter()) {
                if z > 0 {
                    *v += tau;
                }
            }
        }
        EffectKind::Carryover => {
            if !design.all_rows_monotone() {
                return Err(Error::invalid(
                    "carryover effects are only defined for staggered (monotone) designs",
                ));
            }
            let cumulative: Vec<f64> = effect
                .taus
                .iter()
                .scan(0.0, |acc, t| {
                    *acc += t;
                    Some(*acc)
                })
                .collect();
            for (i, adoption) in design.adoption_periods().into_iter().enumerate() {
                let Some(a) = adoption else { continue };
                for t in (a - 1)..design.n_periods() {
                    let since = t + 1 - a;
                    values[(i, t)] += cumulative[since.min(effect.lags())];
                }
            }
        }
    }
    control.with_values(values)
}
