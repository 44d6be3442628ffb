//! Domain risk, percent-change tables and their serialisations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ChunkView;
use crate::emulator::{Emulator, EmulatorError, EmulatorKind};
use crate::grid::{forecast_rmses, GridError, LatWeights, Variable};
use crate::split::Protocol;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("domain has no chunks")]
    EmptyDomain,
    #[error("no domains given")]
    NoDomains,
    #[error("{0} is not an output variable")]
    NotAnOutput(Variable),
    #[error("baseline RMSE must be positive and finite, got {0}")]
    BadBaseline(f64),
    #[error("shifted RMSE must be non-negative and finite, got {0}")]
    BadShift(f64),
    #[error("invalid record {0}")]
    InvalidRecord(String),
    #[error("duplicate record for {0}")]
    Duplicate(String),
    #[error("incomplete results: {0}")]
    Incomplete(String),
    #[error("no records")]
    Empty,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// RMSE of one emulator on one (oracle, protocol, variable) test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub emulator: EmulatorKind,
    pub oracle: String,
    pub protocol: Protocol,
    pub variable: Variable,
    pub rmse: f64,
    pub n_forecasts: usize,
}

impl EvalRecord {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.rmse.is_finite() && self.rmse >= 0.0) || self.n_forecasts == 0 {
            return Err(EvalError::InvalidRecord(format!(
                "{}: rmse {} over {} forecasts",
                self.cell_label(),
                self.rmse,
                self.n_forecasts
            )));
        }
        Ok(())
    }

    fn cell_label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.emulator,
            self.variable.name(),
            self.oracle,
            self.protocol
        )
    }

    fn key(&self) -> RecordKey {
        (self.emulator, self.variable, self.oracle.clone(), self.protocol.clone())
    }
}

type RecordKey = (EmulatorKind, Variable, String, Protocol);

fn output_channel(variable: Variable) -> Result<usize, EvalError> {
    Variable::OUTPUTS
        .iter()
        .position(|v| *v == variable)
        .ok_or(EvalError::NotAnOutput(variable))
}

/// Per-forecast RMSEs of `emulator` on every month of `chunks`, for each
/// output variable (TAS, PR).
fn per_forecast(
    emulator: &Emulator,
    chunks: &[ChunkView<'_>],
    weights: &LatWeights,
) -> Result<[Vec<f64>; 2], EvalError> {
    if chunks.is_empty() {
        return Err(EvalError::EmptyDomain);
    }
    let mut out = [Vec::new(), Vec::new()];
    for chunk in chunks {
        let pred = emulator.predict(chunk.inputs)?;
        for (v, acc) in out.iter_mut().enumerate() {
            acc.extend(forecast_rmses(
                &pred.index_axis(Axis(1), v),
                &chunk.outputs.index_axis(Axis(1), v),
                weights,
            )?);
        }
    }
    Ok(out)
}

/// Empirical risk on one domain: latitude-weighted RMSE of `variable`,
/// square root per monthly forecast, averaged over all forecasts.
pub fn domain_risk(
    emulator: &Emulator,
    chunks: &[ChunkView<'_>],
    weights: &LatWeights,
    variable: Variable,
) -> Result<f64, EvalError> {
    let channel = output_channel(variable)?;
    if chunks.is_empty() {
        return Err(EvalError::EmptyDomain);
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for chunk in chunks {
        let pred = emulator.predict(chunk.inputs)?;
        let per = forecast_rmses(
            &pred.slice(s![.., channel, .., ..]),
            &chunk.outputs.slice(s![.., channel, .., ..]),
            weights,
        )?;
        total += per.iter().sum::<f64>();
        n += per.len();
    }
    Ok(total / n as f64)
}

/// Largest domain risk and the label of the domain attaining it. Ties go to
/// the lexicographically smallest label.
pub fn worst_case_risk(
    emulator: &Emulator,
    domains: &[(String, Vec<ChunkView<'_>>)],
    weights: &LatWeights,
    variable: Variable,
) -> Result<(f64, String), EvalError> {
    let mut best: Option<(f64, &str)> = None;
    for (label, chunks) in domains {
        let risk = domain_risk(emulator, chunks, weights, variable)?;
        let better = match best {
            None => true,
            Some((r, l)) => risk > r || (risk == r && label.as_str() < l),
        };
        if better {
            best = Some((risk, label));
        }
    }
    best.map(|(r, l)| (r, l.to_string())).ok_or(EvalError::NoDomains)
}

/// `100 * (shift - base) / base`; negative values are improvements.
pub fn percent_change(rmse_base: f64, rmse_shift: f64) -> Result<f64, EvalError> {
    if !(rmse_base.is_finite() && rmse_base > 0.0) {
        return Err(EvalError::BadBaseline(rmse_base));
    }
    if !(rmse_shift.is_finite() && rmse_shift >= 0.0) {
        return Err(EvalError::BadShift(rmse_shift));
    }
    Ok(100.0 * (rmse_shift - rmse_base) / rmse_base)
}

/// Both output-variable records for one emulator on one test set.
pub fn evaluate(
    emulator: &Emulator,
    chunks: &[ChunkView<'_>],
    weights: &LatWeights,
    oracle: &str,
    protocol: &Protocol,
) -> Result<Vec<EvalRecord>, EvalError> {
    let per = per_forecast(emulator, chunks, weights)?;
    Ok(Variable::OUTPUTS
        .iter()
        .zip(per)
        .map(|(&variable, rmses)| EvalRecord {
            emulator: emulator.kind(),
            oracle: oracle.to_string(),
            protocol: protocol.clone(),
            variable,
            rmse: rmses.iter().sum::<f64>() / rmses.len() as f64,
            n_forecasts: rmses.len(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Column {
    pub oracle: String,
    pub protocol: Protocol,
}

impl Column {
    pub fn label(&self) -> String {
        format!("{}/{}", self.oracle, self.protocol)
    }
}

/// One percent-change value together with the records it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub percent_change: f64,
    pub baseline: EvalRecord,
    pub shifted: EvalRecord,
}

/// Rows are (emulator, variable), columns (oracle, shift protocol), followed
/// by one cross-oracle mean column per shift protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<(EmulatorKind, Variable)>,
    pub columns: Vec<Column>,
    pub mean_protocols: Vec<Protocol>,
    /// `cells[row][column]`; `None` only in partial tables.
    pub cells: Vec<Vec<Option<Cell>>>,
    /// `means[row][protocol]` over the oracles with a value, `None` if none.
    pub means: Vec<Vec<Option<f64>>>,
}

impl ResultsTable {
    pub fn n_cells(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_some()).count()
    }

    pub fn missing(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (r, row) in self.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                if cell.is_none() {
                    let (e, v) = self.rows[r];
                    out.push(format!("{e}/{}/{}", v.name(), self.columns[c].label()));
                }
            }
        }
        out
    }

    pub fn get(&self, emulator: EmulatorKind, variable: Variable, oracle: &str, protocol: &Protocol) -> Option<&Cell> {
        let r = self.rows.iter().position(|x| *x == (emulator, variable))?;
        let c = self
            .columns
            .iter()
            .position(|col| col.oracle == oracle && &col.protocol == protocol)?;
        self.cells[r][c].as_ref()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["emulator".to_string(), "variable".to_string()];
        h.extend(self.columns.iter().map(Column::label));
        h.extend(self.mean_protocols.iter().map(|p| format!("mean/{p}")));
        h
    }

    fn row_values(&self, r: usize, fmt: impl Fn(f64) -> String) -> Vec<String> {
        let (e, v) = self.rows[r];
        let mut out = vec![e.to_string(), v.name().to_string()];
        let missing = || "NA".to_string();
        out.extend(
            self.cells[r]
                .iter()
                .map(|c| c.as_ref().map_or_else(missing, |c| fmt(c.percent_change))),
        );
        out.extend(self.means[r].iter().map(|m| m.map_or_else(missing, &fmt)));
        out
    }

    /// Full-precision CSV, one line per row.
    pub fn to_csv(&self) -> String {
        let mut s = self.header().join(",");
        s.push('\n');
        for r in 0..self.rows.len() {
            s.push_str(&self.row_values(r, |v| format!("{v}")).join(","));
            s.push('\n');
        }
        s
    }

    /// Markdown with two decimals; `flag` marks cells above the threshold.
    pub fn to_markdown(&self, threshold: Option<f64>) -> String {
        let header = self.header();
        let mut s = format!("| {} |\n", header.join(" | "));
        s.push_str(&format!("|{}\n", "---|".repeat(header.len())));
        for r in 0..self.rows.len() {
            let values = self.row_values(r, |v| {
                let flag = threshold.is_some_and(|t| v > t);
                format!("{v:+.2}{}", if flag { " !" } else { "" })
            });
            s.push_str(&format!("| {} |\n", values.join(" | ")));
        }
        s
    }

    /// Column-aligned plain text.
    pub fn to_text(&self, threshold: Option<f64>) -> String {
        let mut lines = vec![self.header()];
        for r in 0..self.rows.len() {
            lines.push(self.row_values(r, |v| {
                let flag = threshold.is_some_and(|t| v > t);
                format!("{v:+.2}{}", if flag { "*" } else { "" })
            }));
        }
        let n_cols = lines[0].len();
        let widths: Vec<usize> = (0..n_cols)
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut s = String::new();
        for line in &lines {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (v, w))| if i < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        }
        s
    }

    /// Cells whose percent change exceeds `threshold`.
    pub fn flagged(&self, threshold: f64) -> Vec<&Cell> {
        self.cells
            .iter()
            .flatten()
            .flatten()
            .filter(|c| c.percent_change > threshold)
            .collect()
    }
}

fn index_records(records: &[EvalRecord]) -> Result<BTreeMap<RecordKey, &EvalRecord>, EvalError> {
    let mut by_key = BTreeMap::new();
    for r in records {
        r.validate()?;
        if by_key.insert(r.key(), r).is_some() {
            return Err(EvalError::Duplicate(r.cell_label()));
        }
    }
    Ok(by_key)
}

fn assemble(records: &[EvalRecord], strict: bool) -> Result<ResultsTable, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let by_key = index_records(records)?;
    let rows: BTreeSet<(EmulatorKind, Variable)> = by_key.keys().map(|k| (k.0, k.1)).collect();
    let oracles: BTreeSet<&str> = by_key.keys().map(|k| k.2.as_str()).collect();
    let protocols: BTreeSet<&Protocol> = by_key.keys().map(|k| &k.3).filter(|p| p.is_shift()).collect();
    let columns: Vec<Column> = oracles
        .iter()
        .flat_map(|o| {
            protocols.iter().map(move |p| Column {
                oracle: o.to_string(),
                protocol: (*p).clone(),
            })
        })
        .collect();
    let rows: Vec<_> = rows.into_iter().collect();

    let mut cells = Vec::with_capacity(rows.len());
    for &(e, v) in &rows {
        let mut row = Vec::with_capacity(columns.len());
        for col in &columns {
            let base = by_key.get(&(e, v, col.oracle.clone(), Protocol::Baseline));
            let shifted = by_key.get(&(e, v, col.oracle.clone(), col.protocol.clone()));
            let cell = match (base, shifted) {
                (Some(b), Some(sh)) => Some(Cell {
                    percent_change: percent_change(b.rmse, sh.rmse)?,
                    baseline: (*b).clone(),
                    shifted: (*sh).clone(),
                }),
                _ if strict => {
                    let what = if base.is_none() { "baseline" } else { "shifted" };
                    return Err(EvalError::Incomplete(format!(
                        "missing {what} record for {e}/{}/{}",
                        v.name(),
                        col.label()
                    )));
                }
                _ => None,
            };
            row.push(cell);
        }
        cells.push(row);
    }

    let mean_protocols: Vec<Protocol> = protocols.into_iter().cloned().collect();
    let means = cells
        .iter()
        .map(|row: &Vec<Option<Cell>>| {
            mean_protocols
                .iter()
                .map(|p| {
                    let vals: Vec<f64> = row
                        .iter()
                        .zip(&columns)
                        .filter(|(_, col)| &col.protocol == p)
                        .filter_map(|(c, _)| c.as_ref().map(|c| c.percent_change))
                        .collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect();
    Ok(ResultsTable {
        rows,
        columns,
        mean_protocols,
        cells,
        means,
    })
}

/// Percent-change table; every (emulator, variable) x (oracle, shift
/// protocol) cell must have both of its records.
pub fn build_results_table(records: &[EvalRecord]) -> Result<ResultsTable, EvalError> {
    assemble(records, true)
}

/// Like [`build_results_table`] but leaves cells without records empty.
pub fn build_partial_results_table(records: &[EvalRecord]) -> Result<ResultsTable, EvalError> {
    assemble(records, false)
}

/// Sorted so the output does not depend on evaluation order.
pub fn records_to_csv(records: &[EvalRecord]) -> Result<String, EvalError> {
    let mut sorted: Vec<&EvalRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.key().cmp(&b.key()));
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in sorted {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| EvalError::InvalidRecord(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn records_from_csv(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let records: Vec<EvalRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, EvalError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let records: Vec<EvalRecord> = rdr.deserialize().collect::<Result<_, _>>()?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}
