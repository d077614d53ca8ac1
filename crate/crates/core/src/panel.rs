//! Unbalanced weekly return panels, named weekly series, and the CSV formats
//! they travel in.
//!
//! Returns and market caps are stored in percent and USD respectively. A
//! panel cell is either observed (finite value, mask `true`) or unobserved
//! (mask `false`, stored as NaN so that accidental reads poison results
//! instead of silently contributing zeros).

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{FactorKind, FactorSet};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

pub fn parse_date(value: &str, context: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(value.trim(), DATE_FORMAT).map_err(|_| Error::MalformedDate {
        value: value.to_string(),
        context: context.to_string(),
    })
}

/// Checks that dates are strictly increasing with exactly seven days between
/// neighbours.
pub fn check_weekly(index: &[NaiveDate]) -> Result<()> {
    for pair in index.windows(2) {
        if pair[0].checked_add_days(Days::new(7)) != Some(pair[1]) {
            return Err(Error::NotWeekly {
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    Ok(())
}

/// `len` consecutive weekly dates starting at `start`.
pub fn weekly_index(start: NaiveDate, len: usize) -> Vec<NaiveDate> {
    (0..len).map(|k| start + Days::new(7 * k as u64)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Percent,
    Level,
    Ratio,
}

/// A single named series on a time index.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesFrame {
    name: String,
    time_index: Vec<NaiveDate>,
    values: Vec<f64>,
    unit: Unit,
}

impl SeriesFrame {
    pub fn new(name: impl Into<String>, time_index: Vec<NaiveDate>, values: Vec<f64>, unit: Unit) -> Result<Self> {
        let name = name.into();
        if time_index.len() != values.len() {
            return Err(Error::DimensionMismatch {
                context: format!("series {name}"),
                expected: time_index.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series {name}")));
        }
        if let Some(pair) = time_index.windows(2).find(|p| p[0] >= p[1]) {
            return Err(Error::InvalidArgument(format!(
                "series {name}: time index not strictly increasing at {}",
                pair[1]
            )));
        }
        Ok(SeriesFrame {
            name,
            time_index,
            values,
            unit,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn time_index(&self) -> &[NaiveDate] {
        &self.time_index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn value_at(&self, week: NaiveDate) -> Option<f64> {
        self.time_index.binary_search(&week).ok().map(|k| self.values[k])
    }

    /// Reindexes onto `index`; every requested week must be present.
    pub fn restrict(&self, index: &[NaiveDate]) -> Result<SeriesFrame> {
        let values = index
            .iter()
            .map(|&week| {
                self.value_at(week).ok_or(Error::MissingWeek {
                    series: self.name.clone(),
                    week,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SeriesFrame::new(self.name.clone(), index.to_vec(), values, self.unit)
    }

    /// Same index and name, values replaced.
    pub fn with_values(&self, values: Vec<f64>, unit: Unit) -> Result<SeriesFrame> {
        SeriesFrame::new(self.name.clone(), self.time_index.clone(), values, unit)
    }
}

/// Weekly excess-return panel with an explicit observation mask.
#[derive(Debug, Clone)]
pub struct ReturnPanel {
    time_index: Vec<NaiveDate>,
    asset_ids: Vec<String>,
    returns: DMatrix<f64>,
    observed: DMatrix<bool>,
    market_caps: DMatrix<f64>,
}

fn same_bits_or_both_nan(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

impl PartialEq for ReturnPanel {
    fn eq(&self, other: &Self) -> bool {
        self.time_index == other.time_index
            && self.asset_ids == other.asset_ids
            && self.observed == other.observed
            && self.returns.shape() == other.returns.shape()
            && self
                .returns
                .iter()
                .zip(other.returns.iter())
                .all(|(a, b)| same_bits_or_both_nan(*a, *b))
            && self
                .market_caps
                .iter()
                .zip(other.market_caps.iter())
                .all(|(a, b)| same_bits_or_both_nan(*a, *b))
    }
}

impl ReturnPanel {
    /// Builds a panel, validating shapes, weekly spacing and finiteness of
    /// observed cells. Unobserved returns are normalized to NaN; caps may be
    /// NaN anywhere (missing caps are only an error where a weighting step
    /// needs them).
    pub fn new(
        time_index: Vec<NaiveDate>,
        asset_ids: Vec<String>,
        returns: DMatrix<f64>,
        observed: DMatrix<bool>,
        market_caps: DMatrix<f64>,
    ) -> Result<Self> {
        let (t, n) = (time_index.len(), asset_ids.len());
        for (what, shape) in [
            ("returns", returns.shape()),
            ("observed mask", observed.shape()),
            ("market caps", market_caps.shape()),
        ] {
            if shape != (t, n) {
                return Err(Error::DimensionMismatch {
                    context: format!("{what} ({}x{})", shape.0, shape.1),
                    expected: t * n,
                    actual: shape.0 * shape.1,
                });
            }
        }
        check_weekly(&time_index)?;
        let mut seen = HashSet::new();
        for id in &asset_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateKey {
                    kind: "asset",
                    key: id.clone(),
                });
            }
        }
        let mut returns = returns;
        for (r, &obs) in returns.iter_mut().zip(observed.iter()) {
            if obs {
                if !r.is_finite() {
                    return Err(Error::NonFinite("observed return".into()));
                }
            } else {
                *r = f64::NAN;
            }
        }
        Ok(ReturnPanel {
            time_index,
            asset_ids,
            returns,
            observed,
            market_caps,
        })
    }

    /// Panel with every cell observed and no market caps.
    pub fn balanced(start: NaiveDate, returns: DMatrix<f64>) -> Result<Self> {
        let (t, n) = returns.shape();
        let ids = (0..n).map(|i| format!("A{i:04}")).collect();
        ReturnPanel::new(
            weekly_index(start, t),
            ids,
            returns,
            DMatrix::from_element(t, n, true),
            DMatrix::from_element(t, n, f64::NAN),
        )
    }

    pub fn time_index(&self) -> &[NaiveDate] {
        &self.time_index
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn n_weeks(&self) -> usize {
        self.time_index.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    /// Raw T×N return matrix; unobserved cells hold NaN.
    pub fn returns(&self) -> &DMatrix<f64> {
        &self.returns
    }

    pub fn observed_mask(&self) -> &DMatrix<bool> {
        &self.observed
    }

    pub fn market_caps(&self) -> &DMatrix<f64> {
        &self.market_caps
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.observed[(t, i)]
    }

    pub fn ret(&self, t: usize, i: usize) -> Option<f64> {
        self.observed[(t, i)].then(|| self.returns[(t, i)])
    }

    /// Market cap if recorded as a positive finite number.
    pub fn cap(&self, t: usize, i: usize) -> Option<f64> {
        let c = self.market_caps[(t, i)];
        (c.is_finite() && c > 0.0).then_some(c)
    }

    pub fn observations_per_asset(&self) -> Vec<usize> {
        self.observed
            .column_iter()
            .map(|c| c.iter().filter(|&&o| o).count())
            .collect()
    }

    pub fn observations_per_week(&self) -> Vec<usize> {
        self.observed
            .row_iter()
            .map(|r| r.iter().filter(|&&o| o).count())
            .collect()
    }

    pub fn missing_fraction(&self) -> f64 {
        let total = self.observed.len();
        let missing = self.observed.iter().filter(|&&o| !o).count();
        missing as f64 / total as f64
    }

    /// Mean over each asset's observed weeks.
    pub fn asset_means(&self) -> Vec<f64> {
        (0..self.n_assets())
            .map(|i| {
                let (sum, count) = (0..self.n_weeks())
                    .filter_map(|t| self.ret(t, i))
                    .fold((0.0, 0usize), |(s, c), r| (s + r, c + 1));
                sum / count as f64
            })
            .collect()
    }

    /// Keeps the listed assets, in the given order.
    pub fn select_assets(&self, keep: &[usize]) -> ReturnPanel {
        ReturnPanel {
            time_index: self.time_index.clone(),
            asset_ids: keep.iter().map(|&i| self.asset_ids[i].clone()).collect(),
            returns: self.returns.select_columns(keep),
            observed: self.observed.select_columns(keep),
            market_caps: self.market_caps.select_columns(keep),
        }
    }

    /// Drops assets with fewer than `min_obs` observed weeks, returning the
    /// trimmed panel and the ids that were removed.
    pub fn drop_sparse_assets(&self, min_obs: usize) -> (ReturnPanel, Vec<String>) {
        let counts = self.observations_per_asset();
        let keep: Vec<usize> = (0..self.n_assets()).filter(|&i| counts[i] >= min_obs).collect();
        let dropped = (0..self.n_assets())
            .filter(|&i| counts[i] < min_obs)
            .map(|i| self.asset_ids[i].clone())
            .collect();
        (self.select_assets(&keep), dropped)
    }

    /// Restricts to a contiguous sub-range of the time index.
    pub fn restrict_to(&self, index: &[NaiveDate]) -> Result<ReturnPanel> {
        let rows = index
            .iter()
            .map(|&week| {
                self.time_index.binary_search(&week).map_err(|_| Error::MissingWeek {
                    series: "return panel".into(),
                    week,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ReturnPanel::new(
            index.to_vec(),
            self.asset_ids.clone(),
            self.returns.select_rows(&rows),
            self.observed.select_rows(&rows),
            self.market_caps.select_rows(&rows),
        )
    }

    /// Panel built from the given rows in the given order, relabelled as a
    /// fresh weekly series starting at the original first week.
    pub fn select_rows(&self, rows: &[usize]) -> ReturnPanel {
        let start = self.time_index[0];
        ReturnPanel {
            time_index: weekly_index(start, rows.len()),
            asset_ids: self.asset_ids.clone(),
            returns: self.returns.select_rows(rows),
            observed: self.observed.select_rows(rows),
            market_caps: self.market_caps.select_rows(rows),
        }
    }

    /// Panel with returns replaced; mask and caps unchanged.
    pub fn map_returns(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<ReturnPanel> {
        let mut returns = self.returns.clone();
        for t in 0..self.n_weeks() {
            for i in 0..self.n_assets() {
                if self.observed[(t, i)] {
                    returns[(t, i)] = f(t, i, self.returns[(t, i)]);
                }
            }
        }
        ReturnPanel::new(
            self.time_index.clone(),
            self.asset_ids.clone(),
            returns,
            self.observed.clone(),
            self.market_caps.clone(),
        )
    }
}

/// Subtracts the weekly risk-free rate from every observed return.
pub fn to_excess(panel: &ReturnPanel, rf: &SeriesFrame) -> Result<ReturnPanel> {
    let rf = rf.restrict(panel.time_index())?;
    let rates = rf.values();
    panel.map_returns(|t, _, r| r - rates[t])
}

/// Restricts every frame to the panel's time index, preserving order.
pub fn align(frames: &[(SeriesFrame, FactorKind)], panel: &ReturnPanel) -> Result<FactorSet> {
    let aligned = frames
        .iter()
        .map(|(frame, kind)| Ok((frame.restrict(panel.time_index())?, *kind)))
        .collect::<Result<Vec<_>>>()?;
    FactorSet::from_frames(panel.time_index().to_vec(), &aligned)
}

/// Weeks present in every frame, in increasing order.
pub fn common_index<'a>(frames: impl IntoIterator<Item = &'a [NaiveDate]>) -> Vec<NaiveDate> {
    let mut iter = frames.into_iter();
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    let mut common: Vec<NaiveDate> = first.to_vec();
    for index in iter {
        let set: HashSet<&NaiveDate> = index.iter().collect();
        common.retain(|d| set.contains(d));
    }
    common
}

pub(crate) fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Wide CSV table: a `date` column followed by one numeric column per id.
#[derive(Debug, Clone)]
pub(crate) struct WideTable {
    pub dates: Vec<NaiveDate>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
}

pub(crate) fn read_wide<R: Read>(reader: R, context: &str) -> Result<WideTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(context, e))?.clone();
    let mut header_iter = headers.iter();
    match header_iter.next() {
        Some(h) if h.trim() == "date" => {}
        other => {
            return Err(Error::HeaderMismatch(format!(
                "{context}: first column must be `date`, found {other:?}"
            )))
        }
    }
    let columns: Vec<String> = header_iter.map(|h| h.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for c in &columns {
        if !seen.insert(c.as_str()) {
            return Err(Error::DuplicateKey {
                kind: "asset",
                key: c.clone(),
            });
        }
    }
    let mut rows: Vec<(NaiveDate, Vec<Option<f64>>)> = Vec::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::csv(context, e))?;
        let date = parse_date(&record[0], context)?;
        let cells = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, cell)| parse_cell(cell, context, row_no + 1, &columns[j]))
            .collect::<Result<Vec<_>>>()?;
        rows.push((date, cells));
    }
    rows.sort_by_key(|(d, _)| *d);
    if let Some(pair) = rows.windows(2).find(|p| p[0].0 == p[1].0) {
        return Err(Error::DuplicateKey {
            kind: "time",
            key: pair[0].0.to_string(),
        });
    }
    let (dates, cells) = rows.into_iter().unzip();
    Ok(WideTable { dates, columns, cells })
}

fn parse_cell(cell: &str, context: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::NonNumeric {
            context: context.to_string(),
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Loads a return panel from the returns and market-cap CSV files.
///
/// Assets observed in fewer than two weeks are dropped with a warning.
pub fn load_panel(returns_csv: &Path, caps_csv: &Path) -> Result<ReturnPanel> {
    let returns = read_wide(open(returns_csv)?, &returns_csv.display().to_string())?;
    let caps = read_wide(open(caps_csv)?, &caps_csv.display().to_string())?;
    panel_from_tables(returns, caps)
}

pub fn load_panel_from_readers<R1: Read, R2: Read>(returns: R1, caps: R2) -> Result<ReturnPanel> {
    let returns = read_wide(returns, "returns")?;
    let caps = read_wide(caps, "market caps")?;
    panel_from_tables(returns, caps)
}

fn panel_from_tables(returns: WideTable, caps: WideTable) -> Result<ReturnPanel> {
    let ret_set: HashSet<&String> = returns.columns.iter().collect();
    let cap_set: HashSet<&String> = caps.columns.iter().collect();
    if ret_set != cap_set {
        return Err(Error::HeaderMismatch(
            "returns and market-cap files list different asset ids".into(),
        ));
    }
    if returns.dates != caps.dates {
        return Err(Error::HeaderMismatch(
            "returns and market-cap files cover different dates".into(),
        ));
    }
    let cap_pos: Vec<usize> = returns
        .columns
        .iter()
        .map(|id| caps.columns.iter().position(|c| c == id).expect("same id set"))
        .collect();
    let (t, n) = (returns.dates.len(), returns.columns.len());
    let ret_m = DMatrix::from_fn(t, n, |r, c| returns.cells[r][c].unwrap_or(f64::NAN));
    let mask = DMatrix::from_fn(t, n, |r, c| returns.cells[r][c].is_some());
    let cap_m = DMatrix::from_fn(t, n, |r, c| caps.cells[r][cap_pos[c]].unwrap_or(f64::NAN));
    let panel = ReturnPanel::new(returns.dates, returns.columns, ret_m, mask, cap_m)?;
    let (panel, dropped) = panel.drop_sparse_assets(2);
    if !dropped.is_empty() {
        log::warn!(
            "dropped {} asset(s) with fewer than 2 observed weeks: {}",
            dropped.len(),
            dropped.join(", ")
        );
    }
    Ok(panel)
}

fn write_matrix<W: Write>(
    writer: W,
    index: &[NaiveDate],
    ids: &[String],
    cell: impl Fn(usize, usize) -> String,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["date".to_string()];
    header.extend(ids.iter().cloned());
    wtr.write_record(&header).map_err(|e| Error::csv("panel output", e))?;
    for (t, date) in index.iter().enumerate() {
        let mut row = vec![date.format(DATE_FORMAT).to_string()];
        row.extend((0..ids.len()).map(|i| cell(t, i)));
        wtr.write_record(&row).map_err(|e| Error::csv("panel output", e))?;
    }
    wtr.flush().map_err(|e| Error::csv("panel output", e))?;
    Ok(())
}

pub fn write_panel_to<W1: Write, W2: Write>(panel: &ReturnPanel, returns: W1, caps: W2) -> Result<()> {
    write_matrix(returns, panel.time_index(), panel.asset_ids(), |t, i| {
        panel.ret(t, i).map(format_value).unwrap_or_default()
    })?;
    write_matrix(caps, panel.time_index(), panel.asset_ids(), |t, i| {
        format_value(panel.market_caps()[(t, i)])
    })
}

pub fn write_panel(panel: &ReturnPanel, returns_csv: &Path, caps_csv: &Path) -> Result<()> {
    write_panel_to(panel, create(returns_csv)?, create(caps_csv)?)
}

/// Writes a T×N matrix as a wide `date,<id>...` CSV; non-finite cells are
/// left blank.
pub fn write_matrix_csv(path: &Path, index: &[NaiveDate], ids: &[String], m: &DMatrix<f64>) -> Result<()> {
    if m.shape() != (index.len(), ids.len()) {
        return Err(Error::DimensionMismatch {
            context: format!("matrix written to {}", path.display()),
            expected: index.len() * ids.len(),
            actual: m.len(),
        });
    }
    write_matrix(create(path)?, index, ids, |t, i| format_value(m[(t, i)]))
}

/// Reads a wide CSV written by [`write_matrix_csv`]; blank cells become NaN.
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<NaiveDate>, Vec<String>, DMatrix<f64>)> {
    let table = read_wide(open(path)?, &path.display().to_string())?;
    let (t, n) = (table.dates.len(), table.columns.len());
    let m = DMatrix::from_fn(t, n, |r, c| table.cells[r][c].unwrap_or(f64::NAN));
    Ok((table.dates, table.columns, m))
}

/// Reads a two-column `date,<name>` series file.
pub fn load_series(path: &Path, unit: Unit) -> Result<SeriesFrame> {
    let table = read_wide(open(path)?, &path.display().to_string())?;
    series_from_table(table, unit, &path.display().to_string())
}

pub fn load_series_from_reader<R: Read>(reader: R, unit: Unit) -> Result<SeriesFrame> {
    series_from_table(read_wide(reader, "series")?, unit, "series")
}

fn series_from_table(table: WideTable, unit: Unit, context: &str) -> Result<SeriesFrame> {
    if table.columns.len() != 1 {
        return Err(Error::HeaderMismatch(format!(
            "{context}: expected `date` plus one value column, found {} value columns",
            table.columns.len()
        )));
    }
    let name = table.columns[0].clone();
    let values = table
        .cells
        .iter()
        .enumerate()
        .map(|(row, cells)| {
            cells[0].ok_or_else(|| Error::NonNumeric {
                context: context.to_string(),
                row: row + 1,
                column: name.clone(),
                value: String::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SeriesFrame::new(name, table.dates, values, unit)
}

pub fn write_series(path: &Path, series: &SeriesFrame) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let ctx = path.display().to_string();
    wtr.write_record(["date", series.name()])
        .map_err(|e| Error::csv(&ctx, e))?;
    for (d, v) in series.time_index().iter().zip(series.values()) {
        wtr.write_record([d.format(DATE_FORMAT).to_string(), format_value(*v)])
            .map_err(|e| Error::csv(&ctx, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}
