//! Observed factor construction: the value-weighted market, quartile-sorted
//! long-short portfolios, and residualized non-tradable state variables.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mean, ols, sample_var, with_intercept};
use crate::panel::{create, format_value, open, parse_date, weekly_index, ReturnPanel, SeriesFrame, Unit, DATE_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorKind {
    Tradable,
    Nontradable,
}

impl FactorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FactorKind::Tradable => "tradable",
            FactorKind::Nontradable => "nontradable",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "tradable" => Some(FactorKind::Tradable),
            "nontradable" => Some(FactorKind::Nontradable),
            _ => None,
        }
    }
}

/// L observed factors aligned on one weekly time index.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorSet {
    time_index: Vec<NaiveDate>,
    names: Vec<String>,
    values: DMatrix<f64>,
    kinds: Vec<FactorKind>,
}

impl FactorSet {
    pub fn new(
        time_index: Vec<NaiveDate>,
        names: Vec<String>,
        values: DMatrix<f64>,
        kinds: Vec<FactorKind>,
    ) -> Result<Self> {
        if values.shape() != (time_index.len(), names.len()) || kinds.len() != names.len() {
            return Err(Error::DimensionMismatch {
                context: "factor set".into(),
                expected: time_index.len() * names.len(),
                actual: values.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateKey {
                    kind: "factor",
                    key: name.clone(),
                });
            }
        }
        if let Some(j) = (0..names.len()).find(|&j| values.column(j).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("factor {}", names[j])));
        }
        Ok(FactorSet {
            time_index,
            names,
            values,
            kinds,
        })
    }

    /// Frames must already share `time_index`.
    pub fn from_frames(time_index: Vec<NaiveDate>, frames: &[(SeriesFrame, FactorKind)]) -> Result<Self> {
        for (frame, _) in frames {
            if frame.time_index() != time_index.as_slice() {
                return Err(Error::InvalidArgument(format!(
                    "factor {} is not on the common time index",
                    frame.name()
                )));
            }
        }
        let values = DMatrix::from_fn(time_index.len(), frames.len(), |t, j| frames[j].0.values()[t]);
        FactorSet::new(
            time_index,
            frames.iter().map(|(f, _)| f.name().to_string()).collect(),
            values,
            frames.iter().map(|(_, k)| *k).collect(),
        )
    }

    pub fn time_index(&self) -> &[NaiveDate] {
        &self.time_index
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FactorKind] {
        &self.kinds
    }

    /// T×L matrix of realizations.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n_weeks(&self) -> usize {
        self.time_index.len()
    }

    pub fn n_factors(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn series(&self, j: usize) -> SeriesFrame {
        let unit = match self.kinds[j] {
            FactorKind::Tradable => Unit::Percent,
            FactorKind::Nontradable => Unit::Level,
        };
        SeriesFrame::new(self.names[j].clone(), self.time_index.clone(), self.column(j), unit)
            .expect("factor columns are finite and on a valid index")
    }

    pub fn restrict_to(&self, index: &[NaiveDate]) -> Result<FactorSet> {
        let rows = index
            .iter()
            .map(|&week| {
                self.time_index.binary_search(&week).map_err(|_| Error::MissingWeek {
                    series: "factor set".into(),
                    week,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        FactorSet::new(
            index.to_vec(),
            self.names.clone(),
            self.values.select_rows(&rows),
            self.kinds.clone(),
        )
    }

    /// Rows in the given order, relabelled as a fresh weekly series.
    pub fn select_rows(&self, rows: &[usize]) -> FactorSet {
        FactorSet {
            time_index: weekly_index(self.time_index[0], rows.len()),
            names: self.names.clone(),
            values: self.values.select_rows(rows),
            kinds: self.kinds.clone(),
        }
    }

    pub fn select_factors(&self, keep: &[usize]) -> FactorSet {
        FactorSet {
            time_index: self.time_index.clone(),
            names: keep.iter().map(|&j| self.names[j].clone()).collect(),
            values: self.values.select_columns(keep),
            kinds: keep.iter().map(|&j| self.kinds[j]).collect(),
        }
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: &[f64]) -> Result<FactorSet> {
        let mut m = self.values.clone();
        m.set_column(j, &DVector::from_column_slice(values));
        FactorSet::new(self.time_index.clone(), self.names.clone(), m, self.kinds.clone())
    }

    /// Writes `factors.csv`: a `date` header, a `kind` metadata row, then one
    /// row per week.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::csv("factors output", e);
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header).map_err(err)?;
        let mut kinds = vec!["kind".to_string()];
        kinds.extend(self.kinds.iter().map(|k| k.as_str().to_string()));
        wtr.write_record(&kinds).map_err(err)?;
        for (t, d) in self.time_index.iter().enumerate() {
            let mut row = vec![d.format(DATE_FORMAT).to_string()];
            row.extend(self.values.row(t).iter().map(|v| format_value(*v)));
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::csv("factors output", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(create(path)?)
    }

    pub fn read_csv_from<R: Read>(reader: R, context: &str) -> Result<FactorSet> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::csv(context, e))?.clone();
        if headers.get(0).map(str::trim) != Some("date") {
            return Err(Error::HeaderMismatch(format!("{context}: first column must be `date`")));
        }
        let names: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
        let mut records = rdr.records();
        let kind_row = records
            .next()
            .ok_or_else(|| Error::HeaderMismatch(format!("{context}: missing kind row")))?
            .map_err(|e| Error::csv(context, e))?;
        if kind_row.get(0).map(str::trim) != Some("kind") {
            return Err(Error::HeaderMismatch(format!("{context}: second row must be `kind`")));
        }
        let kinds = kind_row
            .iter()
            .skip(1)
            .map(|k| {
                FactorKind::parse(k)
                    .ok_or_else(|| Error::HeaderMismatch(format!("{context}: unknown factor kind {k:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut dates = Vec::new();
        let mut flat = Vec::new();
        for (row, rec) in records.enumerate() {
            let rec = rec.map_err(|e| Error::csv(context, e))?;
            dates.push(parse_date(&rec[0], context)?);
            for (j, cell) in rec.iter().skip(1).enumerate() {
                let v = cell.trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                    context: context.to_string(),
                    row: row + 2,
                    column: names[j].clone(),
                    value: cell.to_string(),
                })?;
                flat.push(v);
            }
        }
        let values = DMatrix::from_row_slice(dates.len(), names.len(), &flat);
        FactorSet::new(dates, names, values, kinds)
    }

    pub fn read_csv(path: &Path) -> Result<FactorSet> {
        FactorSet::read_csv_from(open(path)?, &path.display().to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongLeg {
    Top25,
    Bottom25,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Value,
    Equal,
}

/// How a long-short portfolio is sorted and weighted.
///
/// `lookback == 1` means the signal is a point-in-time characteristic and
/// week `t` ranks on `signal[t - 1]`. `lookback > 1` means row `t` of the
/// signal already aggregates weeks `t - lookback ..= t - 1` (a trailing
/// window such as [`momentum_signal`]) and is used as is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortSpec {
    pub signal_name: String,
    pub lookback: usize,
    pub long_leg: LongLeg,
    pub weighting: Weighting,
    pub subtract_rf: bool,
}

impl SortSpec {
    fn validate(&self) -> Result<()> {
        if self.lookback == 0 {
            return Err(Error::InvalidArgument(format!(
                "sort {}: lookback must be at least 1",
                self.signal_name
            )));
        }
        Ok(())
    }

    fn first_week(&self) -> usize {
        self.lookback
    }

    fn signal_row(&self, t: usize) -> usize {
        if self.lookback == 1 {
            t - 1
        } else {
            t
        }
    }
}

/// One leg of a portfolio in one week: asset positions and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub assets: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Leg {
    fn weighted_return(&self, panel: &ReturnPanel, t: usize) -> f64 {
        self.assets
            .iter()
            .zip(&self.weights)
            .map(|(&i, w)| w * panel.ret(t, i).expect("leg assets are observed"))
            .sum()
    }
}

fn make_leg(panel: &ReturnPanel, t: usize, assets: Vec<usize>, weighting: Weighting) -> Leg {
    let raw: Vec<f64> = match weighting {
        Weighting::Equal => vec![1.0; assets.len()],
        Weighting::Value => assets
            .iter()
            .map(|&i| panel.cap(t - 1, i).expect("eligible assets have a lagged cap"))
            .collect(),
    };
    let total: f64 = raw.iter().sum();
    Leg {
        weights: raw.iter().map(|w| w / total).collect(),
        assets,
    }
}

/// Weekly holdings of a constructed portfolio factor.
#[derive(Debug, Clone)]
pub struct PortfolioHistory {
    pub series: SeriesFrame,
    /// Per output week: long leg (or the whole portfolio for the market) and
    /// optional short leg.
    pub legs: Vec<(Leg, Option<Leg>)>,
}

fn rf_rates(rf: &SeriesFrame, index: &[NaiveDate]) -> Result<Vec<f64>> {
    Ok(rf.restrict(index)?.values().to_vec())
}

/// Value-weighted market excess return with full holdings.
pub fn market_portfolio(panel: &ReturnPanel, rf: &SeriesFrame) -> Result<PortfolioHistory> {
    let weeks = &panel.time_index()[1.min(panel.n_weeks())..];
    let rates = rf_rates(rf, weeks)?;
    let mut values = Vec::with_capacity(weeks.len());
    let mut legs = Vec::with_capacity(weeks.len());
    for t in 1..panel.n_weeks() {
        let eligible: Vec<usize> = (0..panel.n_assets())
            .filter(|&i| panel.is_observed(t, i) && panel.is_observed(t - 1, i) && panel.cap(t - 1, i).is_some())
            .collect();
        if eligible.is_empty() {
            return Err(Error::FactorFormation {
                factor: "market".into(),
                week: panel.time_index()[t],
                message: "no asset has a lagged market cap".into(),
            });
        }
        let leg = make_leg(panel, t, eligible, Weighting::Value);
        values.push(leg.weighted_return(panel, t) - rates[t - 1]);
        legs.push((leg, None));
    }
    Ok(PortfolioHistory {
        series: SeriesFrame::new("R_C", weeks.to_vec(), values, Unit::Percent)?,
        legs,
    })
}

/// Weekly value-weighted market excess return, starting in the panel's
/// second week.
pub fn market_factor(panel: &ReturnPanel, rf: &SeriesFrame) -> Result<SeriesFrame> {
    Ok(market_portfolio(panel, rf)?.series)
}

/// Quartile long-short portfolio with full holdings.
pub fn long_short_portfolio(
    panel: &ReturnPanel,
    signal: &DMatrix<f64>,
    spec: &SortSpec,
    rf: Option<&SeriesFrame>,
) -> Result<PortfolioHistory> {
    spec.validate()?;
    if signal.shape() != (panel.n_weeks(), panel.n_assets()) {
        return Err(Error::DimensionMismatch {
            context: format!("signal {}", spec.signal_name),
            expected: panel.n_weeks() * panel.n_assets(),
            actual: signal.len(),
        });
    }
    let first = spec.first_week();
    if first >= panel.n_weeks() {
        return Err(Error::InsufficientData {
            context: format!("long-short {}", spec.signal_name),
            required: first + 1,
            actual: panel.n_weeks(),
        });
    }
    let weeks = &panel.time_index()[first..];
    let rates = match (spec.subtract_rf, rf) {
        (true, Some(rf)) => Some(rf_rates(rf, weeks)?),
        (true, None) => {
            return Err(Error::InvalidArgument(format!(
                "sort {} subtracts the risk-free rate but none was supplied",
                spec.signal_name
            )))
        }
        (false, _) => None,
    };
    let ids = panel.asset_ids();
    let mut values = Vec::with_capacity(weeks.len());
    let mut legs = Vec::with_capacity(weeks.len());
    for t in first..panel.n_weeks() {
        let srow = spec.signal_row(t);
        let mut eligible: Vec<(usize, f64)> = (0..panel.n_assets())
            .filter(|&i| panel.is_observed(t, i))
            .filter(|&i| spec.weighting == Weighting::Equal || panel.cap(t - 1, i).is_some())
            .filter_map(|i| {
                let s = signal[(srow, i)];
                s.is_finite().then_some((i, s))
            })
            .collect();
        if eligible.len() < 4 {
            return Err(Error::FactorFormation {
                factor: spec.signal_name.clone(),
                week: panel.time_index()[t],
                message: format!("only {} eligible assets, need 4", eligible.len()),
            });
        }
        eligible.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
        let q = (eligible.len() / 4).max(1);
        let bottom: Vec<usize> = eligible[..q].iter().map(|e| e.0).collect();
        let top: Vec<usize> = eligible[eligible.len() - q..].iter().map(|e| e.0).collect();
        let (long, short) = match spec.long_leg {
            LongLeg::Top25 => (top, bottom),
            LongLeg::Bottom25 => (bottom, top),
        };
        let long = make_leg(panel, t, long, spec.weighting);
        let short = make_leg(panel, t, short, spec.weighting);
        let mut v = long.weighted_return(panel, t) - short.weighted_return(panel, t);
        if let Some(r) = &rates {
            v -= r[t - first];
        }
        values.push(v);
        legs.push((long, Some(short)));
    }
    Ok(PortfolioHistory {
        series: SeriesFrame::new(spec.signal_name.clone(), weeks.to_vec(), values, Unit::Percent)?,
        legs,
    })
}

/// Long minus short quartile portfolio return for every formable week.
pub fn long_short(
    panel: &ReturnPanel,
    signal: &DMatrix<f64>,
    spec: &SortSpec,
    rf: Option<&SeriesFrame>,
) -> Result<SeriesFrame> {
    Ok(long_short_portfolio(panel, signal, spec, rf)?.series)
}

pub const MOMENTUM_WINDOW: usize = 5;

/// Compounded return over weeks `t-5 ..= t-1`, in percent; NaN unless all
/// five weeks are observed.
pub fn momentum_signal(panel: &ReturnPanel) -> DMatrix<f64> {
    let (t_len, n) = (panel.n_weeks(), panel.n_assets());
    DMatrix::from_fn(t_len, n, |t, i| {
        if t < MOMENTUM_WINDOW {
            return f64::NAN;
        }
        let mut growth = 1.0;
        for s in t - MOMENTUM_WINDOW..t {
            match panel.ret(s, i) {
                Some(r) => growth *= 1.0 + r / 100.0,
                None => return f64::NAN,
            }
        }
        (growth - 1.0) * 100.0
    })
}

fn check_same_index(a: &SeriesFrame, b: &SeriesFrame) -> Result<()> {
    if a.time_index() != b.time_index() {
        return Err(Error::InvalidArgument(format!(
            "series {} and {} are not aligned",
            a.name(),
            b.name()
        )));
    }
    Ok(())
}

/// Removes the component of `series` explained by `onto` while keeping the
/// sample mean: output is `mean(series) + residual`.
pub fn orthogonalize(series: &SeriesFrame, onto: &SeriesFrame) -> Result<SeriesFrame> {
    check_same_index(series, onto)?;
    if series.len() < 3 {
        return Err(Error::InsufficientData {
            context: format!("orthogonalize {}", series.name()),
            required: 3,
            actual: series.len(),
        });
    }
    if sample_var(onto.values()) <= 0.0 {
        return Err(Error::Degenerate(format!(
            "cannot orthogonalize onto constant series {}",
            onto.name()
        )));
    }
    let x = with_intercept(&DMatrix::from_column_slice(onto.len(), 1, onto.values()));
    let y = DVector::from_column_slice(series.values());
    let fit = ols(&x, &y, &format!("orthogonalize {}", series.name()))?;
    let level = mean(series.values());
    let values = fit.residuals.iter().map(|e| level + e).collect();
    series.with_values(values, series.unit())
}

/// Residuals of an OLS AR(1) fit `x_t = a + rho x_{t-1} + e_t`, indexed from
/// the series' second week.
pub fn ar1_residual(series: &SeriesFrame) -> Result<SeriesFrame> {
    let v = series.values();
    if v.len() < 4 {
        return Err(Error::InsufficientData {
            context: format!("AR(1) {}", series.name()),
            required: 4,
            actual: v.len(),
        });
    }
    let lagged = &v[..v.len() - 1];
    if sample_var(lagged) <= 0.0 {
        return Err(Error::Degenerate(format!("series {} has no variation", series.name())));
    }
    let x = with_intercept(&DMatrix::from_column_slice(lagged.len(), 1, lagged));
    let y = DVector::from_column_slice(&v[1..]);
    let fit = ols(&x, &y, &format!("AR(1) {}", series.name()))?;
    SeriesFrame::new(
        series.name(),
        series.time_index()[1..].to_vec(),
        fit.residuals.iter().copied().collect(),
        series.unit(),
    )
}

/// Week-over-week percent change, indexed from the second week.
pub fn percent_change(series: &SeriesFrame) -> Result<SeriesFrame> {
    let v = series.values();
    let mut out = Vec::with_capacity(v.len().saturating_sub(1));
    for (k, pair) in v.windows(2).enumerate() {
        if pair[0] == 0.0 {
            return Err(Error::Degenerate(format!(
                "{} has a zero level in {}",
                series.name(),
                series.time_index()[k]
            )));
        }
        out.push((pair[1] / pair[0] - 1.0) * 100.0);
    }
    SeriesFrame::new(series.name(), series.time_index()[1..].to_vec(), out, Unit::Percent)
}

pub const HACKS: &str = "Hacks";
pub const ALTSEASON: &str = "Altseason";
pub const FEAR_GREED: &str = "FearGreed";
pub const CVX: &str = "CVX";

/// Non-tradable factors together with their pre-residualization series.
#[derive(Debug, Clone)]
pub struct NontradableShocks {
    pub factors: FactorSet,
    pub pre_residual: Vec<SeriesFrame>,
}

/// Scales hacks by total market cap, converts the sentiment indices to
/// percent changes, keeps CVX in levels, then replaces each with its AR(1)
/// residual. All outputs are trimmed to their common index.
pub fn nontradable_shocks(
    hacks_usd: &SeriesFrame,
    total_mcap: &SeriesFrame,
    altseason: &SeriesFrame,
    fear_greed: &SeriesFrame,
    cvx: &SeriesFrame,
) -> Result<NontradableShocks> {
    for other in [total_mcap, altseason, fear_greed, cvx] {
        check_same_index(hacks_usd, other)?;
    }
    let mut ratio = Vec::with_capacity(hacks_usd.len());
    for (k, (h, m)) in hacks_usd.values().iter().zip(total_mcap.values()).enumerate() {
        if *m == 0.0 {
            return Err(Error::Degenerate(format!(
                "total market cap is zero in {}",
                hacks_usd.time_index()[k]
            )));
        }
        ratio.push(h / m);
    }
    let pre = vec![
        SeriesFrame::new(HACKS, hacks_usd.time_index().to_vec(), ratio, Unit::Ratio)?,
        percent_change(altseason)?.renamed(ALTSEASON),
        percent_change(fear_greed)?.renamed(FEAR_GREED),
        SeriesFrame::new(CVX, cvx.time_index().to_vec(), cvx.values().to_vec(), Unit::Level)?,
    ];
    let residuals = pre.iter().map(ar1_residual).collect::<Result<Vec<_>>>()?;
    let index = crate::panel::common_index(residuals.iter().map(|s| s.time_index()));
    let frames = residuals
        .iter()
        .map(|s| Ok((s.restrict(&index)?, FactorKind::Nontradable)))
        .collect::<Result<Vec<_>>>()?;
    Ok(NontradableShocks {
        factors: FactorSet::from_frames(index, &frames)?,
        pre_residual: pre,
    })
}
