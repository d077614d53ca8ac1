//! Fetch-and-cache layer for raw daily inputs, weekly resampling, and the
//! investable universe.
//!
//! Sources are fetched through an injected [`Transport`] and cached under
//! `cache/<source_kind>/<cache_key>.csv` with columns `date,entity,value,unit`.
//! Once a key is cached it is never fetched again, so a warm cache makes the
//! whole ingest stage a pure function of the cache directory.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use chrono::{Datelike, Days, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::panel::{SeriesFrame, Unit, DATE_FORMAT};

/// Environment variable holding the API key sent with HTTP fetches.
pub const API_KEY_ENV: &str = "RISKPREM_API_KEY";
/// Header that carries the API key.
pub const API_KEY_HEADER: &str = "X-API-Key";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Prices,
    MarketCaps,
    Tvl,
    HacksUsd,
    AltseasonIndex,
    FearGreedIndex,
    CvxLevel,
    EquityFactors,
    EquityIndustries,
}

impl SourceKind {
    pub const ALL: [SourceKind; 9] = [
        SourceKind::Prices,
        SourceKind::MarketCaps,
        SourceKind::Tvl,
        SourceKind::HacksUsd,
        SourceKind::AltseasonIndex,
        SourceKind::FearGreedIndex,
        SourceKind::CvxLevel,
        SourceKind::EquityFactors,
        SourceKind::EquityIndustries,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Prices => "prices",
            SourceKind::MarketCaps => "market_caps",
            SourceKind::Tvl => "tvl",
            SourceKind::HacksUsd => "hacks_usd",
            SourceKind::AltseasonIndex => "altseason_index",
            SourceKind::FearGreedIndex => "fear_greed_index",
            SourceKind::CvxLevel => "cvx_level",
            SourceKind::EquityFactors => "equity_factors",
            SourceKind::EquityIndustries => "equity_industries",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsUnit {
    Usd,
    IndexLevel,
    Percent,
}

impl ObsUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            ObsUnit::Usd => "usd",
            ObsUnit::IndexLevel => "index_level",
            ObsUnit::Percent => "percent",
        }
    }

    fn series_unit(self) -> Unit {
        match self {
            ObsUnit::Percent => Unit::Percent,
            ObsUnit::Usd | ObsUnit::IndexLevel => Unit::Level,
        }
    }
}

impl FromStr for ObsUnit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "usd" => Ok(ObsUnit::Usd),
            "index_level" => Ok(ObsUnit::IndexLevel),
            "percent" => Ok(ObsUnit::Percent),
            other => Err(format!("unknown unit {other:?}")),
        }
    }
}

/// One dated value for one entity (asset id or index name).
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub date: NaiveDate,
    pub entity: String,
    pub value: f64,
    pub unit: ObsUnit,
}

/// A source to fetch. The cache key is derived from the kind, locator and
/// date range, so distinct requests never share a cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceSpec {
    pub kind: SourceKind,
    pub locator: String,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub cache_key: String,
}

impl SourceSpec {
    pub fn new(kind: SourceKind, locator: impl Into<String>, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Self {
        let locator = locator.into();
        let fmt_date = |d: Option<NaiveDate>| d.map(|d| d.to_string()).unwrap_or_default();
        let mut hasher = Sha256::new();
        hasher.update(kind.as_str());
        hasher.update([0]);
        hasher.update(&locator);
        hasher.update([0]);
        hasher.update(fmt_date(start));
        hasher.update([0]);
        hasher.update(fmt_date(end));
        let cache_key = hex::encode(&hasher.finalize()[..12]);
        SourceSpec {
            kind,
            locator,
            start,
            end,
            cache_key,
        }
    }

    pub fn cache_path(&self, cache_dir: &Path) -> PathBuf {
        cache_dir
            .join(self.kind.as_str())
            .join(format!("{}.csv", self.cache_key))
    }
}

/// Retrieves the raw payload behind a locator.
pub trait Transport: Send + Sync {
    fn get(&self, locator: &str) -> Result<String>;
}

/// Reads locators as file paths (optionally `file://` prefixed), relative
/// paths resolved against `base`.
#[derive(Debug, Clone)]
pub struct FileTransport {
    base: PathBuf,
}

impl FileTransport {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        FileTransport { base: base.into() }
    }
}

impl Transport for FileTransport {
    fn get(&self, locator: &str) -> Result<String> {
        let path = self.base.join(locator.strip_prefix("file://").unwrap_or(locator));
        fs::read_to_string(&path).map_err(|e| Error::Unreachable {
            locator: locator.to_string(),
            message: e.to_string(),
        })
    }
}

/// HTTP(S) GET with an optional API key header; non-URL locators fall back
/// to the file transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
    files: FileTransport,
}

impl HttpTransport {
    pub fn new(api_key: Option<String>, file_base: impl Into<PathBuf>) -> Self {
        HttpTransport {
            agent: ureq::Agent::new_with_defaults(),
            api_key,
            files: FileTransport::new(file_base),
        }
    }

    /// Reads the key from [`API_KEY_ENV`].
    pub fn from_env(file_base: impl Into<PathBuf>) -> Self {
        HttpTransport::new(std::env::var(API_KEY_ENV).ok(), file_base)
    }
}

impl Transport for HttpTransport {
    fn get(&self, locator: &str) -> Result<String> {
        if !(locator.starts_with("http://") || locator.starts_with("https://")) {
            return self.files.get(locator);
        }
        let unreachable = |e: ureq::Error| Error::Unreachable {
            locator: locator.to_string(),
            message: e.to_string(),
        };
        let mut req = self.agent.get(locator);
        if let Some(key) = &self.api_key {
            req = req.header(API_KEY_HEADER, key);
        }
        let mut resp = req.call().map_err(unreachable)?;
        resp.body_mut().read_to_string().map_err(unreachable)
    }
}

/// Parses a payload in the cache schema: CSV with `date,entity,value,unit`
/// columns (any order, extra columns ignored) or a JSON array of objects
/// with those fields. Dates may carry a time part, which is dropped.
pub fn parse_payload(payload: &str, locator: &str) -> Result<Vec<RawObservation>> {
    let trimmed = payload.trim_start();
    let obs = if trimmed.starts_with('[') {
        parse_json(trimmed, locator)?
    } else {
        parse_csv(payload, locator)?
    };
    if obs.is_empty() {
        return Err(Error::EmptyPayload {
            locator: locator.to_string(),
        });
    }
    Ok(obs)
}

fn drift(locator: &str, row: usize, message: impl Into<String>) -> Error {
    Error::SchemaDrift {
        locator: locator.to_string(),
        row,
        message: message.into(),
    }
}

fn parse_obs_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let day = s.get(..10)?;
    NaiveDate::parse_from_str(day, DATE_FORMAT).ok()
}

fn make_obs(locator: &str, row: usize, date: &str, entity: &str, value: f64, unit: &str) -> Result<RawObservation> {
    let date = parse_obs_date(date).ok_or_else(|| drift(locator, row, format!("unparseable date {date:?}")))?;
    if !value.is_finite() {
        return Err(drift(locator, row, "non-finite value"));
    }
    let unit = unit.parse::<ObsUnit>().map_err(|m| drift(locator, row, m))?;
    if entity.trim().is_empty() {
        return Err(drift(locator, row, "empty entity"));
    }
    Ok(RawObservation {
        date,
        entity: entity.trim().to_string(),
        value,
        unit,
    })
}

const FIELDS: [&str; 4] = ["date", "entity", "value", "unit"];

fn parse_csv(payload: &str, locator: &str) -> Result<Vec<RawObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(payload.as_bytes());
    let headers = rdr.headers().map_err(|e| drift(locator, 0, e.to_string()))?.clone();
    let mut cols = [0usize; 4];
    for (slot, field) in cols.iter_mut().zip(FIELDS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == field)
            .ok_or_else(|| drift(locator, 0, format!("missing column `{field}`")))?;
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row = k + 1;
        let rec = rec.map_err(|e| drift(locator, row, e.to_string()))?;
        let cell = |c: usize| {
            rec.get(c).ok_or_else(|| {
                drift(
                    locator,
                    row,
                    format!("missing field `{}`", FIELDS[cols.iter().position(|&x| x == c).unwrap()]),
                )
            })
        };
        let raw_value = cell(cols[2])?;
        let value = raw_value
            .trim()
            .parse::<f64>()
            .map_err(|_| drift(locator, row, format!("non-numeric value {raw_value:?}")))?;
        out.push(make_obs(
            locator,
            row,
            cell(cols[0])?,
            cell(cols[1])?,
            value,
            cell(cols[3])?,
        )?);
    }
    Ok(out)
}

fn parse_json(payload: &str, locator: &str) -> Result<Vec<RawObservation>> {
    let items: Vec<serde_json::Value> = serde_json::from_str(payload).map_err(|e| drift(locator, 0, e.to_string()))?;
    items
        .iter()
        .enumerate()
        .map(|(k, item)| {
            let row = k + 1;
            let text = |field: &str| {
                item.get(field)
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| drift(locator, row, format!("missing field `{field}`")))
            };
            let value = match item.get("value") {
                Some(serde_json::Value::Number(n)) => n.as_f64(),
                Some(serde_json::Value::String(s)) => s.trim().parse().ok(),
                _ => None,
            }
            .ok_or_else(|| drift(locator, row, "missing or non-numeric `value`"))?;
            make_obs(locator, row, text("date")?, text("entity")?, value, text("unit")?)
        })
        .collect()
}

fn write_cache_file(path: &Path, obs: &[RawObservation]) -> Result<()> {
    let dir = path.parent().expect("cache paths have a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = path.with_extension(format!("csv.tmp{}", std::process::id()));
    {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut wtr = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let err = |e: csv::Error| Error::csv(path.display().to_string(), e);
        wtr.write_record(FIELDS).map_err(err)?;
        for o in obs {
            wtr.write_record([
                o.date.format(DATE_FORMAT).to_string(),
                o.entity.clone(),
                format!("{}", o.value),
                o.unit.as_str().to_string(),
            ])
            .map_err(err)?;
        }
        let mut inner = wtr
            .into_inner()
            .map_err(|e| Error::csv(path.display().to_string(), e))?;
        inner.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Fetches sources through a transport, caching each result on disk.
///
/// With no transport the fetcher is offline: only cached keys can be read.
pub struct Fetcher {
    cache_dir: PathBuf,
    transport: Option<Arc<dyn Transport>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Fetcher {
    pub fn new(cache_dir: impl Into<PathBuf>, transport: Arc<dyn Transport>) -> Self {
        Fetcher {
            cache_dir: cache_dir.into(),
            transport: Some(transport),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn offline(cache_dir: impl Into<PathBuf>) -> Self {
        Fetcher {
            cache_dir: cache_dir.into(),
            transport: None,
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn cache_dir(&self) -> &Path {
        &self.cache_dir
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|p| p.into_inner());
        locks.entry(key.to_string()).or_default().clone()
    }

    /// Cached observations for `spec`, fetching and caching them first on a
    /// cold cache.
    pub fn fetch(&self, spec: &SourceSpec) -> Result<Vec<RawObservation>> {
        let lock = self.key_lock(&spec.cache_key);
        let _guard = lock.lock().unwrap_or_else(|p| p.into_inner());
        let path = spec.cache_path(&self.cache_dir);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            return parse_payload(&text, &path.display().to_string());
        }
        let transport = self.transport.as_ref().ok_or_else(|| Error::OfflineColdCache {
            source_kind: spec.kind.to_string(),
            locator: spec.locator.clone(),
        })?;
        let payload = transport.get(&spec.locator)?;
        let obs: Vec<RawObservation> = parse_payload(&payload, &spec.locator)?
            .into_iter()
            .filter(|o| spec.start.is_none_or(|s| o.date >= s) && spec.end.is_none_or(|e| o.date <= e))
            .collect();
        if obs.is_empty() {
            return Err(Error::EmptyPayload {
                locator: spec.locator.clone(),
            });
        }
        write_cache_file(&path, &obs)?;
        log::info!(
            "cached {} observations for {} at {}",
            obs.len(),
            spec.kind,
            path.display()
        );
        Ok(obs)
    }
}

/// The Sunday that ends the ISO week containing `date`.
pub fn week_ending(date: NaiveDate) -> NaiveDate {
    let to_sunday = 6 - date.weekday().num_days_from_monday();
    date + Days::new(to_sunday as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleRule {
    /// Final observation of the week (levels).
    Last,
    /// Within-week total (flows).
    Sum,
}

/// A weekly series plus the weeks inside its span that had no observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub series: SeriesFrame,
    pub missing_weeks: Vec<NaiveDate>,
    /// Date of the last observation used in each output week.
    pub last_dates: Vec<NaiveDate>,
}

impl Resampled {
    /// Contiguous weekly series with every missing week set to `value`.
    pub fn fill_missing(&self, value: f64) -> SeriesFrame {
        let mut all: BTreeMap<NaiveDate, f64> = self
            .series
            .time_index()
            .iter()
            .copied()
            .zip(self.series.values().iter().copied())
            .collect();
        for &w in &self.missing_weeks {
            all.insert(w, value);
        }
        SeriesFrame::new(
            self.series.name(),
            all.keys().copied().collect(),
            all.values().copied().collect(),
            self.series.unit(),
        )
        .expect("filled series stays valid")
    }
}

/// Collapses observations of a single entity to week-ending-Sunday stamps.
pub fn weekly_resample(obs: &[RawObservation], rule: ResampleRule) -> Result<Resampled> {
    let first = obs.first().ok_or(Error::InsufficientData {
        context: "weekly resample".into(),
        required: 1,
        actual: 0,
    })?;
    if let Some(other) = obs.iter().find(|o| o.entity != first.entity) {
        return Err(Error::InvalidArgument(format!(
            "weekly resample mixes entities {} and {}",
            first.entity, other.entity
        )));
    }
    // (value, latest date) per week; a stable sort keeps input order among
    // same-day observations so `Last` picks the final one.
    let mut sorted: Vec<&RawObservation> = obs.iter().collect();
    sorted.sort_by_key(|o| o.date);
    let mut weeks: BTreeMap<NaiveDate, (f64, NaiveDate)> = BTreeMap::new();
    for o in sorted {
        let slot = weeks.entry(week_ending(o.date)).or_insert((0.0, o.date));
        match rule {
            ResampleRule::Last => slot.0 = o.value,
            ResampleRule::Sum => slot.0 += o.value,
        }
        slot.1 = o.date;
    }
    let (&lo, _) = weeks.first_key_value().expect("nonempty");
    let (&hi, _) = weeks.last_key_value().expect("nonempty");
    let mut missing = Vec::new();
    let mut w = lo;
    while w < hi {
        if !weeks.contains_key(&w) {
            missing.push(w);
        }
        w = w + Days::new(7);
    }
    Ok(Resampled {
        series: SeriesFrame::new(
            first.entity.clone(),
            weeks.keys().copied().collect(),
            weeks.values().map(|v| v.0).collect(),
            first.unit.series_unit(),
        )?,
        missing_weeks: missing,
        last_dates: weeks.values().map(|v| v.1).collect(),
    })
}

/// Groups observations by entity and resamples each.
pub fn weekly_resample_by_entity(obs: &[RawObservation], rule: ResampleRule) -> Result<BTreeMap<String, Resampled>> {
    let mut groups: BTreeMap<&str, Vec<RawObservation>> = BTreeMap::new();
    for o in obs {
        groups.entry(o.entity.as_str()).or_default().push(o.clone());
    }
    groups
        .into_iter()
        .map(|(entity, group)| Ok((entity.to_string(), weekly_resample(&group, rule)?)))
        .collect()
}

/// Union over weeks of assets ranked in the top `n` by that week's market
/// cap, with blacklisted ids (stablecoins) removed after ranking. Ranking
/// ties are broken by id; NaN or non-positive caps are unranked.
pub fn top_n_universe(caps: &DMatrix<f64>, ids: &[String], n: usize, blacklist: &HashSet<String>) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut week: Vec<(usize, f64)> = Vec::with_capacity(ids.len());
    for row in caps.row_iter() {
        week.clear();
        week.extend(
            row.iter()
                .enumerate()
                .filter(|(_, c)| c.is_finite() && **c > 0.0)
                .map(|(i, c)| (i, *c)),
        );
        week.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| ids[a.0].cmp(&ids[b.0])));
        out.extend(
            week.iter()
                .take(n)
                .map(|(i, _)| &ids[*i])
                .filter(|id| !blacklist.contains(*id))
                .cloned(),
        );
    }
    out
}

pub fn top100_universe(caps: &DMatrix<f64>, ids: &[String], blacklist: &HashSet<String>) -> BTreeSet<String> {
    top_n_universe(caps, ids, 100, blacklist)
}

/// Per-entity weekly levels laid out as a T×N matrix on `index` (NaN where
/// absent), columns in `ids` order.
pub fn level_matrix(series: &BTreeMap<String, Resampled>, ids: &[String], index: &[NaiveDate]) -> DMatrix<f64> {
    let mut m = DMatrix::from_element(index.len(), ids.len(), f64::NAN);
    for (j, id) in ids.iter().enumerate() {
        if let Some(r) = series.get(id) {
            for (t, w) in index.iter().enumerate() {
                if let Some(v) = r.series.value_at(*w) {
                    m[(t, j)] = v;
                }
            }
        }
    }
    m
}

/// Drops a final week whose last observation falls before that week's
/// Sunday: a delisting mid-week leaves only a partial week, which is treated
/// as missing rather than as a full-week level.
pub fn drop_partial_final_week(r: &Resampled) -> Resampled {
    let n = r.series.len();
    let Some(&last_week) = r.series.time_index().last() else {
        return r.clone();
    };
    if r.last_dates[n - 1] >= last_week || n == 1 {
        return r.clone();
    }
    Resampled {
        series: SeriesFrame::new(
            r.series.name(),
            r.series.time_index()[..n - 1].to_vec(),
            r.series.values()[..n - 1].to_vec(),
            r.series.unit(),
        )
        .expect("prefix of a valid series"),
        missing_weeks: r.missing_weeks.clone(),
        last_dates: r.last_dates[..n - 1].to_vec(),
    }
}

/// Weekly simple returns in percent from a T×N price-level matrix; a return
/// is observed only when both the week and the week before have a price.
pub fn returns_from_prices(prices: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(prices.nrows(), prices.ncols(), |t, i| {
        if t == 0 {
            return f64::NAN;
        }
        let (p0, p1) = (prices[(t - 1, i)], prices[(t, i)]);
        if p0.is_finite() && p1.is_finite() && p0 > 0.0 {
            (p1 / p0 - 1.0) * 100.0
        } else {
            f64::NAN
        }
    })
}
