//! Run configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use crate::bootstrap::BootstrapConfig;
use crate::error::{Error, Result};
use crate::factors::{LongLeg, Weighting};
use crate::ingest::SourceKind;
use crate::latent::{ImputationConfig, DEFAULT_K_MAX};

/// Number of latent factors: fixed, or chosen by the Bai-Ng criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KChoice {
    #[default]
    Auto,
    Fixed(usize),
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(usize),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(k) => Ok(KChoice::Fixed(k)),
            Raw::Text(s) if s == "auto" => Ok(KChoice::Auto),
            Raw::Text(s) => Err(serde::de::Error::custom(format!(
                "k must be a positive integer or \"auto\", got {s:?}"
            ))),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KChoice::Auto => serializer.serialize_str("auto"),
            KChoice::Fixed(k) => serializer.serialize_u64(*k as u64),
        }
    }
}

impl fmt::Display for KChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KChoice::Auto => f.write_str("auto"),
            KChoice::Fixed(k) => write!(f, "{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// First week (a Sunday) of the estimation sample.
    pub start: NaiveDate,
    /// Last week (a Sunday) of the estimation sample.
    pub end: NaiveDate,
    /// Weeks ingested before `start` so that lagged signals exist in the
    /// first sample week.
    #[serde(default = "default_warmup")]
    pub warmup_weeks: usize,
    /// Base directory for locators that are plain file paths.
    #[serde(default = "default_raw_dir")]
    pub raw_dir: PathBuf,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Where the ingest stage writes weekly CSVs.
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
}

fn default_warmup() -> usize {
    6
}

fn default_raw_dir() -> PathBuf {
    PathBuf::from("raw")
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseConfig {
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_blacklist")]
    pub blacklist: Vec<String>,
}

fn default_top_n() -> usize {
    100
}

fn default_blacklist() -> Vec<String> {
    ["USDT", "USDC", "DAI"].iter().map(|s| s.to_string()).collect()
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            top_n: default_top_n(),
            blacklist: default_blacklist(),
        }
    }
}

/// Signal a crypto long-short factor sorts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    /// Market capitalization at the end of the previous week.
    Size,
    /// Compounded return over the previous five weeks.
    Momentum,
    /// Total value locked over market capitalization, previous week.
    TvlRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SortFactorConfig {
    pub name: String,
    pub signal: Signal,
    pub long: LongLeg,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default)]
    pub subtract_rf: bool,
    /// Replace the series by its residual on the crypto market factor
    /// (keeping its mean).
    #[serde(default)]
    pub orthogonalize_market: bool,
}

fn default_weighting() -> Weighting {
    Weighting::Value
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    /// Name of the value-weighted crypto market excess return.
    #[serde(default = "default_market")]
    pub market: String,
    /// Entity in the equity-factor source holding the weekly risk-free rate.
    #[serde(default = "default_rf")]
    pub risk_free: String,
    /// Equity factors taken as is (already excess or long-short returns).
    #[serde(default)]
    pub equity: Vec<String>,
    /// Industry portfolio returns; converted to excess returns.
    #[serde(default)]
    pub industries: Vec<String>,
    #[serde(default = "default_true")]
    pub nontradable: bool,
    #[serde(default)]
    pub sort: Vec<SortFactorConfig>,
}

fn default_market() -> String {
    "R_C".into()
}

fn default_rf() -> String {
    "RF".into()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    #[serde(default)]
    pub k: KChoice,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default)]
    pub pass3_intercept: bool,
    #[serde(default)]
    pub imputation: ImputationConfig,
}

fn default_k_max() -> usize {
    DEFAULT_K_MAX
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            k: KChoice::Auto,
            k_max: DEFAULT_K_MAX,
            pass3_intercept: false,
            imputation: ImputationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_block")]
    pub block_len: usize,
    /// 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
}

fn default_reps() -> usize {
    BootstrapConfig::default().reps
}

fn default_block() -> usize {
    BootstrapConfig::default().block_len
}

impl Default for BootstrapSection {
    fn default() -> Self {
        BootstrapSection {
            reps: default_reps(),
            block_len: default_block(),
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub universe: UniverseConfig,
    /// Locator per source kind.
    pub sources: BTreeMap<String, String>,
    pub factors: FactorConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    BootstrapConfig::default().seed
}

/// A parsed configuration together with where it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: PathBuf,
    pub base_dir: PathBuf,
    /// Hex SHA-256 of the configuration file's bytes.
    pub sha256: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let bytes = std::fs::read(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = String::from_utf8(bytes.clone())
            .map_err(|_| Error::Config(format!("{} is not valid UTF-8", path.display())))?;
        let config = RunConfig::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig {
            config,
            path: path.to_path_buf(),
            base_dir,
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.config.data.data_dir)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.resolve(&self.config.data.cache_dir)
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.resolve(&self.config.data.raw_dir)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn locator(&self, kind: SourceKind) -> Option<&str> {
        self.sources.get(kind.as_str()).map(String::as_str)
    }

    /// Source kinds the configured factor list needs.
    pub fn required_sources(&self) -> Vec<SourceKind> {
        let mut kinds = vec![SourceKind::Prices, SourceKind::MarketCaps, SourceKind::EquityFactors];
        if self.factors.sort.iter().any(|s| s.signal == Signal::TvlRatio) {
            kinds.push(SourceKind::Tvl);
        }
        if self.factors.nontradable {
            kinds.extend([
                SourceKind::HacksUsd,
                SourceKind::AltseasonIndex,
                SourceKind::FearGreedIndex,
                SourceKind::CvxLevel,
            ]);
        }
        if !self.factors.industries.is_empty() {
            kinds.push(SourceKind::EquityIndustries);
        }
        kinds
    }

    /// Factor names in output order.
    pub fn factor_names(&self) -> Vec<String> {
        let mut names = vec![self.factors.market.clone()];
        names.extend(self.factors.sort.iter().map(|s| s.name.clone()));
        names.extend(self.factors.equity.iter().cloned());
        names.extend(self.factors.industries.iter().cloned());
        if self.factors.nontradable {
            names.extend(
                [
                    crate::factors::HACKS,
                    crate::factors::ALTSEASON,
                    crate::factors::FEAR_GREED,
                    crate::factors::CVX,
                ]
                .map(String::from),
            );
        }
        names
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig {
            reps: self.bootstrap.reps,
            block_len: self.bootstrap.block_len,
            seed: self.seed,
            workers: self.bootstrap.workers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        for (what, date) in [("start", d.start), ("end", d.end)] {
            if date.weekday() != Weekday::Sun {
                return Err(Error::Config(format!(
                    "data.{what} ({date}) must be a week-ending Sunday"
                )));
            }
        }
        if d.end < d.start {
            return Err(Error::Config("data.end precedes data.start".into()));
        }
        if self.universe.top_n == 0 {
            return Err(Error::Config("universe.top_n must be at least 1".into()));
        }
        let known: HashSet<&str> = SourceKind::ALL.iter().map(|k| k.as_str()).collect();
        if let Some(bad) = self.sources.keys().find(|k| !known.contains(k.as_str())) {
            return Err(Error::Config(format!(
                "unknown source kind {bad:?}; expected one of {}",
                SourceKind::ALL.map(|k| k.as_str()).join(", ")
            )));
        }
        for kind in self.required_sources() {
            if self.locator(kind).is_none() {
                return Err(Error::Config(format!("sources.{kind} is required by the factor list")));
            }
        }
        let mut seen = HashSet::new();
        for name in self.factor_names() {
            if name.is_empty() || name.contains(',') {
                return Err(Error::Config(format!("invalid factor name {name:?}")));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::Config(format!("factor name {name} is used twice")));
            }
        }
        if self.factors.equity.contains(&self.factors.risk_free) {
            return Err(Error::Config("the risk-free series cannot also be a factor".into()));
        }
        if let KChoice::Fixed(0) = self.estimation.k {
            return Err(Error::Config("estimation.k must be at least 1".into()));
        }
        if self.estimation.k_max == 0 {
            return Err(Error::Config("estimation.k_max must be at least 1".into()));
        }
        self.estimation.imputation.validate()?;
        if self.bootstrap.reps == 0 || self.bootstrap.block_len == 0 {
            return Err(Error::Config("bootstrap reps and block_len must be at least 1".into()));
        }
        Ok(())
    }
}
