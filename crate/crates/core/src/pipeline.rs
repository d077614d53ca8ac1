//! Stage-by-stage orchestration. Each stage reads the files written by the
//! previous one, so any stage can be re-run on its own.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bootstrap::{bootstrap_premia, recentered_pvalue, BootstrapConfig};
use crate::config::{KChoice, LoadedConfig, Signal};
use crate::error::{Error, Result};
use crate::factors::{
    long_short, market_factor, momentum_signal, nontradable_shocks, orthogonalize, FactorKind, FactorSet, SortSpec,
    MOMENTUM_WINDOW,
};
use crate::fama_macbeth::run_fama_macbeth;
use crate::ingest::{
    drop_partial_final_week, level_matrix, returns_from_prices, top_n_universe, weekly_resample,
    weekly_resample_by_entity, Fetcher, HttpTransport, RawObservation, ResampleRule, Resampled, SourceKind, SourceSpec,
};
use crate::latent::{bai_ng_k, write_diagnostics, BaiNgSelection};
use crate::panel::{
    load_panel, read_matrix_csv, to_excess, weekly_index, write_matrix_csv, write_panel, ReturnPanel, SeriesFrame, Unit,
};
use crate::report::{render_premia, DescriptiveTable, PremiaTable};
use crate::stats::describe;
use crate::three_pass::{fit_three_pass, Method, RiskPremiaEstimate, ThreePassOptions};

pub const STAGE_INGEST: &str = "ingest";
pub const STAGE_BUILD: &str = "build-factors";
pub const STAGE_SELECT_K: &str = "select-k";
pub const STAGE_ESTIMATE: &str = "estimate";
pub const STAGE_BOOTSTRAP: &str = "bootstrap";
pub const STAGE_REPORT: &str = "report";

// ingest outputs (data directory)
pub const RAW_RETURNS: &str = "returns.csv";
pub const RAW_CAPS: &str = "caps.csv";
pub const TVL: &str = "tvl.csv";
pub const STATE: &str = "state.csv";
pub const EQUITY: &str = "equity.csv";

// estimation outputs (output directory)
pub const FACTORS: &str = "factors.csv";
pub const PANEL_RETURNS: &str = "panel_returns.csv";
pub const PANEL_CAPS: &str = "panel_caps.csv";
pub const DESCRIPTIVES: &str = "descriptives.csv";
pub const DESCRIPTIVES_MD: &str = "descriptives.md";
pub const LATENT_DIAG: &str = "latent_diag.csv";
pub const PREMIA_THREE_PASS: &str = "premia_three_pass.csv";
pub const PREMIA_FAMA_MACBETH: &str = "premia_fama_macbeth.csv";
pub const PREMIA_TABLE_MD: &str = "premia_table.md";
pub const PREMIA_TABLE_CSV: &str = "premia_table.csv";
pub const BOOTSTRAP_DRAWS: &str = "bootstrap_draws.csv";
pub const MANIFEST: &str = "manifest.json";

const TOTAL_MCAP: &str = "total_mcap";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimateMethod {
    ThreePass,
    FamaMacbeth,
    Both,
}

impl EstimateMethod {
    fn three_pass(self) -> bool {
        matches!(self, EstimateMethod::ThreePass | EstimateMethod::Both)
    }

    fn fama_macbeth(self) -> bool {
        matches!(self, EstimateMethod::FamaMacbeth | EstimateMethod::Both)
    }
}

/// Command-line overrides for the bootstrap section of the config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BootstrapOverrides {
    pub reps: Option<usize>,
    pub block_len: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSummary {
    pub weeks: usize,
    pub universe: usize,
    pub dropped_partial_weeks: usize,
}

#[derive(Debug, Clone)]
pub struct BuildSummary {
    pub factors: FactorSet,
    pub panel_weeks: usize,
    pub panel_assets: usize,
}

pub struct Pipeline {
    cfg: LoadedConfig,
    fetcher: Fetcher,
    offline: bool,
    /// Auto-selected K, reused until the estimation panel is rebuilt.
    selected_k: Mutex<Option<usize>>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

impl Pipeline {
    /// With `offline`, sources are served from the cache only.
    pub fn new(cfg: LoadedConfig, offline: bool) -> Pipeline {
        let fetcher = if offline {
            Fetcher::offline(cfg.cache_dir())
        } else {
            Fetcher::new(cfg.cache_dir(), Arc::new(HttpTransport::from_env(cfg.raw_dir())))
        };
        Pipeline {
            cfg,
            fetcher,
            offline,
            selected_k: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &LoadedConfig {
        &self.cfg
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output_dir().join(name)
    }

    fn data(&self, name: &str) -> PathBuf {
        self.cfg.data_dir().join(name)
    }

    /// Weeks of the estimation sample.
    fn sample_weeks(&self) -> Vec<NaiveDate> {
        let d = &self.cfg.config.data;
        let n = ((d.end - d.start).num_days() / 7) as usize + 1;
        weekly_index(d.start, n)
    }

    /// Every ingested week, warm-up included.
    fn ingest_weeks(&self) -> Vec<NaiveDate> {
        let d = &self.cfg.config.data;
        let first = d.start - Days::new(7 * d.warmup_weeks as u64);
        weekly_index(first, self.sample_weeks().len() + d.warmup_weeks)
    }

    pub fn ingest(&self) -> Result<IngestSummary> {
        stage(STAGE_INGEST, self.ingest_inner())
    }

    fn ingest_inner(&self) -> Result<IngestSummary> {
        let cfg = &self.cfg.config;
        let weeks = self.ingest_weeks();
        let fetch_from = weeks[0] - Days::new(6);
        let fetch_to = cfg.data.end;
        let kinds = cfg.required_sources();
        let specs: Vec<SourceSpec> = kinds
            .iter()
            .map(|&kind| {
                let locator = cfg.locator(kind).expect("validated config lists every required source");
                SourceSpec::new(kind, locator, Some(fetch_from), Some(fetch_to))
            })
            .collect();
        self.check_local_sources(&specs)?;
        let fetched: Vec<Result<(SourceKind, Vec<RawObservation>)>> = specs
            .par_iter()
            .map(|spec| Ok((spec.kind, self.fetcher.fetch(spec)?)))
            .collect();
        let mut raw: BTreeMap<SourceKind, Vec<RawObservation>> = BTreeMap::new();
        for r in fetched {
            let (kind, obs) = r?;
            raw.insert(kind, obs);
        }
        let take = |kind: SourceKind| raw.get(&kind).map(Vec::as_slice).unwrap_or(&[]);

        let mut dropped_partial = 0;
        let mut levels = |kind: SourceKind| -> Result<BTreeMap<String, Resampled>> {
            let by_entity = weekly_resample_by_entity(take(kind), ResampleRule::Last)?;
            Ok(by_entity
                .into_iter()
                .map(|(id, r)| {
                    let trimmed = drop_partial_final_week(&r);
                    if trimmed.series.len() < r.series.len() {
                        dropped_partial += 1;
                    }
                    (id, trimmed)
                })
                .collect())
        };
        let prices = levels(SourceKind::Prices)?;
        let caps = levels(SourceKind::MarketCaps)?;

        // universe: union of weekly top-N by cap over the sample weeks
        let all_ids: Vec<String> = caps.keys().cloned().collect();
        let sample = self.sample_weeks();
        let sample_caps = level_matrix(&caps, &all_ids, &sample);
        let blacklist: HashSet<String> = cfg.universe.blacklist.iter().cloned().collect();
        let universe: Vec<String> = top_n_universe(&sample_caps, &all_ids, cfg.universe.top_n, &blacklist)
            .into_iter()
            .collect();
        if universe.is_empty() {
            return Err(Error::InsufficientData {
                context: "asset universe".into(),
                required: 1,
                actual: 0,
            });
        }
        log::info!("universe: {} assets", universe.len());

        let price_m = level_matrix(&prices, &universe, &weeks);
        let returns = returns_from_prices(&price_m).rows(1, weeks.len() - 1).into_owned();
        let cap_m = level_matrix(&caps, &universe, &weeks)
            .rows(1, weeks.len() - 1)
            .into_owned();
        let panel_weeks = weeks[1..].to_vec();
        let observed = returns.map(f64::is_finite);
        let panel = ReturnPanel::new(panel_weeks.clone(), universe.clone(), returns, observed, cap_m)?;
        write_panel(&panel, &self.data(RAW_RETURNS), &self.data(RAW_CAPS))?;

        if raw.contains_key(&SourceKind::Tvl) {
            let tvl = levels(SourceKind::Tvl)?;
            write_matrix_csv(
                &self.data(TVL),
                &panel_weeks,
                &universe,
                &level_matrix(&tvl, &universe, &panel_weeks),
            )?;
        }

        // market-wide state series
        let mut state_cols: Vec<String> = vec![TOTAL_MCAP.into()];
        let all_caps = level_matrix(&caps, &all_ids, &panel_weeks);
        let mut state: Vec<Vec<f64>> = vec![all_caps
            .row_iter()
            .map(|row| row.iter().filter(|v| v.is_finite()).sum())
            .collect()];
        if cfg.factors.nontradable {
            let hacks = take(SourceKind::HacksUsd);
            // weekly totals over all incidents; weeks without one are zero
            let mut pooled: Vec<RawObservation> = hacks.to_vec();
            pooled
                .iter_mut()
                .for_each(|o| o.entity = SourceKind::HacksUsd.as_str().into());
            let totals = if pooled.is_empty() {
                None
            } else {
                Some(weekly_resample(&pooled, ResampleRule::Sum)?)
            };
            state_cols.push(SourceKind::HacksUsd.as_str().into());
            state.push(
                panel_weeks
                    .iter()
                    .map(|w| totals.as_ref().and_then(|r| r.series.value_at(*w)).unwrap_or(0.0))
                    .collect(),
            );
            for kind in [
                SourceKind::AltseasonIndex,
                SourceKind::FearGreedIndex,
                SourceKind::CvxLevel,
            ] {
                let obs = take(kind);
                if obs.is_empty() {
                    return Err(Error::EmptyPayload {
                        locator: cfg.locator(kind).unwrap_or_default().to_string(),
                    });
                }
                let r = weekly_resample(obs, ResampleRule::Last)?;
                state_cols.push(kind.as_str().into());
                state.push(
                    panel_weeks
                        .iter()
                        .map(|w| r.series.value_at(*w).unwrap_or(f64::NAN))
                        .collect(),
                );
            }
        }
        let state_m = DMatrix::from_fn(panel_weeks.len(), state.len(), |t, j| state[j][t]);
        write_matrix_csv(&self.data(STATE), &panel_weeks, &state_cols, &state_m)?;

        // equity factors, the risk-free rate and industry portfolios
        let mut equity_ids = vec![cfg.factors.risk_free.clone()];
        equity_ids.extend(cfg.factors.equity.iter().cloned());
        equity_ids.extend(cfg.factors.industries.iter().cloned());
        let mut equity_series = weekly_resample_by_entity(take(SourceKind::EquityFactors), ResampleRule::Last)?;
        equity_series.extend(weekly_resample_by_entity(
            take(SourceKind::EquityIndustries),
            ResampleRule::Last,
        )?);
        if let Some(missing) = equity_ids.iter().find(|id| !equity_series.contains_key(*id)) {
            return Err(Error::SchemaDrift {
                locator: cfg.locator(SourceKind::EquityFactors).unwrap_or_default().to_string(),
                row: 0,
                message: format!("no observations for equity series {missing}"),
            });
        }
        write_matrix_csv(
            &self.data(EQUITY),
            &panel_weeks,
            &equity_ids,
            &level_matrix(&equity_series, &equity_ids, &panel_weeks),
        )?;

        let summary = IngestSummary {
            weeks: panel_weeks.len(),
            universe: universe.len(),
            dropped_partial_weeks: dropped_partial,
        };
        let mut outputs = vec![
            self.data(RAW_RETURNS),
            self.data(RAW_CAPS),
            self.data(STATE),
            self.data(EQUITY),
        ];
        if raw.contains_key(&SourceKind::Tvl) {
            outputs.push(self.data(TVL));
        }
        self.record(
            STAGE_INGEST,
            &[],
            &outputs,
            json!({"universe": summary.universe, "weeks": summary.weeks, "sources": kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>()}),
        )?;
        Ok(summary)
    }

    /// File locators that would have to be read (not cached) must exist.
    fn check_local_sources(&self, specs: &[SourceSpec]) -> Result<()> {
        if self.offline {
            return Ok(());
        }
        let raw_dir = self.cfg.raw_dir();
        let missing: Vec<String> = specs
            .iter()
            .filter(|s| !(s.locator.starts_with("http://") || s.locator.starts_with("https://")))
            .filter(|s| !s.cache_path(self.fetcher.cache_dir()).exists())
            .map(|s| {
                (
                    s.kind,
                    raw_dir.join(s.locator.strip_prefix("file://").unwrap_or(&s.locator)),
                )
            })
            .filter(|(_, path)| !path.exists())
            .map(|(kind, path)| format!("{kind} ({})", path.display()))
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("source files not found: {}", missing.join(", "))))
        }
    }

    pub fn build_factors(&self) -> Result<BuildSummary> {
        stage(STAGE_BUILD, self.build_inner())
    }

    fn series_from_column(name: &str, index: &[NaiveDate], values: &[f64], unit: Unit) -> Result<SeriesFrame> {
        let (weeks, vals): (Vec<NaiveDate>, Vec<f64>) = index
            .iter()
            .zip(values)
            .filter(|(_, v)| v.is_finite())
            .map(|(w, v)| (*w, *v))
            .unzip();
        SeriesFrame::new(name, weeks, vals, unit)
    }

    fn build_inner(&self) -> Result<BuildSummary> {
        *self.selected_k.lock().unwrap_or_else(|p| p.into_inner()) = None;
        let cfg = &self.cfg.config;
        let panel = load_panel(&self.data(RAW_RETURNS), &self.data(RAW_CAPS))?;
        let index = panel.time_index().to_vec();
        let (eq_weeks, eq_ids, eq_m) = read_matrix_csv(&self.data(EQUITY))?;
        if eq_weeks != index {
            return Err(Error::HeaderMismatch(format!(
                "{EQUITY} and {RAW_RETURNS} cover different weeks"
            )));
        }
        let column = |name: &str| -> Result<Vec<f64>> {
            let j = eq_ids
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::HeaderMismatch(format!("{EQUITY} has no column {name}")))?;
            Ok(eq_m.column(j).iter().copied().collect())
        };
        let rf = Self::series_from_column(
            &cfg.factors.risk_free,
            &index,
            &column(&cfg.factors.risk_free)?,
            Unit::Percent,
        )?;

        let mut frames: Vec<(SeriesFrame, FactorKind)> = Vec::new();
        let market = market_factor(&panel, &rf)?.renamed(cfg.factors.market.clone());
        let mut tvl: Option<DMatrix<f64>> = None;
        for sort in &cfg.factors.sort {
            let (signal, lookback) = match sort.signal {
                Signal::Size => (panel.market_caps().clone(), 1),
                Signal::Momentum => (momentum_signal(&panel), MOMENTUM_WINDOW),
                Signal::TvlRatio => {
                    if tvl.is_none() {
                        let (weeks, ids, m) = read_matrix_csv(&self.data(TVL))?;
                        if weeks != index || ids != panel.asset_ids() {
                            return Err(Error::HeaderMismatch(format!(
                                "{TVL} does not match the weeks and assets of {RAW_RETURNS}"
                            )));
                        }
                        tvl = Some(m);
                    }
                    let tvl = tvl.as_ref().expect("loaded above");
                    let caps = panel.market_caps();
                    let ratio = DMatrix::from_fn(index.len(), panel.n_assets(), |t, i| {
                        let c = caps[(t, i)];
                        if c > 0.0 {
                            tvl[(t, i)] / c
                        } else {
                            f64::NAN
                        }
                    });
                    (ratio, 1)
                }
            };
            let spec = SortSpec {
                signal_name: sort.name.clone(),
                lookback,
                long_leg: sort.long,
                weighting: sort.weighting,
                subtract_rf: sort.subtract_rf,
            };
            let mut series = long_short(&panel, &signal, &spec, Some(&rf))?;
            if sort.orthogonalize_market {
                let common = crate::panel::common_index([series.time_index(), market.time_index()]);
                series = orthogonalize(&series.restrict(&common)?, &market.restrict(&common)?)?;
            }
            frames.push((series, FactorKind::Tradable));
        }
        frames.insert(0, (market, FactorKind::Tradable));
        for name in &cfg.factors.equity {
            frames.push((
                Self::series_from_column(name, &index, &column(name)?, Unit::Percent)?,
                FactorKind::Tradable,
            ));
        }
        for name in &cfg.factors.industries {
            let raw = Self::series_from_column(name, &index, &column(name)?, Unit::Percent)?;
            let rates = rf.restrict(raw.time_index())?;
            let excess = raw.values().iter().zip(rates.values()).map(|(r, f)| r - f).collect();
            frames.push((raw.with_values(excess, Unit::Percent)?, FactorKind::Tradable));
        }

        let sample = self.sample_weeks();
        let mut pre_residual = Vec::new();
        if cfg.factors.nontradable {
            let (st_weeks, st_ids, st_m) = read_matrix_csv(&self.data(STATE))?;
            if st_weeks != index {
                return Err(Error::HeaderMismatch(format!(
                    "{STATE} and {RAW_RETURNS} cover different weeks"
                )));
            }
            // two weeks before the sample: one for percent changes, one for the AR(1) lag
            let first = sample[0] - Days::new(14);
            let window: Vec<NaiveDate> = index.iter().copied().filter(|w| *w >= first).collect();
            let state = |name: &str, unit: Unit| -> Result<SeriesFrame> {
                let j = st_ids
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| Error::HeaderMismatch(format!("{STATE} has no column {name}")))?;
                let values: Vec<f64> = st_m.column(j).iter().copied().collect();
                Self::series_from_column(name, &index, &values, unit)?.restrict(&window)
            };
            let shocks = nontradable_shocks(
                &state(SourceKind::HacksUsd.as_str(), Unit::Level)?,
                &state(TOTAL_MCAP, Unit::Level)?,
                &state(SourceKind::AltseasonIndex.as_str(), Unit::Level)?,
                &state(SourceKind::FearGreedIndex.as_str(), Unit::Level)?,
                &state(SourceKind::CvxLevel.as_str(), Unit::Level)?,
            )?;
            for j in 0..shocks.factors.n_factors() {
                frames.push((shocks.factors.series(j), FactorKind::Nontradable));
            }
            pre_residual = shocks.pre_residual;
        }

        let aligned = frames
            .iter()
            .map(|(f, kind)| Ok((f.restrict(&sample)?, *kind)))
            .collect::<Result<Vec<_>>>()?;
        let factors = FactorSet::from_frames(sample.clone(), &aligned)?;

        let excess = to_excess(&panel, &rf)?.restrict_to(&sample)?;
        let (est_panel, dropped) = excess.drop_sparse_assets(2);
        if !dropped.is_empty() {
            log::warn!(
                "{} asset(s) have fewer than 2 observed sample weeks and are left out of estimation",
                dropped.len()
            );
        }
        factors.write_csv(&self.out(FACTORS))?;
        write_panel(&est_panel, &self.out(PANEL_RETURNS), &self.out(PANEL_CAPS))?;

        let mut rows = Vec::new();
        for (frame, kind) in &aligned {
            if *kind == FactorKind::Tradable {
                rows.push((frame.name().to_string(), describe(frame)?));
            }
        }
        for series in &pre_residual {
            rows.push((series.name().to_string(), describe(&series.restrict(&sample)?)?));
        }
        let table = DescriptiveTable { rows };
        table.write_csv(&self.out(DESCRIPTIVES))?;
        write_text(&self.out(DESCRIPTIVES_MD), &table.to_markdown())?;

        self.record(
            STAGE_BUILD,
            &[
                self.data(RAW_RETURNS),
                self.data(RAW_CAPS),
                self.data(EQUITY),
                self.data(STATE),
            ],
            &[
                self.out(FACTORS),
                self.out(PANEL_RETURNS),
                self.out(PANEL_CAPS),
                self.out(DESCRIPTIVES),
            ],
            json!({"factors": factors.names(), "weeks": sample.len(), "assets": est_panel.n_assets()}),
        )?;
        Ok(BuildSummary {
            panel_weeks: est_panel.n_weeks(),
            panel_assets: est_panel.n_assets(),
            factors,
        })
    }

    fn load_estimation_inputs(&self) -> Result<(ReturnPanel, FactorSet)> {
        let panel = load_panel(&self.out(PANEL_RETURNS), &self.out(PANEL_CAPS))?;
        let factors = FactorSet::read_csv(&self.out(FACTORS))?;
        if factors.time_index() != panel.time_index() {
            return Err(Error::HeaderMismatch(format!(
                "{FACTORS} and {PANEL_RETURNS} cover different weeks"
            )));
        }
        Ok((panel, factors))
    }

    /// Bai-Ng selection on the estimation panel; writes the per-k criteria.
    pub fn select_k(&self, k_max: Option<usize>) -> Result<BaiNgSelection> {
        stage(STAGE_SELECT_K, self.select_k_inner(k_max))
    }

    fn select_k_inner(&self, k_max: Option<usize>) -> Result<BaiNgSelection> {
        let est = &self.cfg.config.estimation;
        let k_max = k_max.unwrap_or(est.k_max);
        let panel = load_panel(&self.out(PANEL_RETURNS), &self.out(PANEL_CAPS))?;
        let sel = bai_ng_k(&panel, k_max, &est.imputation)?;
        write_diagnostics(&self.out(LATENT_DIAG), &sel.reports[sel.k - 1], Some(&sel))?;
        self.record(
            STAGE_SELECT_K,
            &[self.out(PANEL_RETURNS)],
            &[self.out(LATENT_DIAG)],
            json!({"k_max": k_max, "k": sel.k}),
        )?;
        Ok(sel)
    }

    fn resolve_k(&self, panel: &ReturnPanel) -> Result<usize> {
        let est = &self.cfg.config.estimation;
        match est.k {
            KChoice::Fixed(k) => Ok(k),
            KChoice::Auto => {
                let mut cached = self.selected_k.lock().unwrap_or_else(|p| p.into_inner());
                if let Some(k) = *cached {
                    return Ok(k);
                }
                let sel = bai_ng_k(
                    panel,
                    est.k_max.min(panel.n_weeks().min(panel.n_assets())),
                    &est.imputation,
                )?;
                log::info!("Bai-Ng selected K = {}", sel.k);
                *cached = Some(sel.k);
                Ok(sel.k)
            }
        }
    }

    fn three_pass_options(&self) -> ThreePassOptions {
        let est = &self.cfg.config.estimation;
        ThreePassOptions {
            imputation: est.imputation,
            pass3_intercept: est.pass3_intercept,
        }
    }

    /// Point estimates; three-pass p-values are left blank until the
    /// bootstrap stage fills them in.
    pub fn estimate(&self, method: EstimateMethod) -> Result<PremiaTable> {
        stage(STAGE_ESTIMATE, self.estimate_inner(method))
    }

    fn estimate_inner(&self, method: EstimateMethod) -> Result<PremiaTable> {
        let (panel, factors) = self.load_estimation_inputs()?;
        let mut outputs = Vec::new();
        let mut params = serde_json::Map::new();
        if method.three_pass() {
            let k = self.resolve_k(&panel)?;
            let fit = fit_three_pass(&panel, &factors, k, &self.three_pass_options())?;
            fit.estimate.write_csv(&self.out(PREMIA_THREE_PASS))?;
            outputs.push(self.out(PREMIA_THREE_PASS));
            params.insert("k".into(), json!(k));
            params.insert("imputation_iterations".into(), json!(fit.report.iterations));
        }
        if method.fama_macbeth() {
            let fm = run_fama_macbeth(&panel, &factors)?;
            fm.to_estimate().write_csv(&self.out(PREMIA_FAMA_MACBETH))?;
            outputs.push(self.out(PREMIA_FAMA_MACBETH));
            params.insert("fama_macbeth_weeks".into(), json!(fm.weeks.len()));
            params.insert("fama_macbeth_excluded_assets".into(), json!(fm.excluded_assets.len()));
        }
        self.record(
            STAGE_ESTIMATE,
            &[self.out(PANEL_RETURNS), self.out(FACTORS)],
            &outputs,
            Value::Object(params),
        )?;
        self.report_inner()
    }

    /// Block bootstrap of the three-pass premia; rewrites the three-pass
    /// estimate file with p-values and dumps the draws.
    pub fn bootstrap(&self, overrides: BootstrapOverrides) -> Result<PremiaTable> {
        stage(STAGE_BOOTSTRAP, self.bootstrap_inner(overrides))
    }

    fn bootstrap_inner(&self, o: BootstrapOverrides) -> Result<PremiaTable> {
        let base = self.cfg.config.bootstrap_config();
        let bcfg = BootstrapConfig {
            reps: o.reps.unwrap_or(base.reps),
            block_len: o.block_len.unwrap_or(base.block_len),
            seed: o.seed.unwrap_or(base.seed),
            workers: o.workers.unwrap_or(base.workers),
        };
        let (panel, factors) = self.load_estimation_inputs()?;
        let k = self.resolve_k(&panel)?;
        let dist = bootstrap_premia(&panel, &factors, k, &self.three_pass_options(), &bcfg)?;
        let p = recentered_pvalue(&dist)?;
        let full = fit_three_pass(&panel, &factors, k, &self.three_pass_options())?;
        let estimate = full.estimate.with_pvalues(p.into_iter().map(Some).collect());
        estimate.write_csv(&self.out(PREMIA_THREE_PASS))?;
        dist.write_draws(&self.out(BOOTSTRAP_DRAWS))?;
        self.record(
            STAGE_BOOTSTRAP,
            &[self.out(PANEL_RETURNS), self.out(FACTORS)],
            &[self.out(PREMIA_THREE_PASS), self.out(BOOTSTRAP_DRAWS)],
            json!({
                "k": k,
                "reps": bcfg.reps,
                "block_len": bcfg.block_len,
                "seed": bcfg.seed,
                "failed_reps": dist.failed_reps,
            }),
        )?;
        self.report_inner()
    }

    /// Renders the premia table from whichever estimate files exist, and
    /// the descriptive table if the factors have been built.
    pub fn report(&self) -> Result<PremiaTable> {
        stage(STAGE_REPORT, self.report_inner())
    }

    fn report_inner(&self) -> Result<PremiaTable> {
        let read = |name: &str, method: Method| -> Result<Option<RiskPremiaEstimate>> {
            let path = self.out(name);
            if path.exists() {
                Ok(Some(RiskPremiaEstimate::read_csv(&path, method)?))
            } else {
                Ok(None)
            }
        };
        let gx = read(PREMIA_THREE_PASS, Method::ThreePass)?;
        let fm = read(PREMIA_FAMA_MACBETH, Method::FamaMacbeth)?;
        if gx.is_none() && fm.is_none() {
            return Err(Error::Config(format!(
                "no estimates in {}; run the estimate stage first",
                self.cfg.output_dir().display()
            )));
        }
        let table = render_premia(gx.as_ref(), fm.as_ref())?;
        table.write(&self.out(PREMIA_TABLE_MD), &self.out(PREMIA_TABLE_CSV))?;
        let mut inputs: Vec<PathBuf> = [PREMIA_THREE_PASS, PREMIA_FAMA_MACBETH]
            .iter()
            .map(|n| self.out(n))
            .filter(|p| p.exists())
            .collect();
        let mut outputs = vec![self.out(PREMIA_TABLE_MD), self.out(PREMIA_TABLE_CSV)];
        if self.out(DESCRIPTIVES).exists() {
            let desc = DescriptiveTable::read_csv(&self.out(DESCRIPTIVES))?;
            write_text(&self.out(DESCRIPTIVES_MD), &desc.to_markdown())?;
            inputs.push(self.out(DESCRIPTIVES));
            outputs.push(self.out(DESCRIPTIVES_MD));
        }
        self.record(STAGE_REPORT, &inputs, &outputs, json!({}))?;
        Ok(table)
    }

    /// Every stage in order.
    pub fn run(&self, overrides: BootstrapOverrides) -> Result<PremiaTable> {
        self.ingest()?;
        self.build_factors()?;
        self.estimate(EstimateMethod::Both)?;
        self.bootstrap(overrides)
    }

    fn rel(&self, p: &Path) -> String {
        p.strip_prefix(&self.cfg.base_dir).unwrap_or(p).display().to_string()
    }

    /// Adds or replaces this stage's entry in `manifest.json`.
    fn record(&self, name: &str, inputs: &[PathBuf], outputs: &[PathBuf], params: Value) -> Result<()> {
        let path = self.out(MANIFEST);
        let mut manifest: Value = match std::fs::read_to_string(&path) {
            Ok(text) => serde_json::from_str(&text).unwrap_or_else(|_| json!({})),
            Err(_) => json!({}),
        };
        let hashes = |files: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            files.iter().map(|f| Ok((self.rel(f), file_sha256(f)?))).collect()
        };
        let entry = json!({
            "completed_at": timestamp(),
            "inputs": hashes(inputs)?,
            "outputs": hashes(outputs)?,
            "parameters": params,
        });
        let obj = manifest.as_object_mut().expect("manifest is a JSON object");
        obj.insert("tool".into(), json!("riskprem"));
        obj.insert("version".into(), json!(env!("CARGO_PKG_VERSION")));
        obj.insert(
            "config".into(),
            json!({"path": self.cfg.path.display().to_string(), "sha256": self.cfg.sha256}),
        );
        obj.insert("seed".into(), json!(self.cfg.config.seed));
        let stages = obj.entry("stages").or_insert_with(|| json!({}));
        stages
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{} has a malformed stages entry", path.display())))?
            .insert(name.into(), entry);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_text(&path, &(text + "\n"))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0);
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|t| t.to_rfc3339())
        .unwrap_or_default()
}

/// Output files that should be identical across runs with the same inputs.
pub fn deterministic_outputs() -> BTreeSet<&'static str> {
    [
        FACTORS,
        PANEL_RETURNS,
        PANEL_CAPS,
        DESCRIPTIVES,
        DESCRIPTIVES_MD,
        PREMIA_THREE_PASS,
        PREMIA_FAMA_MACBETH,
        PREMIA_TABLE_MD,
        PREMIA_TABLE_CSV,
        BOOTSTRAP_DRAWS,
    ]
    .into_iter()
    .collect()
}
