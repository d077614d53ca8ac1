//! Weekly risk-premia estimation for crypto assets: latent-factor (three-pass)
//! and Fama-MacBeth estimators, factor construction, data ingestion and a
//! moving-block bootstrap.

pub mod bootstrap;
pub mod config;
pub mod error;
pub mod factors;
pub mod fama_macbeth;
pub mod ingest;
pub mod latent;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod report;
pub mod stats;
pub mod synthetic;
pub mod three_pass;

pub use bootstrap::{bootstrap_premia, recentered_pvalue, BootstrapConfig, BootstrapDistribution};
pub use config::{KChoice, LoadedConfig, RunConfig};
pub use error::{Error, ErrorClass, Result};
pub use factors::{FactorKind, FactorSet};
pub use fama_macbeth::{run_fama_macbeth, FMResult};
pub use ingest::{SourceKind, API_KEY_ENV};
pub use latent::{bai_ng_k, impute_pca, pca_balanced, BaiNgSelection, ImputationConfig, LatentFactorModel};
pub use panel::{ReturnPanel, SeriesFrame, Unit};
pub use pipeline::{BootstrapOverrides, EstimateMethod, Pipeline};
pub use report::{annualize, render_premia, PremiaTable};
pub use stats::{describe, StatsRow};
pub use three_pass::{fit_three_pass, Method, RiskPremiaEstimate, ThreePassOptions};
