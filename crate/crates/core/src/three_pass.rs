//! Three-pass risk premia: latent factors by PCA, a time-series map from
//! latent to observed factors, and cross-sectional pricing of the latent
//! factors carried over to the observed ones through that map.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::latent::{impute_pca, ImputationConfig, ImputationReport, LatentFactorModel};
use crate::linalg::{with_intercept, OlsSolver};
use crate::panel::{create, format_value, ReturnPanel};

/// Time-series regression `g_t = a + Lambda u_t + e_t` for every observed
/// factor.
#[derive(Debug, Clone)]
pub struct FactorMapping {
    /// L×K slopes.
    pub lambda: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub r2: Vec<f64>,
    /// T×L residuals.
    pub residuals: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ThreePass,
    FamaMacbeth,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::ThreePass => "three_pass",
            Method::FamaMacbeth => "fama_macbeth",
        }
    }
}

/// Significance marker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stars {
    None,
    P10,
    P5,
    P1,
}

impl Stars {
    /// `***` below 0.01, `**` below 0.05, `*` below 0.10; missing or NaN
    /// p-values get no stars.
    pub fn from_pvalue(p: Option<f64>) -> Stars {
        match p {
            Some(p) if p < 0.01 => Stars::P1,
            Some(p) if p < 0.05 => Stars::P5,
            Some(p) if p < 0.10 => Stars::P10,
            _ => Stars::None,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::P10 => "*",
            Stars::P5 => "**",
            Stars::P1 => "***",
        }
    }
}

impl fmt::Display for Stars {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Per-factor prices of risk from either estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskPremiaEstimate {
    pub factor_names: Vec<String>,
    /// Weekly premia in the factors' own units (percent for tradable
    /// factors).
    pub lambda_g: Vec<f64>,
    /// Latent-factor prices of risk; empty for Fama-MacBeth.
    pub gamma: Vec<f64>,
    pub method: Method,
    pub pvalues: Vec<Option<f64>>,
    pub stars: Vec<Stars>,
}

impl RiskPremiaEstimate {
    pub fn new(factor_names: Vec<String>, lambda_g: Vec<f64>, gamma: Vec<f64>, method: Method) -> Self {
        let l = factor_names.len();
        RiskPremiaEstimate {
            factor_names,
            lambda_g,
            gamma,
            method,
            pvalues: vec![None; l],
            stars: vec![Stars::None; l],
        }
    }

    /// Replaces p-values and recomputes stars from them.
    pub fn with_pvalues(mut self, pvalues: Vec<Option<f64>>) -> Self {
        self.stars = pvalues.iter().map(|p| Stars::from_pvalue(*p)).collect();
        self.pvalues = pvalues;
        self
    }

    /// `premia_<method>.csv`: `factor,lambda_weekly_pct,pvalue,stars`, with
    /// a blank p-value when none has been computed.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::csv("premia output", e);
        wtr.write_record(["factor", "lambda_weekly_pct", "pvalue", "stars"])
            .map_err(err)?;
        for j in 0..self.factor_names.len() {
            wtr.write_record([
                self.factor_names[j].clone(),
                format_value(self.lambda_g[j]),
                self.pvalues[j].map(format_value).unwrap_or_default(),
                self.stars[j].symbol().to_string(),
            ])
            .map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::csv("premia output", e))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(create(path)?)
    }

    /// Reads a premia CSV written by [`RiskPremiaEstimate::write_csv_to`].
    /// Gamma is not stored and comes back empty.
    pub fn read_csv(path: &Path, method: Method) -> Result<Self> {
        let context = path.display().to_string();
        let mut rdr = csv::Reader::from_reader(crate::panel::open(path)?);
        let headers = rdr.headers().map_err(|e| Error::csv(&context, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["factor", "lambda_weekly_pct", "pvalue", "stars"] {
            return Err(Error::HeaderMismatch(format!("{context}: unexpected premia header")));
        }
        let (mut names, mut lambda, mut pvalues) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::csv(&context, e))?;
            let num = |col: usize, name: &str| {
                rec[col].trim().parse::<f64>().map_err(|_| Error::NonNumeric {
                    context: context.clone(),
                    row: row + 1,
                    column: name.to_string(),
                    value: rec[col].to_string(),
                })
            };
            names.push(rec[0].to_string());
            lambda.push(num(1, "lambda_weekly_pct")?);
            pvalues.push(if rec[2].trim().is_empty() {
                None
            } else {
                Some(num(2, "pvalue")?)
            });
        }
        Ok(RiskPremiaEstimate::new(names, lambda, Vec::new(), method).with_pvalues(pvalues))
    }
}

/// Pass 2: OLS of each observed factor on an intercept and the latent
/// factors.
pub fn pass2_map(g: &FactorSet, model: &LatentFactorModel) -> Result<FactorMapping> {
    let t = model.n_weeks();
    if g.n_weeks() != t {
        return Err(Error::DimensionMismatch {
            context: "observed factors vs latent factors (weeks)".into(),
            expected: t,
            actual: g.n_weeks(),
        });
    }
    if g.n_factors() == 0 {
        return Err(Error::InvalidArgument("no observed factors".into()));
    }
    let design = with_intercept(&model.factors_u);
    let solver = OlsSolver::new(&design, "pass 2 regression")?;
    let y = g.values();
    let coef = solver.solve(y);
    let residuals = y - &design * &coef;
    let mut r2 = Vec::with_capacity(g.n_factors());
    for j in 0..g.n_factors() {
        let col = y.column(j);
        let m = col.mean();
        let sst: f64 = col.iter().map(|v| (v - m).powi(2)).sum();
        // rounding in the mean leaves a tiny positive sum for constant input
        if sst <= (4.0 * f64::EPSILON * m.abs()).powi(2) * t as f64 {
            return Err(Error::Degenerate(format!(
                "observed factor {} is constant",
                g.names()[j]
            )));
        }
        let ssr = residuals.column(j).norm_squared();
        r2.push((1.0 - ssr / sst).clamp(0.0, 1.0));
    }
    Ok(FactorMapping {
        lambda: coef.rows(1, model.k).transpose(),
        intercepts: coef.row(0).transpose(),
        r2,
        residuals,
    })
}

/// Pass 3 result.
#[derive(Debug, Clone, PartialEq)]
pub struct Pass3 {
    pub gamma: DVector<f64>,
    /// Cross-sectional intercept when one was requested.
    pub intercept: Option<f64>,
}

/// Pass 3: cross-sectional OLS of each asset's mean excess return (over its
/// own observed weeks) on its loadings.
pub fn pass3_gamma(panel: &ReturnPanel, model: &LatentFactorModel, intercept: bool) -> Result<Pass3> {
    if model.n_assets() != panel.n_assets() {
        return Err(Error::DimensionMismatch {
            context: "loadings vs panel assets".into(),
            expected: panel.n_assets(),
            actual: model.n_assets(),
        });
    }
    let rbar = DVector::from_vec(panel.asset_means());
    let design = if intercept {
        with_intercept(&model.loadings_b)
    } else {
        model.loadings_b.clone()
    };
    let coef = OlsSolver::new(&design, "pass 3 regression")?.solve_vec(&rbar);
    Ok(if intercept {
        Pass3 {
            gamma: coef.rows(1, model.k).into_owned(),
            intercept: Some(coef[0]),
        }
    } else {
        Pass3 {
            gamma: coef,
            intercept: None,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreePassOptions {
    pub imputation: ImputationConfig,
    pub pass3_intercept: bool,
}

impl Default for ThreePassOptions {
    fn default() -> Self {
        ThreePassOptions {
            imputation: ImputationConfig::default(),
            pass3_intercept: false,
        }
    }
}

/// Everything produced by one three-pass run.
#[derive(Debug, Clone)]
pub struct ThreePassFit {
    pub estimate: RiskPremiaEstimate,
    pub mapping: FactorMapping,
    pub pass3: Pass3,
    pub model: LatentFactorModel,
    pub report: ImputationReport,
}

/// Passes 2 and 3 for a given latent model.
pub fn premia_from_model(
    panel: &ReturnPanel,
    g: &FactorSet,
    model: &LatentFactorModel,
    pass3_intercept: bool,
) -> Result<(RiskPremiaEstimate, FactorMapping, Pass3)> {
    let mapping = pass2_map(g, model)?;
    let pass3 = pass3_gamma(panel, model, pass3_intercept)?;
    let lambda_g = &mapping.lambda * &pass3.gamma;
    let estimate = RiskPremiaEstimate::new(
        g.names().to_vec(),
        lambda_g.iter().copied().collect(),
        pass3.gamma.iter().copied().collect(),
        Method::ThreePass,
    );
    Ok((estimate, mapping, pass3))
}

pub fn fit_three_pass(panel: &ReturnPanel, g: &FactorSet, k: usize, opts: &ThreePassOptions) -> Result<ThreePassFit> {
    if panel.time_index() != g.time_index() {
        return Err(Error::InvalidArgument(
            "return panel and observed factors are not on the same weekly index".into(),
        ));
    }
    let imputed = impute_pca(panel, k, &opts.imputation)?;
    let (estimate, mapping, pass3) = premia_from_model(panel, g, &imputed.model, opts.pass3_intercept)?;
    Ok(ThreePassFit {
        estimate,
        mapping,
        pass3,
        model: imputed.model,
        report: imputed.report,
    })
}

/// Three-pass premia with p-values left unset.
pub fn run_three_pass(
    panel: &ReturnPanel,
    g: &FactorSet,
    k: usize,
    cfg: &ImputationConfig,
) -> Result<RiskPremiaEstimate> {
    let opts = ThreePassOptions {
        imputation: *cfg,
        pass3_intercept: false,
    };
    Ok(fit_three_pass(panel, g, k, &opts)?.estimate)
}
