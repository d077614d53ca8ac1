//! Two-pass Fama-MacBeth premia with Shanken-corrected standard errors.

use std::collections::HashMap;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::linalg::{sample_cov_matrix, with_intercept, OlsSolver};
use crate::panel::ReturnPanel;
use crate::three_pass::{Method, RiskPremiaEstimate};

/// First-stage time-series betas for the assets with enough history.
#[derive(Debug, Clone)]
pub struct BetaMatrix {
    pub factor_names: Vec<String>,
    /// Column positions in the panel of the retained assets.
    pub assets: Vec<usize>,
    /// Retained-assets × L slopes.
    pub betas: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    /// Weeks used per retained asset.
    pub weeks_used: Vec<usize>,
    /// Ids of assets dropped for too few weeks or a singular design.
    pub excluded: Vec<String>,
    /// L×L sample covariance (n-1) of the factors.
    pub factor_cov: DMatrix<f64>,
}

fn check_aligned(panel: &ReturnPanel, g: &FactorSet) -> Result<()> {
    if panel.time_index() != g.time_index() {
        return Err(Error::InvalidArgument(
            "return panel and observed factors are not on the same weekly index".into(),
        ));
    }
    Ok(())
}

/// Per-asset OLS of returns on an intercept and all factors over the
/// asset's observed weeks. Assets with fewer than `L + 2` weeks are
/// excluded and listed.
pub fn ts_betas(panel: &ReturnPanel, g: &FactorSet) -> Result<BetaMatrix> {
    check_aligned(panel, g)?;
    let l = g.n_factors();
    let design_full = with_intercept(g.values());
    let fits: Vec<Option<(DVector<f64>, usize)>> = (0..panel.n_assets())
        .into_par_iter()
        .map(|i| {
            let rows: Vec<usize> = (0..panel.n_weeks()).filter(|&t| panel.is_observed(t, i)).collect();
            if rows.len() < l + 2 {
                return None;
            }
            let x = design_full.select_rows(&rows);
            let y = DVector::from_iterator(rows.len(), rows.iter().map(|&t| panel.returns()[(t, i)]));
            let solver = OlsSolver::new(&x, &format!("time-series betas for {}", panel.asset_ids()[i])).ok()?;
            Some((solver.solve_vec(&y), rows.len()))
        })
        .collect();
    let mut assets = Vec::new();
    let mut excluded = Vec::new();
    let mut coefs = Vec::new();
    let mut weeks_used = Vec::new();
    for (i, fit) in fits.into_iter().enumerate() {
        match fit {
            Some((c, n)) => {
                assets.push(i);
                coefs.push(c);
                weeks_used.push(n);
            }
            None => excluded.push(panel.asset_ids()[i].clone()),
        }
    }
    if assets.is_empty() {
        return Err(Error::InsufficientData {
            context: "time-series betas (assets with enough weeks)".into(),
            required: 1,
            actual: 0,
        });
    }
    if !excluded.is_empty() {
        log::info!("{} assets excluded from Fama-MacBeth first stage", excluded.len());
    }
    let n = assets.len();
    Ok(BetaMatrix {
        factor_names: g.names().to_vec(),
        betas: DMatrix::from_fn(n, l, |a, j| coefs[a][j + 1]),
        intercepts: DVector::from_fn(n, |a, _| coefs[a][0]),
        assets,
        weeks_used,
        excluded,
        factor_cov: sample_cov_matrix(g.values()),
    })
}

#[derive(Debug, Clone)]
pub struct FMResult {
    pub factor_names: Vec<String>,
    pub lambda_mean: Vec<f64>,
    /// Weeks used × L weekly slopes.
    pub lambda_t_series: DMatrix<f64>,
    pub weeks: Vec<NaiveDate>,
    pub skipped_weeks: Vec<NaiveDate>,
    pub intercept_mean: f64,
    pub se_fm: Vec<f64>,
    pub se_shanken: Vec<f64>,
    /// `1 + lambda' Sigma_f^{-1} lambda`.
    pub shanken_multiplier: f64,
    pub pvalues: Vec<f64>,
    pub excluded_assets: Vec<String>,
}

impl FMResult {
    pub fn to_estimate(&self) -> RiskPremiaEstimate {
        RiskPremiaEstimate::new(
            self.factor_names.clone(),
            self.lambda_mean.clone(),
            Vec::new(),
            Method::FamaMacbeth,
        )
        .with_pvalues(self.pvalues.iter().map(|p| p.is_finite().then_some(*p)).collect())
    }
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Second stage: weekly cross-sectional OLS of returns on an intercept and
/// the betas, over the retained assets observed that week.
///
/// Weeks with the same set of observed assets share one factorization.
/// Weeks with fewer than `L + 2` observed assets or a singular
/// cross-section are skipped and reported.
pub fn cs_premia(betas: &BetaMatrix, panel: &ReturnPanel) -> Result<FMResult> {
    let l = betas.betas.ncols();
    if betas.assets.len() < l + 2 {
        return Err(Error::InsufficientData {
            context: "Fama-MacBeth cross-section (assets)".into(),
            required: l + 2,
            actual: betas.assets.len(),
        });
    }
    let design_all = with_intercept(&betas.betas);
    let mut groups: HashMap<Vec<usize>, Vec<usize>> = HashMap::new();
    for t in 0..panel.n_weeks() {
        let rows: Vec<usize> = betas
            .assets
            .iter()
            .enumerate()
            .filter(|(_, &i)| panel.is_observed(t, i))
            .map(|(a, _)| a)
            .collect();
        groups.entry(rows).or_default().push(t);
    }
    let mut slopes: Vec<Option<DVector<f64>>> = vec![None; panel.n_weeks()];
    let mut ordered: Vec<(Vec<usize>, Vec<usize>)> = groups.into_iter().collect();
    ordered.sort_by_key(|(_, weeks)| weeks[0]);
    for (rows, weeks) in ordered {
        if rows.len() < l + 2 {
            continue;
        }
        let x = design_all.select_rows(&rows);
        let Ok(solver) = OlsSolver::new(&x, "weekly cross-section") else {
            continue;
        };
        let y = DMatrix::from_fn(rows.len(), weeks.len(), |r, w| {
            panel.returns()[(weeks[w], betas.assets[rows[r]])]
        });
        let coef = solver.solve(&y);
        for (w, &t) in weeks.iter().enumerate() {
            slopes[t] = Some(coef.column(w).into_owned());
        }
    }
    let mut used = Vec::new();
    let mut skipped = Vec::new();
    for (t, s) in slopes.iter().enumerate() {
        if s.is_some() {
            used.push(t);
        } else {
            skipped.push(panel.time_index()[t]);
        }
    }
    if used.len() < 2 {
        return Err(Error::InsufficientData {
            context: "Fama-MacBeth weeks with a valid cross-section".into(),
            required: 2,
            actual: used.len(),
        });
    }
    if !skipped.is_empty() {
        log::warn!(
            "Fama-MacBeth skipped {} weeks with a singular or thin cross-section",
            skipped.len()
        );
    }
    let tu = used.len();
    let all = DMatrix::from_fn(tu, l + 1, |r, j| slopes[used[r]].as_ref().unwrap()[j]);
    let lambda_t = all.columns(1, l).into_owned();
    let lambda_mean: Vec<f64> = lambda_t.row_mean().iter().copied().collect();
    let intercept_mean = all.column(0).mean();
    let sigma_lambda = sample_cov_matrix(&lambda_t);
    let sigma_f = &betas.factor_cov;
    let lam = DVector::from_column_slice(&lambda_mean);
    let shanken_c = match sigma_f.clone().try_inverse() {
        Some(inv) => (lam.transpose() * inv * &lam)[0].max(0.0),
        None => {
            return Err(Error::RankDeficient {
                context: "factor covariance for the Shanken correction".into(),
                rank: 0,
                columns: l,
            })
        }
    };
    let tf = tu as f64;
    let mut se_fm = Vec::with_capacity(l);
    let mut se_shanken = Vec::with_capacity(l);
    let mut pvalues = Vec::with_capacity(l);
    for j in 0..l {
        se_fm.push((sigma_lambda[(j, j)] / tf).sqrt());
        let mut eiv = sigma_lambda[(j, j)] - sigma_f[(j, j)];
        if eiv < 0.0 {
            log::warn!(
                "Shanken beta-uncertainty term for {} is negative; floored at zero",
                betas.factor_names[j]
            );
            eiv = 0.0;
        }
        let var = ((1.0 + shanken_c) * eiv + sigma_f[(j, j)]) / tf;
        let se = var.sqrt();
        se_shanken.push(se);
        pvalues.push(if se > 0.0 {
            normal_two_sided_p(lambda_mean[j] / se)
        } else {
            f64::NAN
        });
    }
    Ok(FMResult {
        factor_names: betas.factor_names.clone(),
        lambda_mean,
        lambda_t_series: lambda_t,
        weeks: used.iter().map(|&t| panel.time_index()[t]).collect(),
        skipped_weeks: skipped,
        intercept_mean,
        se_fm,
        se_shanken,
        shanken_multiplier: 1.0 + shanken_c,
        pvalues,
        excluded_assets: betas.excluded.clone(),
    })
}

pub fn run_fama_macbeth(panel: &ReturnPanel, g: &FactorSet) -> Result<FMResult> {
    let betas = ts_betas(panel, g)?;
    cs_premia(&betas, panel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::FactorKind;
    use crate::panel::weekly_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, 1, 1).unwrap()
    }

    fn factors(values: DMatrix<f64>) -> FactorSet {
        let l = values.ncols();
        FactorSet::new(
            weekly_index(start(), values.nrows()),
            (0..l).map(|j| format!("f{j}")).collect(),
            values,
            vec![FactorKind::Tradable; l],
        )
        .unwrap()
    }

    fn normal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn exact_single_factor_beta() {
        let g = factors(DMatrix::from_column_slice(6, 1, &[1.0, -2.0, 0.5, 3.0, -1.0, 2.0]));
        let r = DMatrix::from_fn(6, 1, |t, _| 2.0 * g.values()[(t, 0)]);
        let panel = ReturnPanel::balanced(start(), r).unwrap();
        let b = ts_betas(&panel, &g).unwrap();
        assert!((b.betas[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(b.intercepts[0].abs() < 1e-12);
    }

    #[test]
    fn short_histories_are_excluded() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, l) = (20, 8);
        let g = factors(normal(&mut rng, t, l));
        let mut r = normal(&mut rng, t, 2);
        let mut obs = DMatrix::from_element(t, 2, true);
        for s in 3..t {
            obs[(s, 1)] = false;
            r[(s, 1)] = f64::NAN;
        }
        let panel = ReturnPanel::new(
            weekly_index(start(), t),
            vec!["LONG".into(), "SHORT".into()],
            r,
            obs,
            DMatrix::from_element(t, 2, f64::NAN),
        )
        .unwrap();
        let b = ts_betas(&panel, &g).unwrap();
        assert_eq!(b.excluded, vec!["SHORT".to_string()]);
        assert_eq!(b.assets, vec![0]);
    }

    fn economy(seed: u64, t: usize, n: usize) -> (ReturnPanel, FactorSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = factors(normal(&mut rng, t, 2).add_scalar(0.2));
        let beta = normal(&mut rng, n, 2);
        let r = g.values() * beta.transpose() + normal(&mut rng, t, n) * 0.5;
        (ReturnPanel::balanced(start(), r).unwrap(), g)
    }

    #[test]
    fn balanced_mean_matches_one_shot_regression() {
        let (panel, g) = economy(2, 80, 30);
        let res = run_fama_macbeth(&panel, &g).unwrap();
        let b = ts_betas(&panel, &g).unwrap();
        let rbar = DVector::from_vec(panel.asset_means());
        let one_shot = OlsSolver::new(&with_intercept(&b.betas), "one shot")
            .unwrap()
            .solve_vec(&rbar);
        for j in 0..2 {
            assert!((res.lambda_mean[j] - one_shot[j + 1]).abs() < 1e-10);
        }
        assert!(res.skipped_weeks.is_empty());
    }

    #[test]
    fn shanken_multiplier_matches_formula() {
        let (panel, g) = economy(3, 80, 30);
        let res = run_fama_macbeth(&panel, &g).unwrap();
        let lam = DVector::from_column_slice(&res.lambda_mean);
        let inv = sample_cov_matrix(g.values()).try_inverse().unwrap();
        let expected = 1.0 + (lam.transpose() * inv * &lam)[0];
        assert!((res.shanken_multiplier - expected).abs() < 1e-12);
        assert!(res.shanken_multiplier >= 1.0);
        for j in 0..2 {
            let z = res.lambda_mean[j] / res.se_shanken[j];
            assert!((res.pvalues[j] - normal_two_sided_p(z)).abs() < 1e-15);
        }
    }

    #[test]
    fn rescaling_a_factor_scales_premium() {
        let (panel, g) = economy(4, 60, 25);
        let base = run_fama_macbeth(&panel, &g).unwrap();
        let c = 4.0;
        let scaled = g
            .with_column(1, &g.column(1).iter().map(|v| v * c).collect::<Vec<_>>())
            .unwrap();
        let res = run_fama_macbeth(&panel, &scaled).unwrap();
        assert!((res.lambda_mean[1] - c * base.lambda_mean[1]).abs() < 1e-10);
        assert!((res.lambda_mean[0] - base.lambda_mean[0]).abs() < 1e-10);
        for j in 0..2 {
            assert!((res.pvalues[j] - base.pvalues[j]).abs() < 1e-10);
        }
        let b0 = ts_betas(&panel, &g).unwrap();
        let b1 = ts_betas(&panel, &scaled).unwrap();
        assert!((b1.betas.column(1) * c - b0.betas.column(1)).amax() < 1e-10);
    }

    #[test]
    fn thin_weeks_are_skipped_and_reported() {
        let (panel, g) = economy(5, 40, 12);
        let mut r = panel.returns().clone();
        let mut obs = panel.observed_mask().clone();
        for i in 3..12 {
            r[(7, i)] = f64::NAN;
            obs[(7, i)] = false;
        }
        let thin = ReturnPanel::new(
            panel.time_index().to_vec(),
            panel.asset_ids().to_vec(),
            r,
            obs,
            panel.market_caps().clone(),
        )
        .unwrap();
        let res = run_fama_macbeth(&thin, &g).unwrap();
        assert_eq!(res.skipped_weeks, vec![thin.time_index()[7]]);
        assert_eq!(res.lambda_t_series.nrows(), 39);
    }

    #[test]
    fn unbalanced_panel_uses_observed_cross_sections() {
        let (panel, g) = economy(6, 50, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let mut r = panel.returns().clone();
        let mut obs = panel.observed_mask().clone();
        for t in 0..50 {
            for i in 0..20 {
                if rng.random::<f64>() < 0.15 {
                    r[(t, i)] = f64::NAN;
                    obs[(t, i)] = false;
                }
            }
        }
        let p = ReturnPanel::new(
            panel.time_index().to_vec(),
            panel.asset_ids().to_vec(),
            r,
            obs,
            panel.market_caps().clone(),
        )
        .unwrap();
        let res = run_fama_macbeth(&p, &g).unwrap();
        let b = ts_betas(&p, &g).unwrap();
        // oracle for one week: direct OLS on that week's observed assets
        let t = 10;
        let rows: Vec<usize> = (0..b.assets.len()).filter(|&a| p.is_observed(t, b.assets[a])).collect();
        let x = with_intercept(&b.betas.select_rows(&rows));
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&a| p.returns()[(t, b.assets[a])]));
        let direct = OlsSolver::new(&x, "oracle").unwrap().solve_vec(&y);
        let pos = res.weeks.iter().position(|w| *w == p.time_index()[t]).unwrap();
        for j in 0..2 {
            assert!((res.lambda_t_series[(pos, j)] - direct[j + 1]).abs() < 1e-10);
        }
    }

    #[test]
    fn estimate_carries_pvalues_and_stars() {
        let (panel, g) = economy(7, 80, 30);
        let est = run_fama_macbeth(&panel, &g).unwrap().to_estimate();
        assert_eq!(est.method, Method::FamaMacbeth);
        assert!(est.pvalues.iter().all(Option::is_some));
    }
}
