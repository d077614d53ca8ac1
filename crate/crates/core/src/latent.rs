//! Latent factors by principal components, with iterative imputation for
//! unbalanced panels and Bai-Ng selection of the number of factors.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{create, ReturnPanel};

/// Estimated latent factor structure `r_it = a_i + b_i' u_t + e_it`.
#[derive(Debug, Clone)]
pub struct LatentFactorModel {
    /// T×K, normalized so that `U'U / T = I`.
    pub factors_u: DMatrix<f64>,
    /// N×K loadings.
    pub loadings_b: DMatrix<f64>,
    /// Top-K eigenvalues of `Xc Xc' / (N T)`, nonincreasing.
    pub eigenvalues: Vec<f64>,
    pub asset_intercepts: DVector<f64>,
    pub k: usize,
}

impl LatentFactorModel {
    /// Fitted values `a + U B'` as a T×N matrix.
    pub fn reconstruction(&self) -> DMatrix<f64> {
        let mut fit = &self.factors_u * self.loadings_b.transpose();
        for (i, mut col) in fit.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.asset_intercepts[i]);
        }
        fit
    }

    pub fn n_weeks(&self) -> usize {
        self.factors_u.nrows()
    }

    pub fn n_assets(&self) -> usize {
        self.loadings_b.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputationInit {
    /// Missing cells start at zero after demeaning, i.e. at the asset's mean.
    Zeros,
    /// Missing cells start at that week's cross-sectional mean.
    CrossSectionalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImputationConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub init: ImputationInit,
}

impl Default for ImputationConfig {
    fn default() -> Self {
        ImputationConfig {
            tol: 1e-8,
            max_iter: 500,
            init: ImputationInit::Zeros,
        }
    }
}

impl ImputationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Config("imputation tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("imputation max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImputationReport {
    pub iterations: usize,
    pub converged: bool,
    /// Relative Frobenius change of the filled matrix at the last iteration.
    pub final_delta: f64,
    /// Observed-cell sum of squared residuals after each iteration.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Imputed {
    pub model: LatentFactorModel,
    pub report: ImputationReport,
    /// Panel with missing cells replaced by their fitted values.
    pub completed: DMatrix<f64>,
}

fn check_k(k: usize, t: usize, n: usize) -> Result<()> {
    if k == 0 || k > t.min(n) {
        return Err(Error::InvalidArgument(format!(
            "number of latent factors {k} must be between 1 and min(T, N) = {}",
            t.min(n)
        )));
    }
    Ok(())
}

fn demean(x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let t = x.nrows();
    let mut xc = x.clone();
    let mut means = DVector::zeros(x.ncols());
    if t > 0 {
        for (i, col) in xc.as_mut_slice().chunks_exact_mut(t).enumerate() {
            let m = col.iter().sum::<f64>() / t as f64;
            col.iter_mut().for_each(|v| *v -= m);
            means[i] = m;
        }
    }
    (xc, means)
}

/// Eigenpairs of a symmetric matrix, largest first.
fn sorted_eigen(g: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

/// Flips factor columns so every loading column has a nonnegative sum.
fn fix_signs(u: &mut DMatrix<f64>, b: &mut DMatrix<f64>) {
    for j in 0..u.ncols() {
        if b.column(j).sum() < 0.0 {
            u.column_mut(j).neg_mut();
            b.column_mut(j).neg_mut();
        }
    }
}

/// Orthonormal T×K basis of the leading left singular subspace of `xc`,
/// together with the K largest eigenvalues of `xc xc'`.
fn leading_subspace(xc: &DMatrix<f64>, k: usize) -> (DMatrix<f64>, Vec<f64>) {
    let (t, n) = xc.shape();
    if t <= n {
        let (values, vectors) = sorted_eigen(xc * xc.transpose());
        return (vectors.columns(0, k).into_owned(), values[..k].to_vec());
    }
    let (values, w) = sorted_eigen(xc.transpose() * xc);
    let top = values[0].max(0.0);
    if values[k - 1] > top * 1e-10 && values[k - 1] > 0.0 {
        let mut q = xc * w.columns(0, k);
        for j in 0..k {
            let norm = q.column(j).norm();
            q.column_mut(j).unscale_mut(norm);
        }
        return (q, values[..k].to_vec());
    }
    // Rank-deficient tall matrix: singular vectors from a full SVD keep the
    // basis orthonormal even where singular values vanish.
    let svd = xc.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let keep = &order[..k];
    (
        u.select_columns(keep),
        keep.iter().map(|&j| svd.singular_values[j].powi(2)).collect(),
    )
}

/// Principal components of a complete T×N matrix after removing column
/// means.
pub fn pca_balanced(x: &DMatrix<f64>, k: usize) -> Result<LatentFactorModel> {
    let (t, n) = x.shape();
    check_k(k, t, n)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let (xc, means) = demean(x);
    let (basis, values) = leading_subspace(&xc, k);
    let tf = t as f64;
    let mut u = basis * tf.sqrt();
    let mut b = xc.transpose() * &u / tf;
    fix_signs(&mut u, &mut b);
    Ok(LatentFactorModel {
        factors_u: u,
        loadings_b: b,
        eigenvalues: values.iter().map(|v| v.max(0.0) / (n as f64 * tf)).collect(),
        asset_intercepts: means,
        k,
    })
}

fn initial_fill(panel: &ReturnPanel, init: ImputationInit) -> DMatrix<f64> {
    let (t, n) = (panel.n_weeks(), panel.n_assets());
    let mut f = panel.returns().clone();
    match init {
        ImputationInit::Zeros => {
            let means = panel.asset_means();
            for i in 0..n {
                for s in 0..t {
                    if !panel.is_observed(s, i) {
                        f[(s, i)] = means[i];
                    }
                }
            }
        }
        ImputationInit::CrossSectionalMean => {
            for s in 0..t {
                let (sum, cnt) = (0..n)
                    .filter_map(|i| panel.ret(s, i))
                    .fold((0.0, 0usize), |(a, c), v| (a + v, c + 1));
                let m = sum / cnt as f64;
                for i in 0..n {
                    if !panel.is_observed(s, i) {
                        f[(s, i)] = m;
                    }
                }
            }
        }
    }
    f
}

fn observed_sse(panel: &ReturnPanel, fit: &DMatrix<f64>) -> f64 {
    let x = panel.returns().as_slice();
    let mask = panel.observed_mask().as_slice();
    x.iter()
        .zip(mask)
        .zip(fit.as_slice())
        .map(|((x, &obs), f)| if obs { (x - f) * (x - f) } else { 0.0 })
        .sum()
}

/// Latent factors of an unbalanced panel by iterative imputation.
///
/// Missing cells are repeatedly replaced by the current K-factor fit while
/// observed cells stay fixed. Each iteration is one alternating
/// least-squares sweep (intercepts and loadings given factors, then factors
/// given loadings), which never increases the observed-cell squared error
/// and shares its fixed points with refitting a full PCA every iteration.
/// The returned model is an exact PCA of the final completed matrix.
pub fn impute_pca(panel: &ReturnPanel, k: usize, cfg: &ImputationConfig) -> Result<Imputed> {
    cfg.validate()?;
    let (t, n) = (panel.n_weeks(), panel.n_assets());
    check_k(k, t, n)?;
    if let Some(s) = panel.observations_per_week().iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData {
            context: format!("week {} of the panel", panel.time_index()[s]),
            required: 1,
            actual: 0,
        });
    }
    if let Some(i) = panel.observations_per_asset().iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData {
            context: format!("asset {}", panel.asset_ids()[i]),
            required: 1,
            actual: 0,
        });
    }
    let missing: Vec<usize> = panel
        .observed_mask()
        .iter()
        .enumerate()
        .filter(|(_, &o)| !o)
        .map(|(idx, _)| idx)
        .collect();
    if missing.is_empty() {
        let model = pca_balanced(panel.returns(), k)?;
        let objective = vec![observed_sse(panel, &model.reconstruction())];
        return Ok(Imputed {
            completed: panel.returns().clone(),
            model,
            report: ImputationReport {
                iterations: 0,
                converged: true,
                final_delta: 0.0,
                objective,
            },
        });
    }

    let tf = t as f64;
    let mut filled = initial_fill(panel, cfg.init);
    let mut u = pca_balanced(&filled, k)?.factors_u;
    let mut report = ImputationReport {
        iterations: 0,
        converged: false,
        final_delta: f64::INFINITY,
        objective: Vec::new(),
    };
    for iter in 1..=cfg.max_iter {
        let (xc, means) = demean(&filled);
        // loadings given factors; U is column-demeaned with U'U = T I
        let b = (u.transpose() * &xc).transpose() / tf;
        // factors given loadings
        let Some(btb_inv) = (b.transpose() * &b).try_inverse() else {
            return Err(Error::RankDeficient {
                context: "imputation loading update".into(),
                rank: 0,
                columns: k,
            });
        };
        let raw_u = &xc * (&b * btb_inv);
        // re-normalize without changing the fit U B': with raw_u'raw_u = R'R,
        // U = sqrt(T) raw_u R^-1 and B <- B R' / sqrt(T)
        let Some(chol) = (raw_u.transpose() * &raw_u).cholesky() else {
            return Err(Error::RankDeficient {
                context: "imputation factor update".into(),
                rank: 0,
                columns: k,
            });
        };
        let r = chol.l().transpose();
        let r_inv = r.clone().try_inverse().expect("Cholesky factor is invertible");
        u = raw_u * r_inv * tf.sqrt();
        let b = &b * r.transpose() / tf.sqrt();

        let mut fit = &u * b.transpose();
        for (i, col) in fit.as_mut_slice().chunks_exact_mut(t).enumerate() {
            col.iter_mut().for_each(|v| *v += means[i]);
        }
        let (fit_cells, filled_cells) = (fit.as_slice(), filled.as_mut_slice());
        let mut change = 0.0;
        for &idx in &missing {
            let d = fit_cells[idx] - filled_cells[idx];
            change += d * d;
            filled_cells[idx] = fit_cells[idx];
        }
        let size = filled_cells.iter().map(|v| v * v).sum::<f64>().sqrt();
        let delta = change.sqrt() / size.max(f64::MIN_POSITIVE);
        report.iterations = iter;
        report.final_delta = delta;
        report.objective.push(observed_sse(panel, &fit));
        if !delta.is_finite() {
            return Err(Error::NonFinite("imputation update".into()));
        }
        if delta < cfg.tol {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        log::warn!(
            "imputation PCA (K={k}) did not converge in {} iterations; final relative change {:.3e}",
            report.iterations,
            report.final_delta
        );
    }
    let model = pca_balanced(&filled, k)?;
    Ok(Imputed {
        model,
        report,
        completed: filled,
    })
}

/// Information criteria for one candidate number of factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IcRow {
    pub k: usize,
    /// Mean squared residual over observed cells.
    pub v: f64,
    pub icp1: f64,
    pub icp2: f64,
    pub icp3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaiNgSelection {
    /// Minimizer of ICp2.
    pub k: usize,
    pub table: Vec<IcRow>,
    pub reports: Vec<ImputationReport>,
}

impl BaiNgSelection {
    pub fn argmin_by(&self, ic: impl Fn(&IcRow) -> f64) -> usize {
        self.table
            .iter()
            .min_by(|a, b| ic(a).total_cmp(&ic(b)).then(a.k.cmp(&b.k)))
            .map(|r| r.k)
            .expect("selection table is nonempty")
    }
}

pub const DEFAULT_K_MAX: usize = 15;

/// Chooses K by minimizing the Bai-Ng ICp2 criterion over `1..=k_max`.
///
/// V(k) is floored at `1e-14` times the variance of the demeaned observed
/// returns so that an exactly low-rank panel does not let rounding noise in
/// `ln V` decide between factor counts that all fit perfectly.
pub fn bai_ng_k(panel: &ReturnPanel, k_max: usize, cfg: &ImputationConfig) -> Result<BaiNgSelection> {
    let (t, n) = (panel.n_weeks(), panel.n_assets());
    check_k(k_max, t, n)?;
    let fits: Vec<Result<(f64, ImputationReport)>> = (1..=k_max)
        .into_par_iter()
        .map(|k| {
            let imp = impute_pca(panel, k, cfg)?;
            let cells = panel.observed_mask().iter().filter(|&&o| o).count();
            let v = observed_sse(panel, &imp.model.reconstruction()) / cells as f64;
            Ok((v, imp.report))
        })
        .collect();
    let means = panel.asset_means();
    let (mut ss, mut cells) = (0.0, 0usize);
    for i in 0..n {
        for s in 0..t {
            if let Some(r) = panel.ret(s, i) {
                ss += (r - means[i]).powi(2);
                cells += 1;
            }
        }
    }
    let floor = 1e-14 * (ss / cells as f64).max(f64::MIN_POSITIVE);
    let (nf, tf) = (n as f64, t as f64);
    let c2 = nf.min(tf);
    let scale = (nf + tf) / (nf * tf);
    let mut table = Vec::with_capacity(k_max);
    let mut reports = Vec::with_capacity(k_max);
    for (idx, fit) in fits.into_iter().enumerate() {
        let (v, report) = fit?;
        let k = (idx + 1) as f64;
        let lv = v.max(floor).ln();
        table.push(IcRow {
            k: idx + 1,
            v,
            icp1: lv + k * scale * (nf * tf / (nf + tf)).ln(),
            icp2: lv + k * scale * c2.ln(),
            icp3: lv + k * (c2.ln() / c2),
        });
        reports.push(report);
    }
    let mut sel = BaiNgSelection { k: 0, table, reports };
    sel.k = sel.argmin_by(|r| r.icp2);
    Ok(sel)
}

/// Writes `latent_diag.csv`: per-iteration imputation objectives for the
/// chosen K, then the per-k information criteria.
pub fn write_diagnostics(path: &Path, report: &ImputationReport, selection: Option<&BaiNgSelection>) -> Result<()> {
    let mut out = std::io::BufWriter::new(create(path)?);
    let io = |e| Error::io(path, e);
    writeln!(out, "section,k,iteration,objective,v,icp1,icp2,icp3").map_err(io)?;
    for (it, obj) in report.objective.iter().enumerate() {
        writeln!(out, "iteration,,{},{obj},,,,", it + 1).map_err(io)?;
    }
    if let Some(sel) = selection {
        for r in &sel.table {
            writeln!(out, "ic,{},,,{},{},{},{}", r.k, r.v, r.icp1, r.icp2, r.icp3).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::weekly_index;
    use chrono::NaiveDate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn masked(x: &DMatrix<f64>, frac: f64, rng: &mut ChaCha8Rng) -> ReturnPanel {
        let (t, n) = x.shape();
        let mut obs = DMatrix::from_fn(t, n, |_, _| rng.random::<f64>() >= frac);
        for s in 0..t {
            obs[(s, s % n)] = true;
        }
        for i in 0..n {
            obs[(i % t, i)] = true;
        }
        let r = DMatrix::from_fn(t, n, |s, i| if obs[(s, i)] { x[(s, i)] } else { f64::NAN });
        ReturnPanel::new(
            weekly_index(NaiveDate::from_ymd_opt(2023, 1, 1).unwrap(), t),
            (0..n).map(|i| format!("A{i:03}")).collect(),
            r,
            obs,
            DMatrix::from_element(t, n, f64::NAN),
        )
        .unwrap()
    }

    fn assert_normalized(m: &LatentFactorModel) {
        let t = m.n_weeks() as f64;
        let gram = m.factors_u.transpose() * &m.factors_u / t;
        assert!((gram - DMatrix::identity(m.k, m.k)).amax() < 1e-8);
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..m.k {
            assert!(m.loadings_b.column(j).sum() >= 0.0);
        }
    }

    #[test]
    fn rank_one_is_reconstructed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = gaussian(&mut rng, 30, 1);
        let v = gaussian(&mut rng, 1, 12);
        let x = &u * &v;
        let m = pca_balanced(&x, 1).unwrap();
        assert!((m.reconstruction() - &x).amax() < 1e-10);
        assert_normalized(&m);
    }

    #[test]
    fn full_rank_is_reconstructed_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (t, n) in [(8, 12), (12, 8)] {
            let x = gaussian(&mut rng, t, n);
            let m = pca_balanced(&x, t.min(n)).unwrap();
            assert!((m.reconstruction() - &x).amax() < 1e-9, "{t}x{n}");
            assert_normalized(&m);
        }
    }

    #[test]
    fn noisy_rank_one_keeps_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = gaussian(&mut rng, 40, 1) * gaussian(&mut rng, 1, 25) + gaussian(&mut rng, 40, 25) * 0.01;
        let m = pca_balanced(&x, 2).unwrap();
        assert!(m.eigenvalues[0] >= m.eigenvalues[1]);
        assert_normalized(&m);
    }

    #[test]
    fn rejects_bad_k_and_non_finite() {
        let x = DMatrix::from_element(3, 4, 1.0);
        assert!(pca_balanced(&x, 0).is_err());
        assert!(pca_balanced(&x, 4).is_err());
        let mut y = x.clone();
        y[(0, 0)] = f64::NAN;
        assert!(matches!(pca_balanced(&y, 1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tall_path_matches_singular_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = gaussian(&mut rng, 30, 3) * gaussian(&mut rng, 3, 12) + gaussian(&mut rng, 30, 12) * 0.1;
        let m = pca_balanced(&x, 3).unwrap();
        let (xc, _) = demean(&x);
        let mut sv: Vec<f64> = xc.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for j in 0..3 {
            let expected = sv[j] * sv[j] / (30.0 * 12.0);
            assert!((m.eigenvalues[j] - expected).abs() / expected < 1e-10);
        }
        assert_normalized(&m);
    }

    #[test]
    fn complete_panel_matches_balanced_pca() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = gaussian(&mut rng, 25, 18);
        let panel = masked(&x, 0.0, &mut rng);
        let imp = impute_pca(&panel, 3, &ImputationConfig::default()).unwrap();
        let direct = pca_balanced(&x, 3).unwrap();
        assert!((imp.model.factors_u - direct.factors_u).amax() < 1e-10);
        assert!((imp.model.loadings_b - direct.loadings_b).amax() < 1e-10);
        assert!(imp.report.converged);
    }

    #[test]
    fn exact_low_rank_cells_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = gaussian(&mut rng, 60, 2) * gaussian(&mut rng, 2, 40);
        let panel = masked(&x, 0.10, &mut rng);
        let cfg = ImputationConfig {
            tol: 1e-12,
            ..ImputationConfig::default()
        };
        let imp = impute_pca(&panel, 2, &cfg).unwrap();
        assert!(imp.report.converged);
        assert!(imp.report.iterations < 50, "{} iterations", imp.report.iterations);
        let err = (imp.completed - &x).amax() / x.amax();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn observed_objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = gaussian(&mut rng, 50, 3) * gaussian(&mut rng, 3, 35) + gaussian(&mut rng, 50, 35);
        let panel = masked(&x, 0.2, &mut rng);
        let imp = impute_pca(&panel, 3, &ImputationConfig::default()).unwrap();
        for w in imp.report.objective.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        for s in 0..50 {
            for i in 0..35 {
                if let Some(r) = panel.ret(s, i) {
                    assert_eq!(imp.completed[(s, i)], r);
                }
            }
        }
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = gaussian(&mut rng, 30, 20);
        let panel = masked(&x, 0.3, &mut rng);
        let cfg = ImputationConfig {
            tol: 1e-300,
            max_iter: 3,
            ..ImputationConfig::default()
        };
        let imp = impute_pca(&panel, 2, &cfg).unwrap();
        assert!(!imp.report.converged);
        assert_eq!(imp.report.iterations, 3);
        assert!(imp.report.final_delta > 0.0);
    }

    #[test]
    fn cross_sectional_init_reaches_the_same_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian(&mut rng, 40, 2) * gaussian(&mut rng, 2, 30);
        let panel = masked(&x, 0.15, &mut rng);
        let cfg = ImputationConfig {
            tol: 1e-12,
            init: ImputationInit::CrossSectionalMean,
            ..ImputationConfig::default()
        };
        let imp = impute_pca(&panel, 2, &cfg).unwrap();
        assert!((imp.completed - &x).amax() / x.amax() < 1e-6);
    }

    #[test]
    fn bai_ng_exact_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = gaussian(&mut rng, 40, 2) * gaussian(&mut rng, 2, 30);
        let panel = masked(&x, 0.0, &mut rng);
        let sel = bai_ng_k(&panel, 5, &ImputationConfig::default()).unwrap();
        assert_eq!(sel.k, 2);
        assert_eq!(sel.table.len(), 5);
        for w in sel.table.windows(2) {
            assert!(w[1].v <= w[0].v * (1.0 + 1e-9) + 1e-12 * sel.table[0].v);
        }
    }

    #[test]
    fn bai_ng_white_noise_hits_lower_boundary() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let panel = masked(&gaussian(&mut rng, 60, 50), 0.0, &mut rng);
            let sel = bai_ng_k(&panel, 6, &ImputationConfig::default()).unwrap();
            assert_eq!(sel.k, 1);
        }
    }

    #[test]
    fn diagnostics_file_lists_iterations_and_criteria() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = gaussian(&mut rng, 20, 2) * gaussian(&mut rng, 2, 15) + gaussian(&mut rng, 20, 15) * 0.1;
        let panel = masked(&x, 0.1, &mut rng);
        let sel = bai_ng_k(&panel, 3, &ImputationConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("latent_diag.csv");
        write_diagnostics(&path, &sel.reports[1], Some(&sel)).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("section,k,iteration,objective,v,icp1,icp2,icp3\niteration,,1,"));
        assert_eq!(text.lines().filter(|l| l.starts_with("ic,")).count(), 3);
    }
}
