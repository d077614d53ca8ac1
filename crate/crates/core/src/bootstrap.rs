//! Moving-block bootstrap over weeks with recentered p-values.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::FactorSet;
use crate::panel::{create, ReturnPanel};
use crate::three_pass::{fit_three_pass, ThreePassOptions};

/// Share of failed replications above which a run is flagged.
pub const MAX_FAILED_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub block_len: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            reps: 1000,
            block_len: 8,
            seed: 20230101,
            workers: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self, t: usize) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("bootstrap reps must be at least 1".into()));
        }
        if self.block_len == 0 || self.block_len > t {
            return Err(Error::Config(format!(
                "bootstrap block length {} must be between 1 and T = {t}",
                self.block_len
            )));
        }
        Ok(())
    }
}

/// Row indices of one bootstrap sample: `ceil(T / b)` blocks of `b`
/// consecutive weeks with starts drawn uniformly from `0..=T-b`,
/// concatenated and truncated to length T.
///
/// Each replication has its own ChaCha stream selected by `rep`, so the
/// result depends only on `(seed, rep)` and never on scheduling.
pub fn mbb_indices(t: usize, cfg: &BootstrapConfig, rep: u64) -> Vec<usize> {
    let b = cfg.block_len;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(rep);
    let blocks = t.div_ceil(b);
    let mut idx = Vec::with_capacity(blocks * b);
    for _ in 0..blocks {
        let start = rng.random_range(0..=t - b);
        idx.extend(start..start + b);
    }
    idx.truncate(t);
    idx
}

#[derive(Debug, Clone)]
pub struct BootstrapDistribution {
    pub factor_names: Vec<String>,
    pub point_estimate: Vec<f64>,
    /// Successful replications × L.
    pub draws: DMatrix<f64>,
    /// Replication number of each row of `draws`.
    pub rep_ids: Vec<usize>,
    pub reps: usize,
    pub failed_reps: usize,
}

impl BootstrapDistribution {
    pub fn failed_share(&self) -> f64 {
        self.failed_reps as f64 / self.reps as f64
    }

    /// More than 5% of replications failed.
    pub fn flagged(&self) -> bool {
        self.failed_share() > MAX_FAILED_SHARE
    }

    /// `bootstrap_draws.csv`: `rep,factor,lambda_star`.
    pub fn write_draws_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::csv("bootstrap draws", e);
        wtr.write_record(["rep", "factor", "lambda_star"]).map_err(err)?;
        for (row, rep) in self.rep_ids.iter().enumerate() {
            for (j, name) in self.factor_names.iter().enumerate() {
                wtr.write_record([rep.to_string(), name.clone(), format!("{}", self.draws[(row, j)])])
                    .map_err(err)?;
            }
        }
        wtr.flush().map_err(|e| Error::csv("bootstrap draws", e))
    }

    pub fn write_draws(&self, path: &Path) -> Result<()> {
        self.write_draws_to(create(path)?)
    }

    /// Per-factor standard deviation (n-1) of the draws.
    pub fn std_dev(&self) -> Vec<f64> {
        (0..self.draws.ncols())
            .map(|j| crate::linalg::sample_var(self.draws.column(j).as_slice()).sqrt())
            .collect()
    }
}

/// Fraction of draws with `|lambda* - lambda_hat| >= |lambda_hat|`, per
/// factor.
pub fn recentered_pvalue(dist: &BootstrapDistribution) -> Result<Vec<f64>> {
    let n = dist.draws.nrows();
    if n == 0 {
        return Err(Error::NoSuccessfulDraws);
    }
    Ok(dist
        .point_estimate
        .iter()
        .enumerate()
        .map(|(j, &hat)| {
            let hits = dist
                .draws
                .column(j)
                .iter()
                .filter(|&&d| (d - hat).abs() >= hat.abs())
                .count();
            hits as f64 / n as f64
        })
        .collect())
}

fn resample(panel: &ReturnPanel, g: &FactorSet, rows: &[usize]) -> (ReturnPanel, FactorSet) {
    let (p, _) = panel.select_rows(rows).drop_sparse_assets(2);
    (p, g.select_rows(rows))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start bootstrap workers: {e}")))
}

/// Runs `estimator` on the full sample and on every block-bootstrap
/// resample of weeks (panel and factors resampled together). Replications
/// whose estimator fails are skipped and counted.
pub fn bootstrap_with<F>(
    panel: &ReturnPanel,
    g: &FactorSet,
    cfg: &BootstrapConfig,
    estimator: F,
) -> Result<BootstrapDistribution>
where
    F: Fn(&ReturnPanel, &FactorSet) -> Result<Vec<f64>> + Sync,
{
    if panel.time_index() != g.time_index() {
        return Err(Error::InvalidArgument(
            "return panel and observed factors are not on the same weekly index".into(),
        ));
    }
    let t = panel.n_weeks();
    cfg.validate(t)?;
    let point = estimator(panel, g)?;
    let l = point.len();
    let results: Vec<Option<Vec<f64>>> = pool(cfg.workers)?.install(|| {
        (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let rows = mbb_indices(t, cfg, rep as u64);
                let (p, gs) = resample(panel, g, &rows);
                match estimator(&p, &gs) {
                    Ok(v) if v.len() == l && v.iter().all(|x| x.is_finite()) => Some(v),
                    Ok(_) => {
                        log::debug!("bootstrap replication {rep} produced non-finite premia");
                        None
                    }
                    Err(e) => {
                        log::debug!("bootstrap replication {rep} failed: {e}");
                        None
                    }
                }
            })
            .collect()
    });
    let mut rep_ids = Vec::with_capacity(cfg.reps);
    let mut flat = Vec::with_capacity(cfg.reps * l);
    for (rep, r) in results.into_iter().enumerate() {
        if let Some(v) = r {
            rep_ids.push(rep);
            flat.extend(v);
        }
    }
    let dist = BootstrapDistribution {
        factor_names: g.names().to_vec(),
        point_estimate: point,
        draws: DMatrix::from_row_slice(rep_ids.len(), l, &flat),
        failed_reps: cfg.reps - rep_ids.len(),
        rep_ids,
        reps: cfg.reps,
    };
    if dist.flagged() {
        log::warn!(
            "{} of {} bootstrap replications failed ({:.1}%)",
            dist.failed_reps,
            dist.reps,
            100.0 * dist.failed_share()
        );
    }
    Ok(dist)
}

/// Block bootstrap of the three-pass premia with K held fixed.
pub fn bootstrap_premia(
    panel: &ReturnPanel,
    g: &FactorSet,
    k: usize,
    opts: &ThreePassOptions,
    cfg: &BootstrapConfig,
) -> Result<BootstrapDistribution> {
    bootstrap_with(panel, g, cfg, |p, gs| {
        Ok(fit_three_pass(p, gs, k, opts)?.estimate.lambda_g)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factors::FactorKind;
    use crate::panel::weekly_index;
    use chrono::NaiveDate;
    use rand_distr::StandardNormal;

    fn cfg(reps: usize, block_len: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            reps,
            block_len,
            seed,
            workers: 0,
        }
    }

    #[test]
    fn full_length_block_is_identity() {
        let c = cfg(10, 7, 3);
        for rep in 0..10 {
            assert_eq!(mbb_indices(7, &c, rep), (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn blocks_are_runs_of_consecutive_weeks() {
        let c = cfg(1, 3, 42);
        for rep in 0..20 {
            let idx = mbb_indices(6, &c, rep);
            assert_eq!(idx.len(), 6);
            for block in idx.chunks(3) {
                assert!(block[0] <= 3);
                assert_eq!(block[1], block[0] + 1);
                assert_eq!(block[2], block[0] + 2);
            }
        }
    }

    #[test]
    fn last_block_is_truncated() {
        let idx = mbb_indices(10, &cfg(1, 4, 9), 0);
        assert_eq!(idx.len(), 10);
        assert_eq!(idx[9], idx[8] + 1);
    }

    #[test]
    fn unit_blocks_cover_the_range_like_iid_draws() {
        let c = cfg(1, 1, 5);
        let mut seen = [0usize; 5];
        for rep in 0..400 {
            for i in mbb_indices(5, &c, rep) {
                seen[i] += 1;
            }
        }
        // 2000 draws over 5 values: each near 400
        assert!(seen.iter().all(|&s| (300..500).contains(&s)), "{seen:?}");
    }

    #[test]
    fn indices_depend_only_on_seed_and_rep() {
        let c = cfg(1, 8, 11);
        assert_eq!(mbb_indices(105, &c, 17), mbb_indices(105, &c, 17));
        assert_ne!(mbb_indices(105, &c, 17), mbb_indices(105, &c, 18));
        assert_ne!(mbb_indices(105, &c, 17), mbb_indices(105, &cfg(1, 8, 12), 17));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(cfg(0, 8, 1).validate(10).is_err());
        assert!(cfg(5, 0, 1).validate(10).is_err());
        assert!(cfg(5, 11, 1).validate(10).is_err());
        assert!(cfg(5, 10, 1).validate(10).is_ok());
    }

    fn dist(point: Vec<f64>, draws: &[f64]) -> BootstrapDistribution {
        let l = point.len();
        let n = draws.len() / l;
        BootstrapDistribution {
            factor_names: (0..l).map(|j| format!("f{j}")).collect(),
            point_estimate: point,
            draws: DMatrix::from_row_slice(n, l, draws),
            rep_ids: (0..n).collect(),
            reps: n,
            failed_reps: 0,
        }
    }

    #[test]
    fn recentered_pvalue_examples() {
        assert_eq!(
            recentered_pvalue(&dist(vec![0.4], &[0.2, 0.6, 1.0])).unwrap(),
            vec![1.0 / 3.0]
        );
        assert_eq!(recentered_pvalue(&dist(vec![0.5], &[0.5, 0.5])).unwrap(), vec![0.0]);
        assert_eq!(
            recentered_pvalue(&dist(vec![0.0], &[0.3, -2.0, 0.0])).unwrap(),
            vec![1.0]
        );
        let empty = dist(vec![1.0], &[]);
        assert!(matches!(recentered_pvalue(&empty), Err(Error::NoSuccessfulDraws)));
    }

    fn economy(seed: u64) -> (ReturnPanel, FactorSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, n) = (40, 20);
        let mut normal = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let u = normal(t, 2);
        let beta = normal(n, 2);
        let x = &u * beta.transpose() + normal(t, n) * 0.5;
        let g = &u * DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0]) + normal(t, 2) * 0.3;
        let start = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        let panel = ReturnPanel::balanced(start, x.add_scalar(0.2)).unwrap();
        let fs = FactorSet::new(
            weekly_index(start, t),
            vec!["a".into(), "b".into()],
            g,
            vec![FactorKind::Tradable; 2],
        )
        .unwrap();
        (panel, fs)
    }

    #[test]
    fn full_block_bootstrap_reproduces_point_estimate() {
        let (panel, g) = economy(1);
        let d = bootstrap_premia(&panel, &g, 2, &ThreePassOptions::default(), &cfg(5, 40, 1)).unwrap();
        for row in d.draws.row_iter() {
            for j in 0..2 {
                assert_eq!(row[j], d.point_estimate[j]);
            }
        }
        assert_eq!(recentered_pvalue(&d).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn draws_are_deterministic_across_worker_counts() {
        let (panel, g) = economy(2);
        let mut one = cfg(30, 5, 77);
        one.workers = 1;
        let mut many = one;
        many.workers = 3;
        let a = bootstrap_premia(&panel, &g, 2, &ThreePassOptions::default(), &one).unwrap();
        let b = bootstrap_premia(&panel, &g, 2, &ThreePassOptions::default(), &many).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.rep_ids, b.rep_ids);
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_draws_to(&mut buf_a).unwrap();
        b.write_draws_to(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
        assert!(String::from_utf8(buf_a)
            .unwrap()
            .starts_with("rep,factor,lambda_star\n0,a,"));
    }

    #[test]
    fn pvalues_are_scale_invariant() {
        let (panel, g) = economy(3);
        let c = cfg(40, 5, 5);
        let base = bootstrap_premia(&panel, &g, 2, &ThreePassOptions::default(), &c).unwrap();
        let scaled_g = g
            .with_column(0, &g.column(0).iter().map(|v| v * 2.5).collect::<Vec<_>>())
            .unwrap();
        let scaled = bootstrap_premia(&panel, &scaled_g, 2, &ThreePassOptions::default(), &c).unwrap();
        assert_eq!(recentered_pvalue(&base).unwrap(), recentered_pvalue(&scaled).unwrap());
    }

    #[test]
    fn failures_are_counted_and_flagged() {
        let (panel, g) = economy(4);
        let first = panel.returns()[(0, 0)];
        // only resamples that start with the original first week succeed
        let d = bootstrap_with(&panel, &g, &cfg(50, 4, 1), |p, _| {
            if p.returns()[(0, 0)] == first {
                Ok(vec![1.0, 2.0])
            } else {
                Err(Error::Degenerate("synthetic failure".into()))
            }
        })
        .unwrap();
        assert_eq!(d.draws.nrows() + d.failed_reps, 50);
        assert!(d.failed_reps > 40);
        assert!(d.flagged());
        let expected: Vec<usize> = (0..50)
            .filter(|&r| mbb_indices(40, &cfg(50, 4, 1), r as u64)[0] == 0)
            .collect();
        assert_eq!(d.rep_ids, expected);
    }
}
