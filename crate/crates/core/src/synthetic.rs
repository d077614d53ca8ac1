//! Simulated economies with known premia, used by tests and benchmarks.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::factors::{FactorKind, FactorSet};
use crate::panel::{weekly_index, ReturnPanel};

pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date")
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Returns driven by `K` latent factors,
/// `r_it = beta_i' (gamma + v_t) + e_it`, and observed factors that load
/// on the latent innovations, `g_t = a + Lambda v_t + w_t`. The true
/// observed-factor premia are `Lambda gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentEconomy {
    pub n_assets: usize,
    pub n_weeks: usize,
    /// Latent premia, one per latent factor.
    pub gamma: Vec<f64>,
    /// L x K loadings of the observed factors on the latent innovations.
    pub lambda: DMatrix<f64>,
    pub factor_sd: f64,
    pub beta_sd: f64,
    /// Ratio of common to idiosyncratic return variance.
    pub snr: f64,
    pub g_noise_sd: f64,
    /// Probability that a return cell is unobserved.
    pub missing_share: f64,
}

/// One draw from a simulated economy.
#[derive(Debug, Clone)]
pub struct SimulatedEconomy {
    pub panel: ReturnPanel,
    pub factors: FactorSet,
    pub betas: DMatrix<f64>,
    pub innovations: DMatrix<f64>,
}

impl LatentEconomy {
    pub fn k(&self) -> usize {
        self.gamma.len()
    }

    pub fn true_premia(&self) -> Vec<f64> {
        let gamma = nalgebra::DVector::from_column_slice(&self.gamma);
        (&self.lambda * gamma).iter().copied().collect()
    }

    pub fn idio_sd(&self) -> f64 {
        let common = self.k() as f64 * (self.beta_sd * self.factor_sd).powi(2);
        (common / self.snr).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.lambda.ncols() != self.k() || self.k() == 0 {
            return Err(Error::InvalidArgument(format!(
                "factor loadings have {} columns for {} latent factors",
                self.lambda.ncols(),
                self.k()
            )));
        }
        if !(0.0..1.0).contains(&self.missing_share) || self.snr <= 0.0 {
            return Err(Error::InvalidArgument(
                "missing share must be in [0, 1) and snr positive".into(),
            ));
        }
        Ok(())
    }

    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimulatedEconomy> {
        self.validate()?;
        let (t, n, k, l) = (self.n_weeks, self.n_assets, self.k(), self.lambda.nrows());
        let idio = self.idio_sd();
        let betas = DMatrix::from_fn(n, k, |_, _| self.beta_sd * normal(rng));
        let v = DMatrix::from_fn(t, k, |_, _| self.factor_sd * normal(rng));
        let gamma = nalgebra::RowDVector::from_row_slice(&self.gamma);
        let mut premia = v.clone();
        for mut row in premia.row_iter_mut() {
            row += &gamma;
        }
        let noise = DMatrix::from_fn(t, n, |_, _| idio * normal(rng));
        let returns = &premia * betas.transpose() + noise;
        let observed = DMatrix::from_fn(t, n, |_, _| rng.random::<f64>() >= self.missing_share);
        let panel = ReturnPanel::new(
            weekly_index(default_start(), t),
            (0..n).map(|i| format!("A{i:04}")).collect(),
            returns,
            observed,
            DMatrix::from_element(t, n, f64::NAN),
        )?;
        let intercepts: Vec<f64> = (0..l).map(|_| normal(rng)).collect();
        let g = DMatrix::from_fn(t, l, |s, j| {
            intercepts[j] + (self.lambda.row(j) * v.row(s).transpose())[(0, 0)] + self.g_noise_sd * normal(rng)
        });
        let factors = FactorSet::new(
            panel.time_index().to_vec(),
            (0..l).map(|j| format!("g{}", j + 1)).collect(),
            g,
            vec![FactorKind::Nontradable; l],
        )?;
        Ok(SimulatedEconomy {
            panel,
            factors,
            betas,
            innovations: v,
        })
    }
}

/// Balanced economy priced by observed factors,
/// `r_it = beta_i' lambda + beta_i' (f_t - mu) + e_it` with
/// `f_t ~ N(mu, diag(factor_sd^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedFactorEconomy {
    pub n_assets: usize,
    pub n_weeks: usize,
    pub lambda: Vec<f64>,
    pub factor_mean: Vec<f64>,
    pub factor_sd: Vec<f64>,
    pub beta_mean: f64,
    pub beta_sd: f64,
    pub idio_sd: f64,
}

impl ObservedFactorEconomy {
    pub fn simulate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(ReturnPanel, FactorSet)> {
        let l = self.lambda.len();
        if self.factor_mean.len() != l || self.factor_sd.len() != l {
            return Err(Error::InvalidArgument(
                "factor moments do not match the number of premia".into(),
            ));
        }
        let (t, n) = (self.n_weeks, self.n_assets);
        let betas = DMatrix::from_fn(n, l, |_, _| self.beta_mean + self.beta_sd * normal(rng));
        let shocks = DMatrix::from_fn(t, l, |_, j| self.factor_sd[j] * normal(rng));
        let f = DMatrix::from_fn(t, l, |s, j| self.factor_mean[j] + shocks[(s, j)]);
        let lambda = nalgebra::DVector::from_column_slice(&self.lambda);
        let expected = &betas * lambda;
        let mut returns = &shocks * betas.transpose();
        for (i, mut col) in returns.column_iter_mut().enumerate() {
            for x in col.iter_mut() {
                *x += expected[i] + self.idio_sd * normal(rng);
            }
        }
        let panel = ReturnPanel::balanced(default_start(), returns)?;
        let factors = FactorSet::new(
            panel.time_index().to_vec(),
            (0..l).map(|j| format!("f{}", j + 1)).collect(),
            f,
            vec![FactorKind::Tradable; l],
        )?;
        Ok((panel, factors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn economy() -> LatentEconomy {
        LatentEconomy {
            n_assets: 40,
            n_weeks: 60,
            gamma: vec![0.5, -0.4],
            lambda: DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            factor_sd: 1.0,
            beta_sd: 1.0,
            snr: 1.0,
            g_noise_sd: 0.5,
            missing_share: 0.1,
        }
    }

    #[test]
    fn true_premia_are_loadings_times_gamma() {
        let e = economy();
        let p = e.true_premia();
        assert!((p[0] - 0.5).abs() < 1e-15);
        assert!((p[1] + 0.4).abs() < 1e-15);
        assert!((p[2] - 0.1).abs() < 1e-15);
        assert!((e.idio_sd() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn simulation_is_seeded_and_shaped() {
        let e = economy();
        let a = e.simulate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = e.simulate(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a.panel, b.panel);
        assert_eq!(a.panel.n_assets(), 40);
        assert_eq!(a.factors.values().shape(), (60, 3));
        let miss = a.panel.missing_fraction();
        assert!(miss > 0.05 && miss < 0.15, "{miss}");
    }

    #[test]
    fn observed_factor_economy_expected_returns() {
        let e = ObservedFactorEconomy {
            n_assets: 5,
            n_weeks: 20_000,
            lambda: vec![0.3],
            factor_mean: vec![0.3],
            factor_sd: vec![1.0],
            beta_mean: 1.0,
            beta_sd: 0.0,
            idio_sd: 0.0,
        };
        let (panel, f) = e.simulate(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // beta = 1 and no noise: every return equals the factor realization
        for t in 0..100 {
            assert!((panel.returns()[(t, 2)] - f.values()[(t, 0)]).abs() < 1e-12);
        }
    }
}
