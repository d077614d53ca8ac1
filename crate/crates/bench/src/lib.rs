//! Shared inputs for the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use riskprem::synthetic::{LatentEconomy, ObservedFactorEconomy, SimulatedEconomy};
use riskprem::{FactorSet, ReturnPanel};

/// A three-factor economy with five observed factors, sized like the
/// weekly crypto sample.
pub fn latent_economy(n_assets: usize, n_weeks: usize, missing_share: f64) -> SimulatedEconomy {
    LatentEconomy {
        n_assets,
        n_weeks,
        gamma: vec![0.5, -0.4, 0.3],
        lambda: DMatrix::from_row_slice(
            5,
            3,
            &[
                1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, -1.0, 0.0, 0.5, 0.5, 1.0,
            ],
        ),
        factor_sd: 1.0,
        beta_sd: 1.0,
        snr: 1.0,
        g_noise_sd: 0.5,
        missing_share,
    }
    .simulate(&mut ChaCha8Rng::seed_from_u64(42))
    .expect("valid economy")
}

/// A balanced panel priced by two observed factors.
pub fn observed_economy(n_assets: usize, n_weeks: usize) -> (ReturnPanel, FactorSet) {
    ObservedFactorEconomy {
        n_assets,
        n_weeks,
        lambda: vec![0.5, 0.5],
        factor_mean: vec![0.5, 0.5],
        factor_sd: vec![1.0, 1.0],
        beta_mean: 1.0,
        beta_sd: 1.0,
        idio_sd: 4.0,
    }
    .simulate(&mut ChaCha8Rng::seed_from_u64(42))
    .expect("valid economy")
}

/// Fully observed copy of a panel's return matrix.
pub fn dense_returns(panel: &ReturnPanel) -> DMatrix<f64> {
    panel.returns().map(|v| if v.is_finite() { v } else { 0.0 })
}
