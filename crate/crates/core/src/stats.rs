//! Descriptive statistics for factor and return series.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::SeriesFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatsRow {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub skewness: f64,
    /// Excess kurtosis (zero for a normal distribution).
    pub kurtosis_fisher: f64,
}

/// Quantile by linear interpolation between order statistics of an
/// ascending slice (position `(n - 1) * p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(series: &SeriesFrame) -> Result<StatsRow> {
    describe_values(series.values()).map_err(|e| match e {
        Error::Degenerate(_) => Error::Degenerate(format!("series {} is constant", series.name())),
        other => other,
    })
}

/// Sample statistics: `std` uses the n-1 denominator; skewness and excess
/// kurtosis are the biased moment estimators.
pub fn describe_values(values: &[f64]) -> Result<StatsRow> {
    let n = values.len();
    if n < 4 {
        return Err(Error::InsufficientData {
            context: "describe".into(),
            required: 4,
            actual: n,
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("describe input".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let std = (m2 / (nf - 1.0)).sqrt();
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    // Relative threshold so rounding noise on a constant series still counts
    // as constant.
    if m2 <= (f64::EPSILON * mean.abs().max(1e-300)).powi(2) * nf {
        return Err(Error::Degenerate("constant series".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(StatsRow {
        count: n,
        mean,
        std,
        min: sorted[0],
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        skewness: m3 / m2.powf(1.5),
        kurtosis_fisher: m4 / (m2 * m2) - 3.0,
    })
}
