//! Descriptive statistics, Silverman bandwidths and Gaussian kernel density
//! estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    // shifted by the first sample so constant data gives exactly zero
    let x0 = x[0];
    let m = x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - x0 - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// `min(std, IQR / 1.349)`, falling back to whichever is positive.
pub fn robust_sigma(x: &[f64]) -> f64 {
    let sd = std_dev(x);
    let s = sorted(x);
    let iqr = (quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)) / 1.349;
    match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        _ => iqr.max(0.0),
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::domain("correlation needs two equally long samples of size >= 2"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::domain("zero-variance column"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Multivariate Silverman rule for one of `m + 1` jointly smoothed variables.
pub fn silverman_bandwidth(sigma_hat: f64, n: usize, m: usize) -> f64 {
    let d = (m + 1) as f64;
    sigma_hat * (4.0 / (n as f64 * (2.0 + d))).powf(1.0 / (4.0 + d))
}

/// Univariate Silverman rule `σ̂ (4 / 3n)^{1/5}`.
pub fn silverman_bandwidth_1d(sigma_hat: f64, n: usize) -> f64 {
    sigma_hat * (4.0 / (3.0 * n as f64)).powf(0.2)
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1])).sum()
}

/// Density curve sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Gaussian KDE of `x` with bandwidth `b` evaluated on `grid`.
pub fn kde(x: &[f64], b: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (x.len() as f64 * b * (2.0 * std::f64::consts::PI).sqrt());
    crate::par::map_indexed(grid.len(), |g| {
        let t = grid[g];
        norm * x.iter().map(|&v| (-0.5 * ((t - v) / b).powi(2)).exp()).sum::<f64>()
    })
}

/// Gaussian KDE with the univariate Silverman bandwidth on a grid spanning
/// the sample range padded by four bandwidths. A degenerate sample gets a
/// tiny relative bandwidth so the curve still carries unit mass.
pub fn kde_auto(x: &[f64], points: usize) -> Result<DensityCurve> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("KDE needs a nonempty finite sample"));
    }
    let mut b = silverman_bandwidth_1d(robust_sigma(x), x.len());
    if !(b > 0.0) {
        b = (x[0].abs() * 1e-6).max(1e-300);
    }
    let s = sorted(x);
    let grid = linspace(s[0] - 4.0 * b, s[s.len() - 1] + 4.0 * b, points.max(64));
    let density = kde(x, b, &grid);
    Ok(DensityCurve { grid, density, bandwidth: b })
}

/// Gaussian KDE on a caller-provided grid and bandwidth.
pub fn kde_on_grid(x: &[f64], bandwidth: f64, grid: Vec<f64>) -> DensityCurve {
    let density = kde(x, bandwidth, &grid);
    DensityCurve { grid, density, bandwidth }
}
