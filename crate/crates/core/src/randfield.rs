//! Non-Gaussian matrix-valued random compliance fields.
//!
//! A realization is built in two stages: six independent homogeneous
//! Gaussian germ channels are simulated by a spectral (cosine-sum)
//! representation, then mapped pointwise onto a positive-definite 3×3
//! compliance matrix whose mean is the isotropic plane-stress compliance.

use std::f64::consts::PI;

use ndarray::{linalg::general_mat_mul, Array2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{congruence, Mat3};
use crate::rng;
use crate::special::gamma_quantile_from_normal;

/// Upper bound `sqrt(7/11)` on the dispersion parameter.
pub const DELTA_SUP: f64 = 0.797_724_035_217_466;

/// Number of germ channels consumed per compliance matrix.
pub const GERM_CHANNELS: usize = 6;

/// Hyperparameters `(δ, ℓ, κ, μ)` of the prior compliance-field model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Dimensionless dispersion.
    pub delta: f64,
    /// Spatial correlation length [m].
    pub ell: f64,
    /// Mean bulk modulus [Pa].
    pub kappa: f64,
    /// Mean shear modulus [Pa].
    pub mu: f64,
}

impl HyperParams {
    pub fn new(delta: f64, ell: f64, kappa: f64, mu: f64) -> Result<Self> {
        let h = HyperParams { delta, ell, kappa, mu };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < DELTA_SUP) {
            return Err(Error::domain(format!(
                "dispersion {} outside (0, {DELTA_SUP})",
                self.delta
            )));
        }
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::domain(format!("correlation length {} must be > 0", self.ell)));
        }
        mean_compliance(self.kappa, self.mu).map(|_| ())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.delta, self.ell, self.kappa, self.mu]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

/// Isotropic plane-stress compliance (Voigt, engineering shear) from 3D
/// bulk and shear moduli.
pub fn mean_compliance(kappa: f64, mu: f64) -> Result<Mat3> {
    if !(kappa > 0.0 && mu > 0.0 && kappa.is_finite() && mu.is_finite()) {
        return Err(Error::domain(format!(
            "moduli must be positive and finite (kappa={kappa}, mu={mu})"
        )));
    }
    let young = 9.0 * kappa * mu / (3.0 * kappa + mu);
    let nu = (3.0 * kappa - 2.0 * mu) / (2.0 * (3.0 * kappa + mu));
    Ok(Mat3([
        [1.0 / young, -nu / young, 0.0],
        [-nu / young, 1.0 / young, 0.0],
        [0.0, 0.0, 1.0 / mu],
    ]))
}

/// Regular lattice of sample points `(x0 + i dx, y0 + j dy)`, row-major in `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64) -> Self {
        GridSpec { nx, ny, dx, dy, x0: 0.0, y0: 0.0 }
    }

    pub fn with_origin(mut self, x0: f64, y0: f64) -> Self {
        self.x0 = x0;
        self.y0 = y0;
        self
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::domain(format!(
                "grid must have at least 2 points per axis, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.dx > 0.0 && self.dy > 0.0) {
            return Err(Error::domain("grid spacing must be positive"));
        }
        Ok(())
    }
}

/// Discretization of the spectral representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    /// Cutoff wavenumber in units of `2π/ℓ`.
    pub cutoff: f64,
    /// Frequency bins along the positive wavenumber half-axis.
    pub bins: usize,
    /// Bins whose spectral density is below this fraction of the peak are dropped.
    pub prune_ratio: f64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        SpectralConfig { cutoff: 4.0, bins: 64, prune_ratio: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    k1: f64,
    k2: f64,
    amp: f64,
    phase: f64,
}

/// One realization of the 6-channel Gaussian germ, stored as its spectral
/// modes so it can be evaluated on any grid.
///
/// Each channel has the separable Gaussian autocorrelation
/// `r(τ) = exp(-π |τ|² / (4 ℓ²))`, whose integral over each positive half
/// axis equals `ℓ`. Wavenumbers are drawn uniformly inside each bin, which
/// keeps the ensemble covariance exact and removes the artificial period
/// `2π/Δk` of a fixed frequency lattice.
#[derive(Debug, Clone)]
pub struct SpectralGerm {
    ell: f64,
    channels: Vec<Vec<Mode>>,
}

/// One-sided-axis spectral density of the unit-variance Gaussian
/// correlation with integral scale `ell`.
fn axis_density(k: f64, ell: f64) -> f64 {
    ell / PI * (-(k * ell).powi(2) / PI).exp()
}

impl SpectralGerm {
    pub fn new(ell: f64, seed: u64, cfg: &SpectralConfig) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(Error::domain(format!("correlation length {ell} must be > 0")));
        }
        if cfg.bins == 0 || !(cfg.cutoff > 0.0) || !(cfg.prune_ratio > 0.0 && cfg.prune_ratio < 1.0) {
            return Err(Error::config(format!("invalid spectral configuration {cfg:?}")));
        }
        let n = cfg.bins;
        let kc = 2.0 * PI * cfg.cutoff / ell;
        let dk = kc / n as f64;
        // exp(-|k|² ℓ² / π) below prune_ratio
        let prune_exponent = -cfg.prune_ratio.ln();
        let channels = (0..GERM_CHANNELS)
            .map(|c| {
                let mut rng = rng::stream(seed, &[0x6765_726d, c as u64]);
                let mut modes = Vec::new();
                for i1 in 0..n {
                    let k1_near = i1 as f64 * dk;
                    for i2 in 0..2 * n {
                        let lo = -kc + i2 as f64 * dk;
                        let hi = lo + dk;
                        let k2_near = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
                        if (k1_near * k1_near + k2_near * k2_near) * ell * ell / PI > prune_exponent {
                            continue;
                        }
                        let k1 = (i1 as f64 + rng.random::<f64>()) * dk;
                        let k2 = lo + rng.random::<f64>() * dk;
                        let phase = 2.0 * PI * rng.random::<f64>();
                        let amp = 2.0 * dk * (axis_density(k1, ell) * axis_density(k2, ell)).sqrt();
                        modes.push(Mode { k1, k2, amp, phase });
                    }
                }
                modes
            })
            .collect();
        Ok(SpectralGerm { ell, channels })
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn mode_count(&self) -> usize {
        self.channels[0].len()
    }

    /// Germ values at an arbitrary point.
    pub fn value_at(&self, x: f64, y: f64) -> [f64; GERM_CHANNELS] {
        let mut out = [0.0; GERM_CHANNELS];
        for (o, modes) in out.iter_mut().zip(&self.channels) {
            *o = modes.iter().map(|m| m.amp * (m.k1 * x + m.k2 * y + m.phase).cos()).sum();
        }
        out
    }

    /// Evaluate all channels on a regular grid.
    pub fn evaluate(&self, grid: &GridSpec) -> GermField {
        let channels = self.channels.iter().map(|modes| evaluate_channel(modes, grid)).collect();
        GermField { grid: *grid, channels }
    }
}

/// `cos`/`sin` of `k (origin + i step) + phase` for `i < n` via a rotation
/// recurrence, re-anchored every 32 points.
fn rotating_sincos(k: f64, origin: f64, step: f64, phase: f64, n: usize, cos_out: &mut [f64], sin_out: &mut [f64]) {
    let (sd, cd) = (k * step).sin_cos();
    let (mut s, mut c) = (0.0, 0.0);
    for i in 0..n {
        if i % 32 == 0 {
            let (s0, c0) = (k * (origin + i as f64 * step) + phase).sin_cos();
            s = s0;
            c = c0;
        } else {
            let cn = c * cd - s * sd;
            s = s * cd + c * sd;
            c = cn;
        }
        cos_out[i] = c;
        sin_out[i] = s;
    }
}

fn evaluate_channel(modes: &[Mode], grid: &GridSpec) -> Vec<f64> {
    let (nx, ny, m) = (grid.nx, grid.ny, modes.len());
    // field = [cy | -sy] (ny × 2m) · [cx ; sx] (2m × nx)
    let mut left = Array2::<f64>::zeros((ny, 2 * m));
    let mut right = Array2::<f64>::zeros((2 * m, nx));
    let mut cbuf = vec![0.0; nx.max(ny)];
    let mut sbuf = vec![0.0; nx.max(ny)];
    for (idx, md) in modes.iter().enumerate() {
        rotating_sincos(md.k1, grid.x0, grid.dx, md.phase, nx, &mut cbuf, &mut sbuf);
        for i in 0..nx {
            right[[idx, i]] = md.amp * cbuf[i];
            right[[m + idx, i]] = md.amp * sbuf[i];
        }
        rotating_sincos(md.k2, grid.y0, grid.dy, 0.0, ny, &mut cbuf, &mut sbuf);
        for j in 0..ny {
            left[[j, idx]] = cbuf[j];
            left[[j, m + idx]] = -sbuf[j];
        }
    }
    let mut field = Array2::<f64>::zeros((ny, nx));
    general_mat_mul(1.0, &left, &right, 0.0, &mut field);
    field.into_raw_vec_and_offset().0
}

/// Six germ channels sampled on a grid. Channel values are indexed `j * nx + i`.
#[derive(Debug, Clone)]
pub struct GermField {
    pub grid: GridSpec,
    pub channels: Vec<Vec<f64>>,
}

impl GermField {
    pub fn at(&self, idx: usize) -> [f64; GERM_CHANNELS] {
        std::array::from_fn(|c| self.channels[c][idx])
    }
}

/// Sample the germ field on `grid`; deterministic in `(ell, grid, seed)`.
pub fn sample_germ_field(ell: f64, grid: &GridSpec, seed: u64) -> Result<GermField> {
    grid.validate()?;
    Ok(SpectralGerm::new(ell, seed, &SpectralConfig::default())?.evaluate(grid))
}

/// The normalized 3×3 random matrix ensemble `G = Lᵀ L` with `E{G} = I` and
/// dispersion parameter `δ`.
///
/// `L` is upper triangular: off-diagonal entries are `σ U`, diagonal entries
/// `σ sqrt(2 Y_j)` with `Y_j ~ Gamma(α_j, 1)`, `σ = δ / 2` and
/// `α_j = 2/δ² + (1 - j)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedEnsemble {
    dispersion: f64,
    sigma: f64,
    alpha: [f64; 3],
}

impl NormalizedEnsemble {
    pub fn new(dispersion: f64) -> Result<Self> {
        if !(dispersion > 0.0 && dispersion < std::f64::consts::SQRT_2) {
            return Err(Error::domain(format!("ensemble dispersion {dispersion} outside (0, sqrt 2)")));
        }
        let d2 = dispersion * dispersion;
        let alpha = std::array::from_fn(|j| 2.0 / d2 - 0.5 * j as f64);
        Ok(NormalizedEnsemble { dispersion, sigma: dispersion / 2.0, alpha })
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    /// Map six standard-normal germ values to a realization. Channels 0..3
    /// feed the off-diagonal entries `(1,2), (1,3), (2,3)`, channels 3..6 the
    /// diagonal.
    pub fn from_germ(&self, u: &[f64; GERM_CHANNELS]) -> Mat3 {
        let diag: [f64; 3] =
            std::array::from_fn(|j| self.sigma * (2.0 * gamma_quantile_from_normal(self.alpha[j], u[3 + j])).sqrt());
        self.assemble(diag, [u[0], u[1], u[2]])
    }

    /// Draw a realization directly (same law as [`Self::from_germ`] applied
    /// to independent standard normals).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mat3 {
        let off: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let diag: [f64; 3] = std::array::from_fn(|j| {
            let y: f64 = Gamma::new(self.alpha[j], 1.0).expect("shape is positive").sample(rng);
            self.sigma * (2.0 * y).sqrt()
        });
        self.assemble(diag, off)
    }

    fn assemble(&self, diag: [f64; 3], off: [f64; 3]) -> Mat3 {
        let s = self.sigma;
        let l = Mat3([
            [diag[0], s * off[0], s * off[1]],
            [0.0, diag[1], s * off[2]],
            [0.0, 0.0, diag[2]],
        ]);
        (l.transpose() * l).symmetrized()
    }
}

/// A compliance realization on a grid [Pa⁻¹], indexed like [`GermField`].
#[derive(Debug, Clone)]
pub struct ComplianceFieldSample {
    pub grid: GridSpec,
    pub values: Vec<Mat3>,
}

/// Map a germ field to a compliance field `Lᵀ G(x) L` where `L` is the upper
/// Cholesky factor of the mean compliance.
pub fn build_compliance_field(h: &HyperParams, germ: &GermField) -> Result<ComplianceFieldSample> {
    h.validate()?;
    if germ.channels.len() != GERM_CHANNELS {
        return Err(Error::domain(format!(
            "germ has {} channels, expected {GERM_CHANNELS}",
            germ.channels.len()
        )));
    }
    let l = mean_compliance(h.kappa, h.mu)?.cholesky_upper()?;
    let ens = NormalizedEnsemble::new(h.delta)?;
    let values = (0..germ.grid.len())
        .map(|idx| congruence(&l, &ens.from_germ(&germ.at(idx))))
        .collect();
    Ok(ComplianceFieldSample { grid: germ.grid, values })
}
