//! The stochastic forward map `h ↦ q`: one germ realization, the macro
//! compression test for the strain QoIs and SUBC homogenization of the
//! observation window for the effective-compliance QoIs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{homogenize_subc, run_hfcmm, MacroProblem, RectMesh};
use crate::qoi::{assemble_qoi, cholesky_logvec, correlation_lengths, dispersion_coefficient, QoiVector};
use crate::randfield::{build_compliance_field, HyperParams, SpectralConfig, SpectralGerm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForwardConfig {
    #[serde(rename = "macro")]
    pub macro_problem: MacroProblem,
    /// Elements per side of the homogenization mesh of the window.
    pub meso_elements: usize,
    pub spectral: SpectralConfig,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        ForwardConfig { macro_problem: MacroProblem::default(), meso_elements: 32, spectral: SpectralConfig::default() }
    }
}

impl ForwardConfig {
    pub fn validate(&self) -> Result<()> {
        self.macro_problem.window_start()?;
        if self.meso_elements < 2 {
            return Err(Error::config("meso mesh needs at least 2 elements per side"));
        }
        if self.macro_problem.window_elements < 8 {
            return Err(Error::config("window needs at least 8 macro elements per side for correlation lengths"));
        }
        if self.spectral.bins < 2 || !(self.spectral.cutoff > 0.0) {
            return Err(Error::config("invalid spectral discretization"));
        }
        Ok(())
    }
}

/// Realize the compliance field for `(h, seed)` and evaluate all nine QoIs.
pub fn forward_qoi(h: &HyperParams, seed: u64, cfg: &ForwardConfig) -> Result<QoiVector> {
    cfg.validate()?;
    h.validate()?;
    let germ = SpectralGerm::new(h.ell, seed, &cfg.spectral)?;

    let macro_mesh = cfg.macro_problem.mesh()?;
    let field = build_compliance_field(h, &germ.evaluate(&macro_mesh.centroid_grid()))?;
    let strain = run_hfcmm(&field.values, &cfg.macro_problem)?;
    let delta_e = dispersion_coefficient(&strain)?;
    let (ell1, ell2) = correlation_lengths(&strain)?;

    let (lo, hi) = cfg.macro_problem.window_bounds()?;
    let meso_mesh = RectMesh::square(cfg.meso_elements, hi - lo)?;
    let grid = meso_mesh.centroid_grid();
    let grid = grid.with_origin(grid.x0 + lo, grid.y0 + lo);
    let meso = build_compliance_field(h, &germ.evaluate(&grid))?;
    let eff = homogenize_subc(meso_mesh, &meso.values)?;
    let q = assemble_qoi(delta_e, ell1, ell2, cholesky_logvec(&eff.matrix)?);
    if !q.is_finite() {
        return Err(Error::Numerical("non-finite quantity of interest".into()));
    }
    Ok(q)
}
