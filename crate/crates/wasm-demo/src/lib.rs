//! wasm-bindgen bindings for a single-page browser demo.
//!
//! Every export is a thin wrapper around a plain Rust function so the same
//! code paths can be exercised natively.

use stochid_core::fem::{MacroProblem, Support};
use stochid_core::forward::{forward_qoi, ForwardConfig};
use stochid_core::randfield::{build_compliance_field, sample_germ_field, GridSpec, HyperParams};
use stochid_core::robustness::sample_gamma;
use stochid_core::stats::kde_auto;
use wasm_bindgen::prelude::*;

/// Side of the square shown by the field viewer [m].
pub const VIEW_SIDE: f64 = 1e-3;

fn hyper(delta: f64, ell_um: f64, kappa_gpa: f64, mu_gpa: f64) -> stochid_core::Result<HyperParams> {
    HyperParams::new(delta, ell_um * 1e-6, kappa_gpa * 1e9, mu_gpa * 1e9)
}

/// Row-major `n × n` map of the compliance component `S[comp][comp]`
/// [GPa⁻¹] over a 1 mm square.
pub fn compliance_map(
    delta: f64,
    ell_um: f64,
    kappa_gpa: f64,
    mu_gpa: f64,
    n: usize,
    comp: usize,
    seed: u64,
) -> stochid_core::Result<Vec<f64>> {
    if n == 0 || comp > 2 {
        return Err(stochid_core::Error::Domain(format!("need n >= 1 and component in 0..3 (got {n}, {comp})")));
    }
    let h = hyper(delta, ell_um, kappa_gpa, mu_gpa)?;
    let d = VIEW_SIDE / n as f64;
    let grid = GridSpec::new(n, n, d, d);
    let germ = sample_germ_field(h.ell, &grid, seed)?;
    let field = build_compliance_field(&h, &germ)?;
    Ok(field.values.iter().map(|s| s[(comp, comp)] * 1e9).collect())
}

/// Reduced forward model sized for interactive use: 40×40 macro mesh,
/// 10×10 window, 16×16 meso mesh.
pub fn demo_forward_config() -> ForwardConfig {
    ForwardConfig {
        macro_problem: MacroProblem { side: 4e-3, elements: 40, window_elements: 10, support: Support::Clamped, ..MacroProblem::default() },
        meso_elements: 16,
        ..ForwardConfig::default()
    }
}

/// The nine-component QoI vector of one realization.
pub fn qoi(delta: f64, ell_um: f64, kappa_gpa: f64, mu_gpa: f64, seed: u64) -> stochid_core::Result<Vec<f64>> {
    let h = hyper(delta, ell_um, kappa_gpa, mu_gpa)?;
    Ok(forward_qoi(&h, seed, &demo_forward_config())?.0.to_vec())
}

/// Kernel density of `n` gamma draws with the given mean and CoV, returned
/// as `[grid..., density...]`.
pub fn gamma_density(mean: f64, cov: f64, n: usize, points: usize, seed: u64) -> stochid_core::Result<Vec<f64>> {
    let x = sample_gamma(mean, cov, n, seed)?;
    let curve = kde_auto(&x, points)?;
    let mut out = curve.grid;
    out.extend(curve.density);
    Ok(out)
}

fn js(r: stochid_core::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = complianceMap)]
pub fn compliance_map_js(
    delta: f64,
    ell_um: f64,
    kappa_gpa: f64,
    mu_gpa: f64,
    n: usize,
    comp: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    js(compliance_map(delta, ell_um, kappa_gpa, mu_gpa, n, comp, seed.into()))
}

#[wasm_bindgen(js_name = qoi)]
pub fn qoi_js(delta: f64, ell_um: f64, kappa_gpa: f64, mu_gpa: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    js(qoi(delta, ell_um, kappa_gpa, mu_gpa, seed.into()))
}

#[wasm_bindgen(js_name = gammaDensity)]
pub fn gamma_density_js(mean: f64, cov: f64, n: usize, points: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    js(gamma_density(mean, cov, n, points, seed.into()))
}
