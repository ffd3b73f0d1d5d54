//! Quantities of interest extracted from a meso strain field and an
//! effective compliance matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::StrainField;
use crate::linalg::Mat3;

pub const QOI_DIM: usize = 9;

/// `(δᵉ, ℓ₁ᵉ, ℓ₂ᵉ, log L₁₁, L₁₂, L₁₃, log L₂₂, L₂₃, log L₃₃)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QoiVector(pub [f64; QOI_DIM]);

impl QoiVector {
    pub fn strain_dispersion(&self) -> f64 {
        self.0[0]
    }

    pub fn correlation_lengths(&self) -> (f64, f64) {
        (self.0[1], self.0[2])
    }

    pub fn logvec(&self) -> [f64; 6] {
        let mut v = [0.0; 6];
        v.copy_from_slice(&self.0[3..]);
        v
    }

    pub fn effective_compliance(&self) -> Mat3 {
        logvec_to_matrix(&self.logvec())
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; QOI_DIM] = v
            .try_into()
            .map_err(|_| Error::domain(format!("expected {QOI_DIM} QoI components, got {}", v.len())))?;
        Ok(QoiVector(arr))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

pub fn assemble_qoi(delta_e: f64, ell1: f64, ell2: f64, logvec: [f64; 6]) -> QoiVector {
    let mut q = [0.0; QOI_DIM];
    q[0] = delta_e;
    q[1] = ell1;
    q[2] = ell2;
    q[3..].copy_from_slice(&logvec);
    QoiVector(q)
}

/// Squared Frobenius norm of the symmetric tensor behind a Voigt strain.
fn tensor_norm2(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + 0.5 * v[2] * v[2]
}

fn mean_strain(strain: &StrainField) -> [f64; 3] {
    let n = strain.values.len() as f64;
    let mut m = [0.0; 3];
    for v in &strain.values {
        for r in 0..3 {
            m[r] += v[r];
        }
    }
    m.map(|x| x / n)
}

/// Normalized spatial fluctuation level of the strain tensor field.
pub fn dispersion_coefficient(strain: &StrainField) -> Result<f64> {
    if strain.values.is_empty() {
        return Err(Error::domain("empty strain field"));
    }
    let mean = mean_strain(strain);
    let norm = tensor_norm2(mean).sqrt();
    if !(norm > 0.0) {
        return Err(Error::domain("strain field has zero spatial mean"));
    }
    let var = strain
        .values
        .iter()
        .map(|v| tensor_norm2([v[0] - mean[0], v[1] - mean[1], v[2] - mean[2]]))
        .sum::<f64>()
        / strain.values.len() as f64;
    Ok(var.sqrt() / norm)
}

/// Normalized autocorrelation along one axis, pooled over the three
/// tensor components (weighted by their variances) and the transverse axis.
pub fn axis_autocorrelation(strain: &StrainField, axis: usize) -> Result<Vec<f64>> {
    let (nx, ny) = (strain.nx, strain.ny);
    let mean = mean_strain(strain);
    let scale = [1.0, 1.0, std::f64::consts::FRAC_1_SQRT_2];
    let fluct: Vec<[f64; 3]> = strain
        .values
        .iter()
        .map(|v| [0, 1, 2].map(|r| (v[r] - mean[r]) * scale[r]))
        .collect();
    let (len, lines) = if axis == 0 { (nx, ny) } else { (ny, nx) };
    let at = |line: usize, pos: usize| if axis == 0 { fluct[line * nx + pos] } else { fluct[pos * nx + line] };
    let mut c = vec![0.0; len];
    for (tau, ct) in c.iter_mut().enumerate() {
        let mut sum = 0.0;
        for line in 0..lines {
            for p in 0..len - tau {
                let (a, b) = (at(line, p), at(line, p + tau));
                sum += a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            }
        }
        *ct = sum / (lines * (len - tau)) as f64;
    }
    let peak = strain.values.iter().map(|&v| tensor_norm2(v)).fold(0.0, f64::max);
    if !(c[0] > 1e-24 * peak) {
        return Err(Error::domain("constant strain field has no correlation structure"));
    }
    let c0 = c[0];
    Ok(c.into_iter().map(|v| v / c0).collect())
}

/// Correlation lengths `(ℓ₁, ℓ₂)`: lag spacing times the sum of the
/// normalized autocorrelation up to its first nonpositive value.
pub fn correlation_lengths(strain: &StrainField) -> Result<(f64, f64)> {
    if strain.nx < 8 || strain.ny < 8 {
        return Err(Error::domain(format!(
            "strain field {}x{} is too small for correlation estimates (need 8 per axis)",
            strain.nx, strain.ny
        )));
    }
    let integrate = |r: Vec<f64>, h: f64| h * r.iter().take_while(|&&v| v > 0.0).sum::<f64>();
    let l1 = integrate(axis_autocorrelation(strain, 0)?, strain.dx);
    let l2 = integrate(axis_autocorrelation(strain, 1)?, strain.dy);
    Ok((l1, l2))
}

/// Upper Cholesky factor coordinates with logarithmic diagonal.
pub fn cholesky_logvec(s: &Mat3) -> Result<[f64; 6]> {
    let l = s.cholesky_upper()?;
    Ok([l[(0, 0)].ln(), l[(0, 1)], l[(0, 2)], l[(1, 1)].ln(), l[(1, 2)], l[(2, 2)].ln()])
}

/// Inverse of [`cholesky_logvec`].
pub fn logvec_to_matrix(v: &[f64; 6]) -> Mat3 {
    let l = Mat3([[v[0].exp(), v[1], v[2]], [0.0, v[3].exp(), v[4]], [0.0, 0.0, v[5].exp()]]);
    l.transpose() * l
}
