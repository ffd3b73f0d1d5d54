//! Input uncertainty on the observed QoI vector and its propagation through
//! a trained surrogate.
//!
//! The strain QoIs are independent gamma variables; the effective compliance
//! is an SE₀⁺ random matrix around the observed one.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::ann::MlpModel;
use crate::error::{Error, Result};
use crate::linalg::{congruence, Mat3};
use crate::qoi::{cholesky_logvec, logvec_to_matrix, QoiVector, QOI_DIM};
use crate::randfield::NormalizedEnsemble;
use crate::rng::stream;
use crate::stats::{kde_auto, quantile_sorted, sorted, std_dev, DensityCurve};

const TAG_GAMMA: u64 = 0x6761_6d6d;
const TAG_MATRIX: u64 = 0x6d61_7478;

/// Observed QoI mean and dispersions `(s₀, s₁, s₂, s_eff)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputUncertaintyModel {
    pub q_obs: QoiVector,
    pub s: [f64; 4],
}

impl InputUncertaintyModel {
    pub fn uniform(q_obs: QoiVector, s: f64) -> Self {
        InputUncertaintyModel { q_obs, s: [s; 4] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain(format!("dispersions must be finite and nonnegative: {:?}", self.s)));
        }
        if !self.q_obs.is_finite() {
            return Err(Error::domain("observed QoI vector has non-finite components"));
        }
        if self.q_obs.0[..3].iter().any(|v| *v <= 0.0) {
            return Err(Error::domain("observed strain dispersion and lengths must be positive"));
        }
        let m = self.q_obs.effective_compliance();
        if !m.is_finite() || !m.is_spd() {
            return Err(Error::domain("observed effective compliance does not reconstruct to an SPD matrix"));
        }
        Ok(())
    }
}

fn gamma_law(mean: f64, cov: f64) -> Result<Option<Gamma<f64>>> {
    if !(mean > 0.0 && mean.is_finite()) || !(cov >= 0.0 && cov.is_finite()) {
        return Err(Error::domain(format!("gamma law needs mean > 0 and CoV >= 0 (got {mean}, {cov})")));
    }
    if cov == 0.0 {
        return Ok(None);
    }
    let law = Gamma::new(1.0 / (cov * cov), mean * cov * cov).map_err(|e| Error::domain(e.to_string()))?;
    Ok(Some(law))
}

/// `n` gamma draws with the given mean and coefficient of variation; a zero
/// CoV gives the point mass at `mean`.
pub fn sample_gamma(mean: f64, cov: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let Some(law) = gamma_law(mean, cov)? else { return Ok(vec![mean; n]) };
    let mut rng = stream(seed, &[TAG_GAMMA]);
    Ok((0..n).map(|_| law.sample(&mut rng)).collect())
}

/// `n` SE₀⁺ samples `Lᵀ G L` around `mean` (`L` its upper Cholesky factor).
pub fn sample_effective_compliance(mean: &Mat3, s_eff: f64, n: usize, seed: u64) -> Result<Vec<Mat3>> {
    let l = mean.cholesky_upper()?;
    if s_eff == 0.0 {
        return Ok(vec![*mean; n]);
    }
    let ens = NormalizedEnsemble::new(s_eff)?;
    let mut rng = stream(seed, &[TAG_MATRIX]);
    Ok((0..n).map(|_| congruence(&l, &ens.sample(&mut rng))).collect())
}

/// `n` realizations of the observed QoI vector.
pub fn sample_observed_qoi(model: &InputUncertaintyModel, n: usize, seed: u64) -> Result<Vec<QoiVector>> {
    model.validate()?;
    let q = &model.q_obs.0;
    let strain: Vec<Vec<f64>> = (0..3)
        .map(|c| sample_gamma(q[c], model.s[c], n, crate::rng::derive_seed(seed, &[c as u64])))
        .collect::<Result<_>>()?;
    let mean = logvec_to_matrix(&model.q_obs.logvec());
    let mats = sample_effective_compliance(&mean, model.s[3], n, crate::rng::derive_seed(seed, &[3]))?;
    (0..n)
        .map(|i| {
            let mut v = [0.0; QOI_DIM];
            for c in 0..3 {
                v[c] = strain[c][i];
            }
            if model.s[3] == 0.0 {
                v[3..].copy_from_slice(&q[3..]);
            } else {
                v[3..].copy_from_slice(&cholesky_logvec(&mats[i])?);
            }
            Ok(QoiVector(v))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub outputs: Vec<Vec<f64>>,
    /// Samples dropped because they or their outputs were not finite.
    pub skipped: usize,
}

/// Evaluate the surrogate on every sample.
pub fn propagate(model: &MlpModel, samples: &[QoiVector]) -> Result<Propagated> {
    let finite: Vec<&[f64]> = samples.iter().filter(|q| q.is_finite()).map(|q| &q.0[..]).collect();
    let mut skipped = samples.len() - finite.len();
    let mut outputs = Vec::with_capacity(finite.len());
    for chunk in finite.chunks(4096) {
        for y in model.forward_batch(chunk)? {
            if y.iter().all(|v| v.is_finite()) {
                outputs.push(y);
            } else {
                skipped += 1;
            }
        }
    }
    Ok(Propagated { outputs, skipped })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub mean: f64,
    pub std: f64,
    /// Empirical 2.5% and 97.5% quantiles.
    pub ci95: [f64; 2],
    pub pdf: DensityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSummary {
    pub n_samples: usize,
    pub components: Vec<ComponentSummary>,
}

/// Mean, 95% interval and KDE of every output component.
pub fn summarize(outputs: &[Vec<f64>], kde_points: usize) -> Result<OutputSummary> {
    let first = outputs.first().ok_or_else(|| Error::domain("no samples to summarize"))?;
    let components = (0..first.len())
        .map(|j| {
            let x: Vec<f64> = outputs.iter().map(|r| r[j]).collect();
            // Accumulate offsets from the first sample so a point mass reproduces its value exactly.
            let x0 = x[0];
            let mean = x0 + x.iter().map(|v| v - x0).sum::<f64>() / x.len() as f64;
            let s = sorted(&x);
            Ok(ComponentSummary {
                mean,
                std: std_dev(&x),
                ci95: [quantile_sorted(&s, 0.025), quantile_sorted(&s, 0.975)],
                pdf: kde_auto(&x, kde_points)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OutputSummary { n_samples: outputs.len(), components })
}

/// One input-uncertainty level of a robustness study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessEntry {
    pub s: f64,
    pub skipped: usize,
    pub summary: OutputSummary,
    /// Coefficient of variation of each sampled QoI component.
    pub input_cov: [f64; QOI_DIM],
}

/// Propagate `n` samples for every level `s` (applied to all four
/// dispersions). All levels share the same seed.
pub fn robustness_study(
    model: &MlpModel,
    q_obs: &QoiVector,
    levels: &[f64],
    n: usize,
    seed: u64,
    kde_points: usize,
) -> Result<Vec<RobustnessEntry>> {
    levels
        .iter()
        .map(|&s| {
            let unc = InputUncertaintyModel::uniform(*q_obs, s);
            let samples = sample_observed_qoi(&unc, n, seed)?;
            let input_cov = std::array::from_fn(|c| {
                let col: Vec<f64> = samples.iter().map(|q| q.0[c]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                if m == 0.0 { 0.0 } else { std_dev(&col) / m.abs() }
            });
            let prop = propagate(model, &samples)?;
            if prop.outputs.is_empty() {
                return Err(Error::Numerical(format!("every sample at s = {s} was skipped")));
            }
            Ok(RobustnessEntry { s, skipped: prop.skipped, summary: summarize(&prop.outputs, kde_points)?, input_cov })
        })
        .collect()
}
