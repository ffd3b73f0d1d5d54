//! Normal CDF and gamma quantiles on top of `libm` and `statrs`.

use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

/// Standard normal CDF `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Quantile of the unit-scale gamma distribution with shape `alpha` at
/// probability `Φ(z)`.
///
/// The probability is passed through its normal score `z` so that both tails
/// are resolved without cancellation: for `z > 0` the upper tail `Φ(-z)` is
/// matched against the regularized upper incomplete gamma function.
pub fn gamma_quantile_from_normal(alpha: f64, z: f64) -> f64 {
    debug_assert!(alpha > 0.0);
    let upper = z > 0.0;
    let target = normal_cdf(-z.abs());
    if target == 0.0 {
        return if upper { f64::INFINITY } else { 0.0 };
    }
    let ln_g = ln_gamma(alpha);

    // Wilson-Hilferty start.
    let c = 1.0 / (9.0 * alpha);
    let mut x = alpha * (1.0 - c + z * c.sqrt()).powi(3);
    if !(x > 0.0) {
        // Small-x expansion of P(a, x) ~ x^a / Γ(a+1).
        x = ((target.ln() + ln_gamma(alpha + 1.0)) / alpha).exp();
    }

    for _ in 0..60 {
        let tail = if upper { gamma_ur(alpha, x) } else { gamma_lr(alpha, x) };
        let density = ((alpha - 1.0) * x.ln() - x - ln_g).exp();
        if density == 0.0 || !density.is_finite() {
            break;
        }
        // Newton step on P(x) - p (lower) or -(Q(x) - q) (upper).
        let diff = if upper { target - tail } else { tail - target };
        let newton = diff / density;
        // Halley correction with f'/f = (a-1)/x - 1.
        let curvature = (alpha - 1.0) / x - 1.0;
        let denom = 1.0 - 0.5 * newton * curvature;
        let step = if denom.abs() > 0.5 { newton / denom } else { newton };
        let mut next = x - step;
        if next <= 0.0 {
            next = 0.5 * x;
        }
        let done = (next - x).abs() <= 1e-15 * x;
        x = next;
        if done {
            break;
        }
    }
    x
}
