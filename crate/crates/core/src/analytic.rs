//! Closed-form kernels (skew Brownian motion, killed distorted Brownian
//! motion), the drift of the signed radial process and one-dimensional
//! diffusion characteristics.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{psi_radial, ModelParams, DEFAULT_R_MAX};
use crate::quad;

/// Gaussian kernel g_t(r) = exp(-r^2/2t) / sqrt(2 pi t).
#[inline]
pub fn gauss(t: f64, r: f64) -> f64 {
    (-r * r / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// The symmetric measure of skew Brownian motion:
/// 2/(1+kappa) dr on (-inf, 0) and 2/(1-kappa) dr on (0, inf).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkewMeasure {
    pub kappa: f64,
}

impl SkewMeasure {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > -1.0 && kappa < 1.0) {
            return Err(Error::Domain(format!("kappa = {kappa} is outside (-1, 1)")));
        }
        Ok(Self { kappa })
    }

    pub fn negative_density(&self) -> f64 {
        2.0 / (1.0 + self.kappa)
    }

    pub fn positive_density(&self) -> f64 {
        2.0 / (1.0 - self.kappa)
    }

    /// Lebesgue density at r. At r = 0 the positive side is used.
    pub fn density(&self, r: f64) -> f64 {
        if r < 0.0 {
            self.negative_density()
        } else {
            self.positive_density()
        }
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa > -1.0 && kappa < 1.0) {
        return Err(Error::Domain(format!("kappa = {kappa} is outside (-1, 1)")));
    }
    Ok(())
}

/// Transition density of skew Brownian motion with respect to the skew
/// measure. Branches are tried in order; the first match wins.
pub fn skew_density(t: f64, r1: f64, r2: f64, kappa: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be > 0, got {t}")));
    }
    check_kappa(kappa)?;
    Ok(skew_density_unchecked(t, r1, r2, kappa))
}

#[inline]
pub(crate) fn skew_density_unchecked(t: f64, r1: f64, r2: f64, kappa: f64) -> f64 {
    if r1 > 0.0 && r2 > 0.0 {
        0.5 * (1.0 - kappa) * (gauss(t, r2 - r1) + kappa * gauss(t, r2 + r1))
    } else if r1 >= 0.0 && r2 <= 0.0 {
        0.5 * (1.0 - kappa * kappa) * gauss(t, r2 - r1)
    } else if r1 < 0.0 && r2 < 0.0 {
        0.5 * (1.0 + kappa) * (gauss(t, r2 - r1) - kappa * gauss(t, r2 + r1))
    } else {
        0.5 * (1.0 - kappa * kappa) * gauss(t, r2 - r1)
    }
}

/// Derivative of [`skew_density`] in the starting point r1.
pub fn skew_density_grad(t: f64, r1: f64, r2: f64, kappa: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be > 0, got {t}")));
    }
    if r1 == 0.0 {
        return Err(Error::Domain("gradient is undefined at the skew point r1 = 0".into()));
    }
    check_kappa(kappa)?;
    let direct = (r2 - r1) / t * gauss(t, r2 - r1);
    let image = -(r2 + r1) / t * gauss(t, r2 + r1);
    Ok(if r1 > 0.0 && r2 > 0.0 {
        0.5 * (1.0 - kappa) * (direct + kappa * image)
    } else if r1 > 0.0 {
        0.5 * (1.0 - kappa * kappa) * direct
    } else if r2 < 0.0 {
        0.5 * (1.0 + kappa) * (direct - kappa * image)
    } else {
        0.5 * (1.0 - kappa * kappa) * direct
    })
}

/// Drift of the signed radial process: -gamma on [0, inf) and
/// -rho'(-r) / (2 rho(-r)) on (-inf, 0).
pub fn drift_b(r: f64, params: &ModelParams) -> Result<f64> {
    if r >= 0.0 {
        return Ok(-params.gamma);
    }
    let s = -r;
    let rho = params.rho.value(s);
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho({s}) = {rho} is not positive")));
    }
    let d = params
        .rho
        .derivative(s)
        .ok_or_else(|| Error::Config("tabulated rho has no derivative data; the drift is undefined".into()))?;
    Ok(-d / (2.0 * rho))
}

/// Sup over grid centers x in [a, b] (spacing at most `spacing`) of the
/// integral of |f| over [x - 1, x + 1]. A finite grid can only
/// under-estimate the true supremum.
pub fn kato_window_norm<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spacing: f64) -> f64 {
    let per_unit = (1.0 / spacing.min(0.01)).ceil() as usize;
    let h = 1.0 / per_unit as f64;
    let lo = a - 1.0;
    let cells = (((b - a) + 2.0) / h).round() as usize;
    let mut cum = Vec::with_capacity(cells + 1);
    cum.push(0.0);
    let mut acc = 0.0;
    for i in 0..cells {
        let x0 = lo + i as f64 * h;
        acc += quad::tanh_sinh(|y| f(y).abs(), x0, x0 + h, 3);
        cum.push(acc);
    }
    if !acc.is_finite() {
        return acc;
    }
    let centers = ((b - a) / h).round() as usize;
    (0..=centers)
        .map(|i| cum[i + 2 * per_unit] - cum[i])
        .fold(0.0, f64::max)
}

/// Transition density of the killed distorted Brownian motion on R^3 with
/// respect to psi_gamma^2 dx; zero when either point is the origin.
pub fn killed_kernel_q(t: f64, x: &[f64; 3], y: &[f64; 3], gamma: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("time must be > 0, got {t}")));
    }
    let a = crate::model::norm(x);
    let b = crate::model::norm(y);
    if a == 0.0 || b == 0.0 {
        return Ok(0.0);
    }
    let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2);
    Ok((2.0 * PI / (t * t * t)).sqrt()
        * a
        * b
        * (-gamma * gamma * t / 2.0 + gamma * (a + b) - d2 / (2.0 * t)).exp())
}

/// Average of q(t, x, .) over the sphere |y| = b, for |x| = a.
pub fn killed_kernel_q_radial(t: f64, a: f64, b: f64, gamma: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    // 0.5 sqrt(2 pi / t^3) a b exp(...) chi(ab/t), kept in log form
    let z = a * b / t;
    let log = -gamma * gamma * t / 2.0 + gamma * (a + b) - (a * a + b * b) / (2.0 * t) + ln_chi(z);
    0.5 * (2.0 * PI / (t * t * t)).sqrt() * a * b * log.exp()
}

/// chi(a) = int_0^pi exp(a cos th) sin th d th = 2 sinh(a) / a.
pub fn chi(a: f64) -> f64 {
    let x = a.abs();
    if x < 1e-4 {
        let x2 = x * x;
        2.0 * (1.0 + x2 / 6.0 + x2 * x2 / 120.0)
    } else if x < 700.0 {
        2.0 * x.sinh() / x
    } else {
        ln_chi(x).exp()
    }
}

/// ln chi(a), accurate for large |a|.
pub fn ln_chi(a: f64) -> f64 {
    let x = a.abs();
    if x < 20.0 {
        chi(x).ln()
    } else {
        x - x.ln() + (-(-2.0 * x).exp()).ln_1p()
    }
}

/// Scale functions and speed densities of the signed radial process, of
/// the radial part of the R^3 process and of the half-line process.
#[derive(Debug, Clone)]
pub struct ScaleSpeed {
    params: ModelParams,
}

impl ScaleSpeed {
    /// Scale function s^Y of the signed radial process.
    pub fn scale(&self, r: f64) -> f64 {
        if r >= 0.0 {
            radial_scale_increment(self.params.gamma, r)
        } else {
            -self.params.rho.inverse_integral(-r) / self.params.weight_p
        }
    }

    /// Density of the speed measure ell of Y.
    pub fn speed_density(&self, r: f64) -> f64 {
        if r > 0.0 {
            (-2.0 * self.params.gamma * r).exp() / PI
        } else {
            self.params.weight_p * self.params.rho.value(-r)
        }
    }

    /// Speed density of the radial process |X^3| on [0, inf).
    pub fn radial_speed_density(&self, r: f64) -> f64 {
        (-2.0 * self.params.gamma * r).exp() / PI
    }

    /// Scale function of the radial process |X^3|.
    pub fn radial_scale(&self, r: f64) -> f64 {
        let g = self.params.gamma;
        if g == 0.0 {
            PI * r
        } else {
            PI / (2.0 * g) * (2.0 * g * r).exp()
        }
    }

    /// Speed density of the half-line process.
    pub fn half_line_speed_density(&self, r: f64) -> f64 {
        self.params.rho.value(r)
    }

    /// Scale function of the half-line process.
    pub fn half_line_scale(&self, r: f64) -> f64 {
        self.params.rho.inverse_integral(r)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

fn radial_scale_increment(gamma: f64, r: f64) -> f64 {
    if gamma == 0.0 {
        PI * r
    } else {
        PI * (2.0 * gamma * r).exp_m1() / (2.0 * gamma)
    }
}

pub fn scale_speed(params: &ModelParams) -> ScaleSpeed {
    ScaleSpeed {
        params: params.clone(),
    }
}

/// Long-run behaviour of the signed radial process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recurrence {
    Recurrent,
    Transient,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub recurrence: Recurrence,
    pub conservative: bool,
    pub one_over_rho_integrable: bool,
    /// Speed integral at R_max, the divergence witness for conservativeness.
    pub divergence_witness: f64,
    pub integrability: crate::model::Integrability,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let r = match self.recurrence {
            Recurrence::Recurrent => "recurrent",
            Recurrence::Transient => "transient",
        };
        let c = if self.conservative { "conservative" } else { "not conservative" };
        write!(f, "{r}, {c}")
    }
}

/// Recurrent iff 1/rho is not integrable and gamma >= 0. Always conservative.
pub fn classify(params: &ModelParams) -> Classification {
    let integrable = params.rho.one_over_rho_integrable();
    let recurrence = if !integrable && params.gamma >= 0.0 {
        Recurrence::Recurrent
    } else {
        Recurrence::Transient
    };
    Classification {
        recurrence,
        conservative: true,
        one_over_rho_integrable: integrable,
        divergence_witness: crate::model::speed_integral(&params.rho, DEFAULT_R_MAX),
        integrability: params.rho.integrability(),
    }
}

/// m_gamma(B) for the ball of radius `radius`: int_0^R e^{-2 gamma r}/pi dr.
pub fn ball_measure(gamma: f64, radius: f64) -> f64 {
    if gamma == 0.0 {
        radius / PI
    } else {
        -(-2.0 * gamma * radius).exp_m1() / (2.0 * gamma * PI)
    }
}

/// Density of psi_gamma^2 dx in polar form: 4 pi r^2 psi_gamma(r)^2.
pub fn radial_measure_density(gamma: f64, r: f64) -> f64 {
    4.0 * PI * r * r * psi_radial(r, gamma).powi(2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_small_and_large() {
        assert_eq!(chi(0.0), 2.0);
        assert!((chi(1e-5) - 2.0).abs() < 1e-9);
        assert!((ln_chi(800.0) - (800.0 - 800f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn skew_measure_product() {
        let m = SkewMeasure::new(0.3).unwrap();
        assert!((m.negative_density() * m.positive_density() - 4.0 / (1.0 - 0.09)).abs() < 1e-12);
    }
}
