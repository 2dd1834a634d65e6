//! Cost (CIR) and capacity-factor (Jacobi) diffusions.
//!
//! Both processes are calibrated from the mean and standard deviation of
//! their stationary law with the mean-reversion rate fixed by the user.
//! The solver only needs the generator coefficients and the stationary
//! densities, never sample paths.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Mean-reversion rate used when none is supplied.
pub const DEFAULT_MEAN_REVERSION: f64 = 0.5;

/// Drift and half squared volatility of a one-dimensional diffusion,
/// `dX = mu(X) dt + sqrt(2 sigma2(X)) dW`.
pub trait Diffusion {
    /// Returns `(mu(x), sigma2(x))`.
    fn drift_diffusion(&self, x: f64) -> (f64, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryMoments {
    pub mean: f64,
    pub std: f64,
}

impl StationaryMoments {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !std.is_finite() || std < 0.0 {
            return Err(Error::InvalidMoments(format!(
                "mean {mean} and std {std} must be finite with std >= 0"
            )));
        }
        Ok(Self { mean, std })
    }
}

/// `dC = k (theta - C) dt + delta sqrt(C) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    pub k: f64,
    pub theta: f64,
    pub delta: f64,
}

impl CirParams {
    pub fn new(k: f64, theta: f64, delta: f64) -> Result<Self> {
        if !(k > 0.0 && theta > 0.0 && delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "CIR requires k > 0, theta > 0, delta >= 0 (got k={k}, theta={theta}, delta={delta})"
            )));
        }
        Ok(Self { k, theta, delta })
    }

    /// Gamma shape `2 k theta / delta^2`.
    pub fn gamma_shape(&self) -> f64 {
        2.0 * self.k * self.theta / (self.delta * self.delta)
    }

    /// Gamma rate `2 k / delta^2`.
    pub fn gamma_rate(&self) -> f64 {
        2.0 * self.k / (self.delta * self.delta)
    }

    /// `2 k theta >= delta^2`; reported only, never enforced.
    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.k * self.theta >= self.delta * self.delta
    }

    pub fn stationary_moments(&self) -> StationaryMoments {
        let var = self.theta * self.delta * self.delta / (2.0 * self.k);
        StationaryMoments {
            mean: self.theta,
            std: var.sqrt(),
        }
    }
}

impl Diffusion for CirParams {
    fn drift_diffusion(&self, x: f64) -> (f64, f64) {
        drift_diffusion_cir(self, x)
    }
}

/// `dS = k_bar (theta_bar - S) dt + delta_bar sqrt(S (1 - S)) dW`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JacobiParams {
    pub k_bar: f64,
    pub theta_bar: f64,
    pub delta_bar: f64,
}

impl JacobiParams {
    pub fn new(k_bar: f64, theta_bar: f64, delta_bar: f64) -> Result<Self> {
        if !(k_bar > 0.0 && theta_bar > 0.0 && theta_bar < 1.0 && delta_bar >= 0.0)
            || !delta_bar.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "Jacobi requires k_bar > 0, 0 < theta_bar < 1, delta_bar >= 0 \
                 (got k_bar={k_bar}, theta_bar={theta_bar}, delta_bar={delta_bar})"
            )));
        }
        Ok(Self {
            k_bar,
            theta_bar,
            delta_bar,
        })
    }

    /// Beta parameters `(2 k theta / delta^2, 2 k (1 - theta) / delta^2)`.
    pub fn beta_parameters(&self) -> (f64, f64) {
        let d2 = self.delta_bar * self.delta_bar;
        (
            2.0 * self.k_bar * self.theta_bar / d2,
            2.0 * self.k_bar * (1.0 - self.theta_bar) / d2,
        )
    }

    pub fn stationary_moments(&self) -> StationaryMoments {
        let d2 = self.delta_bar * self.delta_bar;
        let var = self.theta_bar * (1.0 - self.theta_bar) * d2 / (2.0 * self.k_bar + d2);
        StationaryMoments {
            mean: self.theta_bar,
            std: var.sqrt(),
        }
    }
}

impl Diffusion for JacobiParams {
    fn drift_diffusion(&self, x: f64) -> (f64, f64) {
        drift_diffusion_jacobi(self, x)
    }
}

/// Inverts `var = theta delta^2 / (2k)` for `delta`, with `theta = mean`.
pub fn calibrate_cir(moments: StationaryMoments, k: f64) -> Result<CirParams> {
    if !(moments.mean > 0.0) {
        return Err(Error::InvalidMoments(format!(
            "CIR calibration needs a positive mean cost, got {}",
            moments.mean
        )));
    }
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mean reversion must be positive, got {k}"
        )));
    }
    let delta = (2.0 * k * moments.std * moments.std / moments.mean).sqrt();
    CirParams::new(k, moments.mean, delta)
}

/// Inverts the beta variance `theta (1 - theta) d^2 / (2k + d^2)`.
pub fn calibrate_jacobi(moments: StationaryMoments, k_bar: f64) -> Result<JacobiParams> {
    let m = moments.mean;
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidMoments(format!(
            "capacity-factor mean must lie in (0, 1), got {m}"
        )));
    }
    if !(k_bar > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mean reversion must be positive, got {k_bar}"
        )));
    }
    let var = moments.std * moments.std;
    let bound = m * (1.0 - m);
    if var >= bound {
        return Err(Error::InfeasibleMoments {
            variance: var,
            bound,
        });
    }
    let delta_bar = (2.0 * k_bar * var / (bound - var)).sqrt();
    JacobiParams::new(k_bar, m, delta_bar)
}

/// Gamma density with shape `2k theta/delta^2` and rate `2k/delta^2`.
pub fn cir_stationary_density(p: &CirParams, x: f64) -> Result<f64> {
    if p.delta == 0.0 {
        return Err(Error::DegenerateDistribution(
            "CIR with zero volatility has a point-mass stationary law",
        ));
    }
    if x < 0.0 {
        return Ok(0.0);
    }
    let shape = p.gamma_shape();
    let rate = p.gamma_rate();
    if x == 0.0 {
        return Ok(match shape {
            s if s > 1.0 => 0.0,
            s if s == 1.0 => rate,
            _ => f64::INFINITY,
        });
    }
    let ln_pdf = shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x;
    Ok(ln_pdf.exp())
}

/// Beta density with parameters `2k theta/delta^2`, `2k (1-theta)/delta^2`.
pub fn jacobi_stationary_density(p: &JacobiParams, x: f64) -> Result<f64> {
    if p.delta_bar == 0.0 {
        return Err(Error::DegenerateDistribution(
            "Jacobi with zero volatility has a point-mass stationary law",
        ));
    }
    if x <= 0.0 || x >= 1.0 {
        return Ok(0.0);
    }
    let (a, b) = p.beta_parameters();
    let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b);
    Ok(ln_pdf.exp())
}

/// `mu = k (theta - x)`, `sigma2 = delta^2 x / 2` (zero below the origin).
pub fn drift_diffusion_cir(p: &CirParams, x: f64) -> (f64, f64) {
    let drift = p.k * (p.theta - x);
    let half_diffusion = 0.5 * p.delta * p.delta * x.max(0.0);
    (drift, half_diffusion)
}

/// `mu = k (theta - x)`, `sigma2 = delta^2 x (1 - x) / 2` (zero outside [0, 1]).
pub fn drift_diffusion_jacobi(p: &JacobiParams, x: f64) -> (f64, f64) {
    let drift = p.k_bar * (p.theta_bar - x);
    let half_diffusion = if (0.0..=1.0).contains(&x) {
        0.5 * p.delta_bar * p.delta_bar * x * (1.0 - x)
    } else {
        0.0
    };
    (drift, half_diffusion)
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite five-point Gauss-Legendre rule on `panels` equal panels.
/// Never evaluates the endpoints, so integrable endpoint singularities are
/// tolerated.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let panel: f64 = GAUSS_NODES
            .iter()
            .zip(GAUSS_WEIGHTS.iter())
            .map(|(&t, &w)| w * f(mid + half * t))
            .sum();
        total += panel * half;
    }
    total
}

/// Mean and standard deviation of a density on `[a, b]` by quadrature.
pub fn moments_by_quadrature<F: Fn(f64) -> f64>(
    density: F,
    a: f64,
    b: f64,
    panels: usize,
) -> StationaryMoments {
    let mass = integrate(&density, a, b, panels);
    let mean = integrate(|x| x * density(x), a, b, panels) / mass;
    let var = integrate(|x| (x - mean) * (x - mean) * density(x), a, b, panels) / mass;
    StationaryMoments {
        mean,
        std: var.max(0.0).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uk_cost() -> StationaryMoments {
        StationaryMoments::new(33.4, 11.0).unwrap()
    }

    fn uk_capacity_factor() -> StationaryMoments {
        StationaryMoments::new(0.4261, 0.0443).unwrap()
    }

    #[test]
    fn cir_calibration_of_uk_moments() {
        let p = calibrate_cir(uk_cost(), 0.5).unwrap();
        assert_eq!(p.theta, 33.4);
        // sqrt(2 * 0.5 * 121 / 33.4)
        assert!((p.delta - 1.903_35).abs() < 1e-5, "delta = {}", p.delta);
        assert!(p.feller_satisfied());
        let back = p.stationary_moments();
        assert!((back.std - 11.0).abs() < 1e-12);
    }

    #[test]
    fn cir_calibration_degenerate_and_unit() {
        let p = calibrate_cir(StationaryMoments::new(20.0, 0.0).unwrap(), 0.5).unwrap();
        assert_eq!(p.delta, 0.0);
        let p = calibrate_cir(StationaryMoments::new(1.0, 1.0).unwrap(), 0.5).unwrap();
        assert!((p.delta - 1.0).abs() < 1e-15);
        assert!(matches!(
            calibrate_cir(StationaryMoments::new(0.0, 1.0).unwrap(), 0.5),
            Err(Error::InvalidMoments(_))
        ));
        assert!(calibrate_cir(StationaryMoments::new(-3.0, 1.0).unwrap(), 0.5).is_err());
    }

    #[test]
    fn jacobi_calibration_of_uk_moments() {
        let p = calibrate_jacobi(uk_capacity_factor(), 0.5).unwrap();
        assert_eq!(p.theta_bar, 0.4261);
        assert!((p.delta_bar - 0.089_95).abs() < 1e-5, "delta_bar = {}", p.delta_bar);
        let back = p.stationary_moments();
        assert!((back.std - 0.0443).abs() < 1e-12);
    }

    #[test]
    fn jacobi_calibration_edge_cases() {
        let p = calibrate_jacobi(StationaryMoments::new(0.5, 0.0).unwrap(), 0.5).unwrap();
        assert_eq!(p.delta_bar, 0.0);
        assert!(matches!(
            calibrate_jacobi(StationaryMoments::new(0.5, 0.5).unwrap(), 0.5),
            Err(Error::InfeasibleMoments { .. })
        ));
        assert!(calibrate_jacobi(StationaryMoments::new(1.2, 0.1).unwrap(), 0.5).is_err());
    }

    #[test]
    fn densities_refuse_zero_volatility() {
        let cir = CirParams::new(0.5, 30.0, 0.0).unwrap();
        assert!(matches!(
            cir_stationary_density(&cir, 30.0),
            Err(Error::DegenerateDistribution(_))
        ));
        let jac = JacobiParams::new(0.5, 0.4, 0.0).unwrap();
        assert!(jacobi_stationary_density(&jac, 0.4).is_err());
    }

    #[test]
    fn cir_density_quadrature_round_trip() {
        let p = calibrate_cir(uk_cost(), 0.5).unwrap();
        let c_max = p.theta + 10.0 * 11.0;
        let f = |x: f64| cir_stationary_density(&p, x).unwrap();
        let mass = integrate(f, 0.0, c_max, 4000);
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        let mean = integrate(|x| x * f(x), 0.0, c_max, 4000);
        assert!((mean - p.theta).abs() < 1e-6, "mean {mean}");
        let var = integrate(|x| (x - p.theta).powi(2) * f(x), 0.0, c_max, 4000);
        assert!((var - 121.0).abs() < 1e-3, "var {var}");
    }

    #[test]
    fn jacobi_density_quadrature_round_trip() {
        let p = calibrate_jacobi(uk_capacity_factor(), 0.5).unwrap();
        let f = |x: f64| jacobi_stationary_density(&p, x).unwrap();
        let m = moments_by_quadrature(f, 0.0, 1.0, 2000);
        assert!((integrate(f, 0.0, 1.0, 2000) - 1.0).abs() < 1e-6);
        assert!((m.mean - p.theta_bar).abs() < 1e-6);
        assert!((m.std - 0.0443).abs() < 1e-4);
    }

    #[test]
    fn cir_coefficients() {
        let p = CirParams::new(0.5, 33.4, 1.9).unwrap();
        assert_eq!(drift_diffusion_cir(&p, 33.4).0, 0.0);
        assert_eq!(drift_diffusion_cir(&p, 0.0).1, 0.0);
        assert!((drift_diffusion_cir(&p, 20.0).0 - 6.7).abs() < 1e-12);
    }

    #[test]
    fn jacobi_coefficients() {
        let p = JacobiParams::new(0.5, 0.4261, 0.09).unwrap();
        assert_eq!(drift_diffusion_jacobi(&p, 0.0).1, 0.0);
        assert_eq!(drift_diffusion_jacobi(&p, 1.0).1, 0.0);
        assert_eq!(drift_diffusion_jacobi(&p, 0.4261).0, 0.0);
        assert!((drift_diffusion_jacobi(&p, 0.2).0 - 0.113_05).abs() < 1e-12);
    }

    #[test]
    fn densities_are_nonnegative() {
        let cir = calibrate_cir(uk_cost(), 0.5).unwrap();
        let jac = calibrate_jacobi(uk_capacity_factor(), 0.5).unwrap();
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            assert!(cir_stationary_density(&cir, 150.0 * x).unwrap() >= 0.0);
            assert!(jacobi_stationary_density(&jac, x).unwrap() >= 0.0);
            assert!(drift_diffusion_cir(&cir, 150.0 * x).1 >= 0.0);
            assert!(drift_diffusion_jacobi(&jac, x).1 >= 0.0);
        }
    }
}
