//! Merit-order price formation.
//!
//! Conventional producers at cost `c` offer the fraction `F(p - c)` of their
//! capacity at price `p`. Together with a baseline supply linear in price,
//! this gives a continuous nondecreasing supply curve; the clearing price is
//! the smallest price at which supply covers residual demand, capped at the
//! administrative maximum.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::GridSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Bid smoothing width, GBP/MWh.
    pub epsilon: f64,
    /// Price cap, GBP/MWh.
    pub price_cap: f64,
    /// Baseline supply at the price cap, GW.
    pub baseline_max: f64,
    /// Initial conventional capacity, GW.
    pub conventional_capacity: f64,
    /// Renewable capacity already installed, GW.
    pub renewable_installed: f64,
    /// Renewable projects that may still enter, GW.
    pub renewable_potential: f64,
    /// Bisection tolerance relative to the price cap.
    pub price_tol_rel: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            price_cap: 150.0,
            baseline_max: 12.1,
            conventional_capacity: 35.9,
            renewable_installed: 35.6,
            renewable_potential: 47.0,
            price_tol_rel: 1e-6,
        }
    }
}

impl MarketParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(format!("market: {what}")))
            }
        };
        check(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be > 0")?;
        check(
            self.price_cap > 0.0 && self.price_cap.is_finite(),
            "price_cap must be > 0",
        )?;
        for (name, v) in [
            ("baseline_max", self.baseline_max),
            ("conventional_capacity", self.conventional_capacity),
            ("renewable_installed", self.renewable_installed),
            ("renewable_potential", self.renewable_potential),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("{name} must be >= 0"))?;
        }
        check(
            self.price_tol_rel > 0.0 && self.price_tol_rel < 1.0,
            "price_tol_rel must lie in (0, 1)",
        )
    }

    /// Absolute bisection tolerance, GBP/MWh.
    pub fn price_tol(&self) -> f64 {
        self.price_tol_rel * self.price_cap
    }

    /// Slope of the baseline supply, GW per GBP/MWh.
    pub fn baseline_slope(&self) -> f64 {
        self.baseline_max / self.price_cap
    }
}

/// Demand for one block of hours (e.g. peak or off-peak).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandSegment {
    pub label: String,
    /// Fraction of the year's hours covered by the segment.
    pub hours_weight: f64,
    /// Demand per time level, GW.
    pub series: Vec<f64>,
}

/// Fraction of capacity bid at price-minus-cost `x`.
pub fn bid_fraction(x: f64, epsilon: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= epsilon {
        1.0
    } else {
        0.5 * (1.0 - (PI * x / epsilon).cos())
    }
}

/// Operating profit per unit capacity, the antiderivative of
/// [`bid_fraction`] vanishing at zero.
pub fn profit_g(x: f64, epsilon: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= epsilon {
        x - 0.5 * epsilon
    } else {
        0.5 * (x - epsilon / PI * (PI * x / epsilon).sin())
    }
}

pub fn baseline_supply(p: f64, mp: &MarketParams) -> f64 {
    mp.baseline_max * p.clamp(0.0, mp.price_cap) / mp.price_cap
}

/// Conventional supply offered at price `p` by masses on the cost grid.
pub fn conventional_supply(p: f64, omega_row: &[f64], grid: &GridSpec, mp: &MarketParams) -> f64 {
    omega_row
        .iter()
        .enumerate()
        .map(|(j, &m)| m * bid_fraction(p - grid.node(j), mp.epsilon))
        .sum()
}

/// Total supply at price `p`, GW.
pub fn total_supply(p: f64, omega_row: &[f64], grid: &GridSpec, mp: &MarketParams) -> f64 {
    conventional_supply(p, omega_row, grid, mp) + baseline_supply(p, mp)
}

/// Output of entered renewable capacity, `sum_j S_j (eta_bar_j - eta_j)`.
pub fn renewable_output(eta_bar_row: &[f64], eta_row: &[f64], grid: &GridSpec) -> f64 {
    let r: f64 = eta_bar_row
        .iter()
        .zip(eta_row.iter())
        .enumerate()
        .map(|(j, (&bar, &eta))| grid.node(j) * (bar - eta))
        .sum();
    r.max(0.0)
}

/// Output of a capacity distribution over capacity factors.
pub fn installed_output(row: &[f64], grid: &GridSpec) -> f64 {
    row.iter()
        .enumerate()
        .map(|(j, &m)| grid.node(j) * m)
        .sum::<f64>()
        .max(0.0)
}

/// Smallest price at which supply covers the positive part of
/// `residual_demand`, or the price cap if none does.
pub fn clearing_price(
    omega_row: &[f64],
    residual_demand: f64,
    grid: &GridSpec,
    mp: &MarketParams,
) -> f64 {
    let y = residual_demand.max(0.0);
    if y <= 0.0 {
        return 0.0;
    }
    let supply = |p: f64| total_supply(p, omega_row, grid, mp);
    if supply(mp.price_cap) < y {
        return mp.price_cap;
    }
    let (mut lo, mut hi) = (0.0, mp.price_cap);
    if supply(lo) >= y {
        return lo;
    }
    let tol = mp.price_tol();
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if supply(mid) >= y {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Piecewise-linear price approximation built from supply at the `n + 1`
/// equally spaced prices `k P / n`.
pub fn discretized_price_theta(
    omega_row: &[f64],
    residual_demand: f64,
    grid: &GridSpec,
    mp: &MarketParams,
    n: usize,
) -> f64 {
    let y = residual_demand.max(0.0);
    if y <= 0.0 || n == 0 {
        return 0.0;
    }
    let step = mp.price_cap / n as f64;
    let xs: Vec<f64> = (0..=n)
        .map(|k| total_supply(k as f64 * step, omega_row, grid, mp))
        .collect();
    let sum: f64 = xs
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            if b > a {
                ((y - a).max(0.0) / (b - a)).min(1.0)
            } else if y > a {
                1.0
            } else {
                0.0
            }
        })
        .sum();
    step * sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::processes::integrate;
    use proptest::prelude::*;

    fn cost_grid() -> GridSpec {
        GridSpec::new(0.0, 143.4, 20, 5.0, 20).unwrap()
    }

    #[test]
    fn bid_fraction_examples() {
        assert_eq!(bid_fraction(-1.0, 0.5), 0.0);
        assert!((bid_fraction(0.25, 0.5) - 0.5).abs() < 1e-15);
        assert_eq!(bid_fraction(0.5, 0.5), 1.0);
        assert_eq!(bid_fraction(0.75, 0.5), 1.0);
        // the sine-bridge form
        for x in [0.05, 0.13, 0.31, 0.49] {
            let sine_form = 0.5 * (1.0 + (-PI / 2.0 + PI * x / 0.5).sin());
            assert!((bid_fraction(x, 0.5) - sine_form).abs() < 1e-14);
        }
    }

    #[test]
    fn profit_examples() {
        assert_eq!(profit_g(-3.0, 0.5), 0.0);
        assert_eq!(profit_g(0.0, 0.5), 0.0);
        for x in [0.5, 0.7, 3.0, 1e3] {
            assert!((profit_g(x, 0.5) - (x - 0.25)).abs() <= f64::EPSILON * x.max(1.0));
        }
        let g = profit_g(0.25, 0.5);
        assert!(g > 0.0 && g < 0.25);
        let quad = integrate(|z| bid_fraction(z, 0.5), 0.0, 0.25, 8);
        assert!((g - quad).abs() < 1e-10);
    }

    #[test]
    fn profit_is_integral_of_bid_fraction() {
        let eps = 0.5;
        let mut x: f64 = -1.0;
        while x <= 2.0 * eps {
            let quad = if x <= 0.0 {
                0.0
            } else {
                // split at the kink so the quadrature is exact to rounding
                let k = x.min(eps);
                integrate(|z| bid_fraction(z, eps), 0.0, k, 8)
                    + if x > eps { integrate(|z| bid_fraction(z, eps), eps, x, 1) } else { 0.0 }
            };
            assert!((profit_g(x, eps) - quad).abs() < 1e-10, "x = {x}");
            x += 0.0137;
        }
    }

    #[test]
    fn baseline_examples() {
        let mp = MarketParams::default();
        assert_eq!(baseline_supply(0.0, &mp), 0.0);
        assert_eq!(baseline_supply(mp.price_cap, &mp), 12.1);
        assert!((baseline_supply(75.0, &mp) - 6.05).abs() < 1e-12);
    }

    #[test]
    fn renewable_output_examples() {
        let g = GridSpec::new(0.0, 1.0, 10, 1.0, 1).unwrap();
        let mut bar = vec![0.0; 11];
        bar[4] = 35.6;
        assert_eq!(renewable_output(&bar, &bar, &g), 0.0);
        let out = renewable_output(&bar, &[0.0; 11], &g);
        assert!((out - 14.24).abs() < 1e-12);
        assert_eq!(renewable_output(&[0.0; 11], &[0.0; 11], &g), 0.0);
    }

    #[test]
    fn clearing_price_examples() {
        let g = cost_grid();
        let mp = MarketParams::default();
        let omega = vec![0.0; 21];
        assert_eq!(clearing_price(&omega, -5.0, &g, &mp), 0.0);
        assert_eq!(clearing_price(&omega, 0.0, &g, &mp), 0.0);
        assert_eq!(clearing_price(&omega, 20.0, &g, &mp), mp.price_cap);

        // one unit of capacity at cost 10 and baseline slope 0.1
        let g = GridSpec::new(0.0, 20.0, 20, 1.0, 1).unwrap();
        let mp = MarketParams {
            baseline_max: 15.0,
            ..MarketParams::default()
        };
        let mut omega = vec![0.0; 21];
        omega[10] = 1.0;
        let p = clearing_price(&omega, 2.1, &g, &mp);
        assert!((p - 11.0).abs() <= mp.price_tol(), "price {p}");
        // brute-force scan oracle
        let scan = (0..=150_000)
            .map(|k| k as f64 * 1e-3)
            .find(|&q| total_supply(q, &omega, &g, &mp) >= 2.1)
            .unwrap();
        assert!((p - scan).abs() <= 1e-3 + mp.price_tol());
    }

    #[test]
    fn theta_examples() {
        let g = cost_grid();
        let mp = MarketParams::default();
        let omega = vec![1.0; 21];
        assert_eq!(discretized_price_theta(&omega, 0.0, &g, &mp, 10), 0.0);
        // n = 1, baseline only: supply ranges over [0, 12.1] linearly
        let zero = vec![0.0; 21];
        let y = 5.0;
        let theta = discretized_price_theta(&zero, y, &g, &mp, 1);
        assert!((theta - mp.price_cap * y / 12.1).abs() < 1e-12);
    }

    fn row_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..5.0f64], 21)
    }

    proptest! {
        #[test]
        fn profit_is_convex_monotone_and_one_lipschitz(a in -2.0..3.0f64, b in -2.0..3.0f64, eps in 0.01..2.0f64) {
            let (ga, gb) = (profit_g(a, eps), profit_g(b, eps));
            prop_assert!((ga - gb).abs() <= (a - b).abs() + 1e-14);
            if a <= b { prop_assert!(ga <= gb + 1e-15); }
            let mid = profit_g(0.5 * (a + b), eps);
            prop_assert!(mid <= 0.5 * (ga + gb) + 1e-12);
        }

        #[test]
        fn price_monotone_in_demand(row in row_strategy(), d1 in -5.0..80.0f64, d2 in -5.0..80.0f64) {
            let g = cost_grid();
            let mp = MarketParams::default();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(clearing_price(&row, lo, &g, &mp) <= clearing_price(&row, hi, &g, &mp));
        }

        #[test]
        fn cheaper_mass_never_raises_price(row in row_strategy(), from in 1usize..21, d in 0.0..60.0f64, frac in 0.0..1.0f64) {
            let g = cost_grid();
            let mp = MarketParams::default();
            let to = from / 2;
            let mut moved = row.clone();
            let delta = frac * row[from];
            moved[from] -= delta;
            moved[to] += delta;
            let tol = mp.price_tol();
            prop_assert!(clearing_price(&moved, d, &g, &mp) <= clearing_price(&row, d, &g, &mp) + tol);
        }

        #[test]
        fn theta_within_bound(row in row_strategy(), d in -5.0..90.0f64) {
            let g = cost_grid();
            let mp = MarketParams::default();
            let p = clearing_price(&row, d, &g, &mp);
            for n in [10usize, 100, 1000] {
                let theta = discretized_price_theta(&row, d, &g, &mp, n);
                prop_assert!((theta - p).abs() <= mp.price_cap / n as f64 + mp.price_tol());
            }
        }
    }
}
