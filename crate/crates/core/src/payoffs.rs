//! Running gains and discounted objectives for both populations.
//!
//! Monetary quantities are GBP, capacities GW, prices GBP/MWh. Economics
//! structs hold costs per GW (per year where applicable); scenario files
//! quote them per kW and are converted with [`PER_KW_TO_PER_GW`].

use crate::error::{Error, Result};
use crate::grids::{GridSpec, MeasureFlow};
use crate::market::{profit_g, DemandSegment};

pub const HOURS_PER_YEAR: f64 = 8760.0;
/// MWh produced by one GW running for a full year.
pub const MWH_PER_GW_YEAR: f64 = HOURS_PER_YEAR * 1000.0;
pub const PER_KW_TO_PER_GW: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConventionalEconomics {
    /// Discount rate, 1/year.
    pub rho: f64,
    /// Fixed operating cost, GBP per GW per year.
    pub kappa_c: f64,
    /// Salvage value of a plant, GBP per GW.
    pub k_c: f64,
    /// Depreciation rate of the salvage value, 1/year.
    pub gamma_c: f64,
    /// Capacity payment received while active, GBP per GW per year.
    pub capacity_payment: f64,
}

impl ConventionalEconomics {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Validation("conventional rho must be > 0".into()));
        }
        for (name, v) in [
            ("kappa_c", self.kappa_c),
            ("k_c", self.k_c),
            ("gamma_c", self.gamma_c),
            ("capacity_payment", self.capacity_payment),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("conventional {name} must be >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewableEconomics {
    /// Discount rate, 1/year.
    pub rho: f64,
    /// Fixed owning cost, GBP per GW per year.
    pub kappa_r: f64,
    /// Build cost, GBP per GW.
    pub k_r: f64,
    /// Depreciation rate, 1/year.
    pub gamma_r: f64,
}

impl RenewableEconomics {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Validation("renewable rho must be > 0".into()));
        }
        for (name, v) in [
            ("kappa_r", self.kappa_r),
            ("k_r", self.k_r),
            ("gamma_r", self.gamma_r),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("renewable {name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Running gain of an active conventional plant apart from market revenue.
pub fn f_c(t: f64, e: &ConventionalEconomics) -> f64 {
    -(e.kappa_c - e.capacity_payment) - (-e.gamma_c * t).exp() * e.k_c * (e.rho + e.gamma_c)
}

/// Running cost avoided by a renewable project that has not yet entered.
pub fn f_r(t: f64, horizon: f64, e: &RenewableEconomics) -> f64 {
    e.kappa_r + e.rho * e.k_r + e.gamma_r * e.k_r * (-(e.rho + e.gamma_r) * (horizon - t)).exp()
}

fn check_prices(prices: &[Vec<f64>], segments: &[DemandSegment], grid: &GridSpec) -> Result<()> {
    if prices.len() != segments.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} price series for {} demand segments",
            prices.len(),
            segments.len()
        )));
    }
    if let Some(bad) = prices.iter().find(|p| p.len() != grid.n_times()) {
        return Err(Error::ShapeMismatch(format!(
            "price series of length {} for {} time levels",
            bad.len(),
            grid.n_times()
        )));
    }
    Ok(())
}

fn discount_weight(rho: f64, grid: &GridSpec, i: usize) -> f64 {
    grid.dt() * (-rho * grid.time(i)).exp()
}

/// Objective coefficient of every conventional node:
/// `dt e^{-rho T_i} [sum_s h_s G(P_s,i - C_j) + f_C(T_i)]`.
pub fn conventional_rewards(
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    e: &ConventionalEconomics,
    epsilon: f64,
) -> Result<MeasureFlow> {
    check_prices(prices, segments, grid)?;
    let mut r = MeasureFlow::for_grid(grid);
    for i in 0..grid.n_times() {
        let w = discount_weight(e.rho, grid, i);
        let fc = f_c(grid.time(i), e);
        for (j, v) in r.row_mut(i).iter_mut().enumerate() {
            let c = grid.node(j);
            let revenue: f64 = segments
                .iter()
                .zip(prices)
                .map(|(s, p)| s.hours_weight * MWH_PER_GW_YEAR * profit_g(p[i] - c, epsilon))
                .sum();
            *v = w * (revenue + fc);
        }
    }
    Ok(r)
}

/// Objective coefficient of every not-yet-entered renewable node:
/// `dt e^{-rho T_i} [-sum_s h_s P_s,i S_j + f_R(T_i)]`.
pub fn renewable_rewards(
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    e: &RenewableEconomics,
) -> Result<MeasureFlow> {
    check_prices(prices, segments, grid)?;
    let mut r = MeasureFlow::for_grid(grid);
    for i in 0..grid.n_times() {
        let w = discount_weight(e.rho, grid, i);
        let fr = f_r(grid.time(i), grid.t_horizon, e);
        let unit_revenue: f64 = segments
            .iter()
            .zip(prices)
            .map(|(s, p)| s.hours_weight * MWH_PER_GW_YEAR * p[i])
            .sum();
        for (j, v) in r.row_mut(i).iter_mut().enumerate() {
            *v = w * (fr - unit_revenue * grid.node(j));
        }
    }
    Ok(r)
}

pub fn conventional_objective(
    flow: &MeasureFlow,
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    e: &ConventionalEconomics,
    epsilon: f64,
) -> Result<f64> {
    let r = conventional_rewards(prices, segments, grid, e, epsilon)?;
    objective_from_rewards(flow, &r)
}

pub fn renewable_objective(
    flow: &MeasureFlow,
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    e: &RenewableEconomics,
) -> Result<f64> {
    let r = renewable_rewards(prices, segments, grid, e)?;
    objective_from_rewards(flow, &r)
}

pub fn objective_from_rewards(flow: &MeasureFlow, rewards: &MeasureFlow) -> Result<f64> {
    if flow.shape() != rewards.shape() {
        return Err(Error::ShapeMismatch(format!(
            "flow {:?} against rewards {:?}",
            flow.shape(),
            rewards.shape()
        )));
    }
    Ok(flow.dot(rewards))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conv(kappa_c: f64, k_c: f64, gamma_c: f64) -> ConventionalEconomics {
        ConventionalEconomics {
            rho: 0.086,
            kappa_c,
            k_c,
            gamma_c,
            capacity_payment: 0.0,
        }
    }

    fn one_segment(n: usize) -> Vec<DemandSegment> {
        vec![DemandSegment {
            label: "all".into(),
            hours_weight: 1.0,
            series: vec![0.0; n],
        }]
    }

    #[test]
    fn f_c_examples() {
        let e = conv(30.0, 0.0, 0.1);
        for t in [0.0, 1.0, 7.5] {
            assert_eq!(f_c(t, &e), -30.0);
        }
        let e = conv(30.0, 100.0, 0.0);
        assert!((f_c(3.3, &e) - (-30.0 - 8.6)).abs() < 1e-12);
        let e = conv(30.0, 100.0, 0.1);
        let v = f_c(1.0, &e);
        assert!((v - (-30.0 - (-0.1f64).exp() * 18.6)).abs() < 1e-12);
        assert!((v + 46.83).abs() < 0.005);
        let paid = ConventionalEconomics {
            capacity_payment: 10.0,
            ..e
        };
        assert!((f_c(1.0, &paid) - (v + 10.0)).abs() < 1e-12);
    }

    #[test]
    fn f_r_examples() {
        let k_r = 1377.0;
        let e = RenewableEconomics {
            rho: 0.086,
            kappa_r: 0.0125 * k_r,
            k_r,
            gamma_r: std::f64::consts::LN_2 / 10.0,
        };
        assert!((f_r(15.0, 15.0, &e) - (e.kappa_r + e.rho * k_r + e.gamma_r * k_r)).abs() < 1e-12);
        let direct = 17.2125 + 0.086 * 1377.0
            + (std::f64::consts::LN_2 / 10.0) * 1377.0
                * (-(0.086 + std::f64::consts::LN_2 / 10.0) * 15.0).exp();
        assert!((f_r(0.0, 15.0, &e) - direct).abs() < 1e-10);
        let flat = RenewableEconomics { gamma_r: 0.0, ..e };
        assert_eq!(f_r(0.0, 15.0, &flat), f_r(9.0, 15.0, &flat));
        // nondecreasing in t
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=30 {
            let v = f_r(k as f64 * 0.5, 15.0, &e);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn single_mass_conventional_objective() {
        let grid = GridSpec::new(0.0, 40.0, 4, 2.0, 4).unwrap();
        let e = conv(3e7, 5e8, 0.1);
        let p = 35.0;
        let prices = vec![vec![p; 5]];
        let segs = one_segment(5);
        let mut flow = MeasureFlow::for_grid(&grid);
        let m = 2.5;
        for i in 0..5 {
            flow.set(i, 2, m);
        }
        let got = conventional_objective(&flow, &prices, &segs, &grid, &e, 0.5).unwrap();
        let expected: f64 = (0..5)
            .map(|i| {
                let t = i as f64 * 0.5;
                m * (-0.086 * t).exp()
                    * (MWH_PER_GW_YEAR * profit_g(p - 20.0, 0.5) + f_c(t, &e))
                    * 0.5
            })
            .sum();
        assert!((got - expected).abs() <= 1e-9 * expected.abs());
        let zero = MeasureFlow::for_grid(&grid);
        assert_eq!(conventional_objective(&zero, &prices, &segs, &grid, &e, 0.5).unwrap(), 0.0);
        let doubled = conventional_objective(&flow.scaled(2.0), &prices, &segs, &grid, &e, 0.5)
            .unwrap();
        assert!((doubled - 2.0 * got).abs() <= 1e-12 * got.abs());
    }

    #[test]
    fn renewable_objective_at_zero_price() {
        let grid = GridSpec::new(0.0, 1.0, 4, 2.0, 4).unwrap();
        let e = RenewableEconomics {
            rho: 0.086,
            kappa_r: 1.7e7,
            k_r: 1.377e9,
            gamma_r: 0.069,
        };
        let prices = vec![vec![0.0; 5]];
        let segs = one_segment(5);
        let mut flow = MeasureFlow::for_grid(&grid);
        for i in 0..5 {
            for j in 0..5 {
                flow.set(i, j, (i + j) as f64 * 0.1);
            }
        }
        let got = renewable_objective(&flow, &prices, &segs, &grid, &e).unwrap();
        let expected: f64 = (0..5)
            .map(|i| {
                let t = i as f64 * 0.5;
                flow.total_mass(i) * f_r(t, 2.0, &e) * (-0.086 * t).exp() * 0.5
            })
            .sum();
        assert!((got - expected).abs() <= 1e-12 * expected.abs());
    }

    #[test]
    fn shape_errors() {
        let grid = GridSpec::new(0.0, 1.0, 4, 2.0, 4).unwrap();
        let e = conv(1.0, 1.0, 0.0);
        let r = conventional_rewards(&[vec![0.0; 4]], &one_segment(5), &grid, &e, 0.5);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
        let r = conventional_rewards(&[], &one_segment(5), &grid, &e, 0.5);
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn objectives_are_additive(a in prop::collection::vec(0.0..3.0f64, 15), b in prop::collection::vec(0.0..3.0f64, 15), p in 0.0..150.0f64) {
            let grid = GridSpec::new(0.0, 60.0, 4, 1.0, 2).unwrap();
            let fa = MeasureFlow::from_vec(3, 5, a).unwrap();
            let fb = MeasureFlow::from_vec(3, 5, b).unwrap();
            let sum = MeasureFlow::from_vec(3, 5, fa.as_slice().iter().zip(fb.as_slice()).map(|(x, y)| x + y).collect()).unwrap();
            let prices = vec![vec![p; 3]];
            let segs = one_segment(3);
            let e = conv(3e7, 1e8, 0.1);
            let obj = |f: &MeasureFlow| conventional_objective(f, &prices, &segs, &grid, &e, 0.5).unwrap();
            let (oa, ob, os) = (obj(&fa), obj(&fb), obj(&sum));
            prop_assert!((os - oa - ob).abs() <= 1e-9 * (oa.abs() + ob.abs() + 1.0));
        }

        #[test]
        fn conventional_objective_is_lipschitz_in_price(p1 in prop::collection::vec(0.0..150.0f64, 3), p2 in prop::collection::vec(0.0..150.0f64, 3), m in prop::collection::vec(0.0..3.0f64, 15)) {
            let grid = GridSpec::new(0.0, 60.0, 4, 1.0, 2).unwrap();
            let flow = MeasureFlow::from_vec(3, 5, m).unwrap();
            let segs = one_segment(3);
            let e = conv(3e7, 1e8, 0.1);
            let o1 = conventional_objective(&flow, &[p1.clone()], &segs, &grid, &e, 0.5).unwrap();
            let o2 = conventional_objective(&flow, &[p2.clone()], &segs, &grid, &e, 0.5).unwrap();
            let bound: f64 = (0..3).map(|i| {
                grid.dt() * (-e.rho * grid.time(i)).exp() * MWH_PER_GW_YEAR
                    * (p1[i] - p2[i]).abs() * flow.total_mass(i)
            }).sum();
            prop_assert!((o1 - o2).abs() <= bound * (1.0 + 1e-12) + 1e-6);
        }

        #[test]
        fn renewable_objective_nonincreasing_in_price(p in 0.0..150.0f64, bump in 0.0..50.0f64, m in prop::collection::vec(0.0..3.0f64, 15)) {
            let grid = GridSpec::new(0.0, 1.0, 4, 1.0, 2).unwrap();
            let flow = MeasureFlow::from_vec(3, 5, m).unwrap();
            let segs = one_segment(3);
            let e = RenewableEconomics { rho: 0.086, kappa_r: 1.7e7, k_r: 1.377e9, gamma_r: 0.069 };
            let lo = renewable_objective(&flow, &[vec![p; 3]], &segs, &grid, &e).unwrap();
            let hi = renewable_objective(&flow, &[vec![p + bump; 3]], &segs, &grid, &e).unwrap();
            prop_assert!(hi <= lo + 1e-6 * lo.abs().max(1.0));
        }
    }
}
