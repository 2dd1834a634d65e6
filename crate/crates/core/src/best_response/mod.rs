//! Relaxed best responses as linear programs over measure flows, with a
//! backward-induction oracle for the same problem.

pub mod ipm;
pub mod lp;
pub mod mps;
pub mod oracle;
pub mod simplex;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grids::{GridSpec, MeasureFlow, TransitionOperator};
use crate::market::DemandSegment;
use crate::payoffs::{
    conventional_rewards, renewable_rewards, ConventionalEconomics, RenewableEconomics,
};

pub use lp::{build_lp_from_rewards, solve_lp, LpMethod, LpProblem, LpSolution};
pub use oracle::{dp_stopping_oracle, StoppingValue};

/// Default relative duality gap for best-response solves.
pub const DEFAULT_LP_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Population {
    Conventional,
    Renewable,
}

impl fmt::Display for Population {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Population::Conventional => "conventional",
            Population::Renewable => "renewable",
        })
    }
}

/// Economics of one population, enough to price every node of its grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Economics {
    Conventional {
        econ: ConventionalEconomics,
        /// Bid smoothing width, GBP/MWh.
        epsilon: f64,
    },
    Renewable(RenewableEconomics),
}

impl Economics {
    pub fn population(&self) -> Population {
        match self {
            Economics::Conventional { .. } => Population::Conventional,
            Economics::Renewable(_) => Population::Renewable,
        }
    }

    pub fn rewards(
        &self,
        prices: &[Vec<f64>],
        segments: &[DemandSegment],
        grid: &GridSpec,
    ) -> Result<MeasureFlow> {
        match self {
            Economics::Conventional { econ, epsilon } => {
                conventional_rewards(prices, segments, grid, econ, *epsilon)
            }
            Economics::Renewable(econ) => renewable_rewards(prices, segments, grid, econ),
        }
    }
}

pub fn build_lp(
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    economics: &Economics,
    transition: &TransitionOperator,
    initial: &[f64],
) -> Result<LpProblem> {
    let rewards = economics.rewards(prices, segments, grid)?;
    build_lp_from_rewards(&rewards, transition, initial)
}

/// Best response of a population facing fixed prices.
pub fn best_response(
    rewards: &MeasureFlow,
    transition: &TransitionOperator,
    initial: &[f64],
    tol: f64,
) -> Result<LpSolution> {
    let lp = build_lp_from_rewards(rewards, transition, initial)?;
    solve_lp(&lp, tol)
}

pub fn dp_oracle_for_prices(
    prices: &[Vec<f64>],
    segments: &[DemandSegment],
    grid: &GridSpec,
    economics: &Economics,
    transition: &TransitionOperator,
) -> Result<StoppingValue> {
    let rewards = economics.rewards(prices, segments, grid)?;
    dp_stopping_oracle(&rewards, transition)
}
