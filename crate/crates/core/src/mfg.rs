//! Fictitious play for the two-population entry/exit game.
//!
//! Each iteration clears the market at the current flows, computes both
//! best responses against those prices, records the exploitabilities, and
//! blends the best responses into the running averages.

use rayon::prelude::*;

use crate::best_response::{best_response, LpSolution, Population, DEFAULT_LP_TOL};
use crate::error::{Error, Result};
use crate::grids::{
    build_transition, discretize_density, evolve_equality, feasibility_violation, max_violation,
    DriftScheme, GridSpec, MeasureFlow, TransitionOperator,
};
use crate::market::{clearing_price, installed_output, renewable_output, DemandSegment, MarketParams};
use crate::payoffs::{
    conventional_rewards, renewable_rewards, ConventionalEconomics, RenewableEconomics,
    HOURS_PER_YEAR,
};
use crate::processes::{cir_stationary_density, jacobi_stationary_density, CirParams, JacobiParams};

/// Feasibility tolerance applied to every averaged iterate.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Everything needed to run fictitious play.
#[derive(Debug, Clone)]
pub struct GameInstance {
    pub cost_grid: GridSpec,
    pub factor_grid: GridSpec,
    pub cost_transition: TransitionOperator,
    pub factor_transition: TransitionOperator,
    /// Initial conventional capacity per cost node, GW.
    pub omega0: Vec<f64>,
    /// Flow of all potential renewable projects, entered or not, GW.
    pub eta_bar: MeasureFlow,
    /// Output of the renewable fleet installed before the horizon, GW.
    pub installed_renewable_output: Vec<f64>,
    pub segments: Vec<DemandSegment>,
    pub market: MarketParams,
    pub conventional: ConventionalEconomics,
    pub renewable: RenewableEconomics,
    pub lp_tol: f64,
}

/// Inputs to [`GameInstance::build`].
#[derive(Debug, Clone)]
pub struct GameSpec {
    pub cir: CirParams,
    pub jacobi: JacobiParams,
    pub cost_grid: GridSpec,
    pub factor_grid: GridSpec,
    pub scheme: DriftScheme,
    pub segments: Vec<DemandSegment>,
    pub market: MarketParams,
    pub conventional: ConventionalEconomics,
    pub renewable: RenewableEconomics,
}

impl GameInstance {
    /// Starts both populations and the installed renewable fleet from the
    /// stationary laws of their state processes.
    pub fn build(spec: GameSpec) -> Result<Self> {
        let GameSpec {
            cir,
            jacobi,
            cost_grid,
            factor_grid,
            scheme,
            segments,
            market,
            conventional,
            renewable,
        } = spec;
        if cost_grid.n_t != factor_grid.n_t || cost_grid.t_horizon != factor_grid.t_horizon {
            return Err(Error::Validation(
                "cost and capacity-factor grids must share the time grid".into(),
            ));
        }
        market.validate()?;
        conventional.validate()?;
        renewable.validate()?;
        for s in &segments {
            if s.series.len() != cost_grid.n_times() {
                return Err(Error::ShapeMismatch(format!(
                    "segment '{}' has {} demand values for {} time levels",
                    s.label,
                    s.series.len(),
                    cost_grid.n_times()
                )));
            }
        }
        let cost_transition = build_transition(&cir, &cost_grid, scheme);
        let factor_transition = build_transition(&jacobi, &factor_grid, scheme);
        let cost_density = |x: f64| cir_stationary_density(&cir, x).unwrap_or(0.0);
        let factor_density = |x: f64| jacobi_stationary_density(&jacobi, x).unwrap_or(0.0);
        let omega0 = if market.conventional_capacity > 0.0 {
            discretize_density(cost_density, &cost_grid, market.conventional_capacity)?
        } else {
            vec![0.0; cost_grid.n_nodes()]
        };
        let unit_factor = discretize_density(factor_density, &factor_grid, 1.0)?;
        let scaled = |gw: f64| unit_factor.iter().map(|v| v * gw).collect::<Vec<_>>();
        let eta_bar = evolve_equality(
            &scaled(market.renewable_potential),
            &factor_transition,
            factor_grid.n_t,
        )?;
        let installed = evolve_equality(
            &scaled(market.renewable_installed),
            &factor_transition,
            factor_grid.n_t,
        )?;
        let installed_renewable_output =
            installed.rows().map(|r| installed_output(r, &factor_grid)).collect();
        Ok(Self {
            cost_grid,
            factor_grid,
            cost_transition,
            factor_transition,
            omega0,
            eta_bar,
            installed_renewable_output,
            segments,
            market,
            conventional,
            renewable,
            lp_tol: DEFAULT_LP_TOL,
        })
    }

    pub fn eta0(&self) -> &[f64] {
        self.eta_bar.row(0)
    }

    /// Conventional flow in which no plant ever exits.
    pub fn omega_never_stop(&self) -> Result<MeasureFlow> {
        evolve_equality(&self.omega0, &self.cost_transition, self.cost_grid.n_t)
    }

    /// Initial capacity of a population, MW.
    pub fn capacity_mw(&self, population: Population) -> f64 {
        match population {
            Population::Conventional => self.omega0.iter().sum::<f64>() * 1000.0,
            Population::Renewable => self.eta0().iter().sum::<f64>() * 1000.0,
        }
    }

    /// Converts a population gain in GBP to GBP per MW of capacity per hour.
    pub fn per_mw_hour(&self, population: Population, gbp: f64) -> f64 {
        let cap = self.capacity_mw(population);
        if cap > 0.0 {
            gbp / (cap * self.cost_grid.t_horizon * HOURS_PER_YEAR)
        } else {
            0.0
        }
    }

    pub fn price_trajectories(&self, omega: &MeasureFlow, eta: &MeasureFlow) -> Vec<Vec<f64>> {
        price_trajectories(
            omega,
            eta,
            &self.eta_bar,
            &self.installed_renewable_output,
            &self.segments,
            &self.cost_grid,
            &self.factor_grid,
            &self.market,
        )
    }

    pub fn conventional_rewards(&self, prices: &[Vec<f64>]) -> Result<MeasureFlow> {
        conventional_rewards(
            prices,
            &self.segments,
            &self.cost_grid,
            &self.conventional,
            self.market.epsilon,
        )
    }

    pub fn renewable_rewards(&self, prices: &[Vec<f64>]) -> Result<MeasureFlow> {
        renewable_rewards(prices, &self.segments, &self.factor_grid, &self.renewable)
    }

    pub fn check_conventional(&self, omega: &MeasureFlow, tol: f64) -> Result<()> {
        match feasibility_violation(omega, &self.cost_transition, &self.omega0, tol) {
            None => Ok(()),
            Some(v) => Err(Error::InfeasibleFlow(format!("conventional flow: {v}"))),
        }
    }

    pub fn check_renewable(&self, eta: &MeasureFlow, tol: f64) -> Result<()> {
        match feasibility_violation(eta, &self.factor_transition, self.eta0(), tol) {
            None => Ok(()),
            Some(v) => Err(Error::InfeasibleFlow(format!("renewable flow: {v}"))),
        }
    }

    /// Capacity trajectories implied by a pair of flows.
    pub fn capacities(&self, omega: &MeasureFlow, eta: &MeasureFlow) -> Vec<CapacityPoint> {
        (0..self.cost_grid.n_times())
            .map(|i| CapacityPoint {
                time: self.cost_grid.time(i),
                conventional_gw: omega.total_mass(i),
                renewable_entered_gw: (self.eta_bar.total_mass(i) - eta.total_mass(i)).max(0.0),
                renewable_output_gw: self.installed_renewable_output[i]
                    + renewable_output(self.eta_bar.row(i), eta.row(i), &self.factor_grid),
            })
            .collect()
    }
}

/// Clearing price per demand segment and time level.
#[allow(clippy::too_many_arguments)]
pub fn price_trajectories(
    omega: &MeasureFlow,
    eta: &MeasureFlow,
    eta_bar: &MeasureFlow,
    installed_output: &[f64],
    segments: &[DemandSegment],
    cost_grid: &GridSpec,
    factor_grid: &GridSpec,
    mp: &MarketParams,
) -> Vec<Vec<f64>> {
    let renewable: Vec<f64> = (0..omega.n_times())
        .map(|i| {
            installed_output.get(i).copied().unwrap_or(0.0)
                + renewable_output(eta_bar.row(i), eta.row(i), factor_grid)
        })
        .collect();
    segments
        .par_iter()
        .map(|s| {
            (0..omega.n_times())
                .map(|i| clearing_price(omega.row(i), s.series[i] - renewable[i], cost_grid, mp))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacityPoint {
    pub time: f64,
    pub conventional_gw: f64,
    pub renewable_entered_gw: f64,
    /// Output of installed plus entered renewable capacity.
    pub renewable_output_gw: f64,
}

/// Exploitability of a pair of flows at fixed prices.
#[derive(Debug, Clone)]
pub struct Exploitability {
    pub conventional: f64,
    pub renewable: f64,
    pub conventional_value: f64,
    pub renewable_value: f64,
    pub conventional_best: LpSolution,
    pub renewable_best: LpSolution,
}

impl Exploitability {
    pub fn max(&self) -> f64 {
        self.conventional.max(self.renewable)
    }
}

fn gain(best: f64, current: f64, tol: f64, population: Population) -> f64 {
    let g = best - current;
    let scale = tol * best.abs().max(current.abs()).max(1.0);
    if g < -scale {
        log::warn!("{population} best response below current value by {:.3e}", -g);
    }
    g.max(0.0)
}

/// Gains from switching each population to its best response at `prices`.
pub fn exploitability(
    game: &GameInstance,
    omega: &MeasureFlow,
    eta: &MeasureFlow,
    prices: &[Vec<f64>],
) -> Result<Exploitability> {
    exploitability_with(game, omega, eta, prices, None)
}

fn exploitability_with(
    game: &GameInstance,
    omega: &MeasureFlow,
    eta: &MeasureFlow,
    prices: &[Vec<f64>],
    freeze: Option<Population>,
) -> Result<Exploitability> {
    let rc = game.conventional_rewards(prices)?;
    let rr = game.renewable_rewards(prices)?;
    let current_value = |flow: &MeasureFlow, rewards: &MeasureFlow| LpSolution {
        flow: flow.clone(),
        value: flow.dot(rewards),
        iterations: 0,
        method: crate::best_response::LpMethod::Trivial,
    };
    let solve_c = || -> Result<LpSolution> {
        if freeze == Some(Population::Conventional) {
            Ok(current_value(omega, &rc))
        } else {
            best_response(&rc, &game.cost_transition, &game.omega0, game.lp_tol)
        }
    };
    let solve_r = || -> Result<LpSolution> {
        if freeze == Some(Population::Renewable) {
            Ok(current_value(eta, &rr))
        } else {
            best_response(&rr, &game.factor_transition, game.eta0(), game.lp_tol)
        }
    };
    let (bc, br) = rayon::join(solve_c, solve_r);
    let (bc, br) = (bc?, br?);
    let vc = omega.dot(&rc);
    let vr = eta.dot(&rr);
    Ok(Exploitability {
        conventional: gain(bc.value, vc, game.lp_tol.max(1e-9), Population::Conventional),
        renewable: gain(br.value, vr, game.lp_tol.max(1e-9), Population::Renewable),
        conventional_value: vc,
        renewable_value: vr,
        conventional_best: bc,
        renewable_best: br,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Weight `1 / (n + 1)` on the best response at iteration `n`.
    Harmonic,
    /// Fixed weight in `(0, 1]`.
    Constant(f64),
}

#[derive(Debug, Clone)]
pub struct FpConfig {
    pub max_iters: usize,
    /// Stop once both exploitabilities are at most this, GBP.
    pub exploitability_target: f64,
    pub seed_flows: Option<(MeasureFlow, MeasureFlow)>,
    pub step: StepRule,
    /// Keep one population at its seed flow.
    pub freeze: Option<Population>,
}

impl Default for FpConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            exploitability_target: 0.0,
            seed_flows: None,
            step: StepRule::Harmonic,
            freeze: None,
        }
    }
}

impl FpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Validation("max_iters must be >= 1".into()));
        }
        if !(self.exploitability_target >= 0.0) {
            return Err(Error::Validation("exploitability target must be >= 0".into()));
        }
        if let StepRule::Constant(w) = self.step {
            if !(w > 0.0 && w <= 1.0) {
                return Err(Error::Validation(format!("constant step {w} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Exploitabilities evaluated at iterate `iteration`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub conventional: f64,
    pub renewable: f64,
    pub conventional_per_mw_hour: f64,
    pub renewable_per_mw_hour: f64,
}

impl IterationRecord {
    pub fn max(&self) -> f64 {
        self.conventional.max(self.renewable)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    TargetReached,
    MaxIterations,
    Failed(String),
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::TargetReached => "target_reached",
            Termination::MaxIterations => "max_iterations",
            Termination::Failed(_) => "failed",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    pub omega: MeasureFlow,
    pub eta: MeasureFlow,
    pub eta_bar: MeasureFlow,
    /// Prices at `(omega, eta)`, one series per demand segment.
    pub prices: Vec<Vec<f64>>,
    pub history: Vec<IterationRecord>,
    pub capacities: Vec<CapacityPoint>,
    pub termination: Termination,
    /// Largest constraint violation over all averaged iterates.
    pub max_violation: f64,
}

impl EquilibriumResult {
    pub fn final_exploitability(&self) -> Option<IterationRecord> {
        self.history.last().copied()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FictitiousPlayError {
    #[error(transparent)]
    Setup(Error),
    /// A solve or feasibility check failed mid-run; `partial` holds the
    /// last consistent state and the history so far.
    #[error("fictitious play stopped after {} iterations: {source}", partial.history.len())]
    Interrupted {
        source: Error,
        partial: Box<EquilibriumResult>,
    },
}

impl FictitiousPlayError {
    pub fn error(&self) -> &Error {
        match self {
            FictitiousPlayError::Setup(e) => e,
            FictitiousPlayError::Interrupted { source, .. } => source,
        }
    }
}

struct State {
    omega: MeasureFlow,
    eta: MeasureFlow,
    prices: Vec<Vec<f64>>,
    history: Vec<IterationRecord>,
    max_violation: f64,
}

impl State {
    fn into_result(self, game: &GameInstance, termination: Termination) -> EquilibriumResult {
        let capacities = game.capacities(&self.omega, &self.eta);
        EquilibriumResult {
            omega: self.omega,
            eta: self.eta,
            eta_bar: game.eta_bar.clone(),
            prices: self.prices,
            history: self.history,
            capacities,
            termination,
            max_violation: self.max_violation,
        }
    }
}

pub fn fictitious_play(
    game: &GameInstance,
    cfg: &FpConfig,
) -> std::result::Result<EquilibriumResult, FictitiousPlayError> {
    cfg.validate().map_err(FictitiousPlayError::Setup)?;
    let (omega, eta) = match &cfg.seed_flows {
        Some((o, e)) => (o.clone(), e.clone()),
        None => (
            game.omega_never_stop().map_err(FictitiousPlayError::Setup)?,
            game.eta_bar.clone(),
        ),
    };
    game.check_conventional(&omega, FEASIBILITY_TOL)
        .and_then(|_| game.check_renewable(&eta, FEASIBILITY_TOL))
        .map_err(FictitiousPlayError::Setup)?;
    let prices = game.price_trajectories(&omega, &eta);
    let mut st = State {
        max_violation: max_violation(&omega, &game.cost_transition, &game.omega0)
            .max(max_violation(&eta, &game.factor_transition, game.eta0())),
        omega,
        eta,
        prices,
        history: Vec::with_capacity(cfg.max_iters),
    };
    for n in 0..cfg.max_iters {
        st.prices = game.price_trajectories(&st.omega, &st.eta);
        let ex = match exploitability_with(game, &st.omega, &st.eta, &st.prices, cfg.freeze) {
            Ok(ex) => ex,
            Err(source) => {
                return Err(FictitiousPlayError::Interrupted {
                    partial: Box::new(st.into_result(game, Termination::Failed(source.to_string()))),
                    source,
                })
            }
        };
        st.history.push(IterationRecord {
            iteration: n,
            conventional: ex.conventional,
            renewable: ex.renewable,
            conventional_per_mw_hour: game.per_mw_hour(Population::Conventional, ex.conventional),
            renewable_per_mw_hour: game.per_mw_hour(Population::Renewable, ex.renewable),
        });
        log::debug!(
            "iteration {n}: exploitability conventional {:.6e}, renewable {:.6e}",
            ex.conventional,
            ex.renewable
        );
        if ex.max() <= cfg.exploitability_target {
            return Ok(st.into_result(game, Termination::TargetReached));
        }
        if n + 1 == cfg.max_iters {
            break;
        }
        let w = match cfg.step {
            StepRule::Harmonic => 1.0 / (n + 1) as f64,
            StepRule::Constant(w) => w,
        };
        let mut omega = st.omega.clone();
        let mut eta = st.eta.clone();
        let blended = omega
            .blend(&ex.conventional_best.flow, w)
            .and_then(|_| eta.blend(&ex.renewable_best.flow, w))
            .and_then(|_| game.check_conventional(&omega, FEASIBILITY_TOL))
            .and_then(|_| game.check_renewable(&eta, FEASIBILITY_TOL));
        if let Err(source) = blended {
            return Err(FictitiousPlayError::Interrupted {
                partial: Box::new(st.into_result(game, Termination::Failed(source.to_string()))),
                source,
            });
        }
        st.max_violation = st
            .max_violation
            .max(max_violation(&omega, &game.cost_transition, &game.omega0))
            .max(max_violation(&eta, &game.factor_transition, game.eta0()));
        st.omega = omega;
        st.eta = eta;
    }
    Ok(st.into_result(game, Termination::MaxIterations))
}
