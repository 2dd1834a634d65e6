//! Scenario files, demand ingestion and results directories.
//!
//! Scenarios are TOML. Field names carry their units; costs are quoted per
//! kW as in industry sources and converted to per GW when the economics are
//! built. Demand lives in a separate CSV with columns
//! `time_index,segment,demand_gw`, referenced relative to the scenario file.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{DriftScheme, GridSpec, MeasureFlow};
use crate::market::{DemandSegment, MarketParams};
use crate::mfg::{EquilibriumResult, FpConfig, GameInstance, GameSpec, StepRule};
use crate::payoffs::{ConventionalEconomics, RenewableEconomics, PER_KW_TO_PER_GW};
use crate::processes::{
    calibrate_cir, calibrate_jacobi, CirParams, JacobiParams, StationaryMoments,
};

/// Cost grid upper bound in stationary standard deviations above the mean.
pub const COST_GRID_STDS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Meta,
    pub time: TimeConfig,
    pub conventional: ConventionalConfig,
    pub renewable: RenewableConfig,
    #[serde(default)]
    pub market: MarketConfig,
    pub demand: DemandConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub horizon_years: f64,
    #[serde(default = "default_step_years")]
    pub step_years: f64,
}

fn default_step_years() -> f64 {
    crate::grids::DEFAULT_DT_YEARS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConventionalConfig {
    pub capacity_gw: f64,
    /// Mean of the stationary cost law.
    pub cost_mean_gbp_per_mwh: f64,
    /// Standard deviation of the stationary cost law; excludes
    /// `cost_volatility`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_std_gbp_per_mwh: Option<f64>,
    /// Volatility coefficient of the square-root cost process, given directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_volatility: Option<f64>,
    #[serde(default = "default_mean_reversion")]
    pub mean_reversion_per_year: f64,
    pub grid_cells: usize,
    /// Defaults to the mean plus ten stationary standard deviations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_max_gbp_per_mwh: Option<f64>,
    pub fixed_cost_gbp_per_kw_year: f64,
    #[serde(default)]
    pub salvage_value_gbp_per_kw: f64,
    #[serde(default)]
    pub salvage_depreciation_per_year: f64,
    pub discount_rate_per_year: f64,
}

fn default_mean_reversion() -> f64 {
    crate::processes::DEFAULT_MEAN_REVERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewableConfig {
    pub installed_gw: f64,
    pub potential_gw: f64,
    /// Mean of the stationary capacity-factor law, in (0, 1).
    pub factor_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_volatility: Option<f64>,
    #[serde(default = "default_mean_reversion")]
    pub mean_reversion_per_year: f64,
    pub grid_cells: usize,
    pub build_cost_gbp_per_kw: f64,
    /// Yearly owning cost as a fraction of the unsubsidized build cost.
    pub owning_cost_fraction_per_year: f64,
    pub depreciation_per_year: f64,
    pub discount_rate_per_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub bid_smoothing_gbp_per_mwh: f64,
    pub price_cap_gbp_per_mwh: f64,
    pub baseline_max_gw: f64,
    pub price_tolerance_rel: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        let mp = MarketParams::default();
        Self {
            bid_smoothing_gbp_per_mwh: mp.epsilon,
            price_cap_gbp_per_mwh: mp.price_cap,
            baseline_max_gw: mp.baseline_max,
            price_tolerance_rel: mp.price_tol_rel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    /// CSV path, relative to the scenario file unless absolute.
    pub file: PathBuf,
    pub segments: Vec<SegmentConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub label: String,
    pub hours_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub renewable_subsidy_fraction: f64,
    /// Replaces `build_cost * (1 - subsidy)` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsidized_build_cost_gbp_per_kw: Option<f64>,
    #[serde(default)]
    pub capacity_payment_gbp_per_kw_year: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub exploitability_target_gbp: f64,
    pub lp_tolerance: f64,
    pub drift_scheme: DriftScheme,
    /// Constant fictitious-play weight; harmonic weights when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 300,
            exploitability_target_gbp: 0.0,
            lp_tolerance: crate::best_response::DEFAULT_LP_TOL,
            drift_scheme: DriftScheme::default(),
            constant_step: None,
        }
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}

fn nonneg(v: f64, name: &str) -> Result<()> {
    ensure(v >= 0.0 && v.is_finite(), || format!("{name} must be finite and >= 0, got {v}"))
}

fn positive(v: f64, name: &str) -> Result<()> {
    ensure(v > 0.0 && v.is_finite(), || format!("{name} must be finite and > 0, got {v}"))
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn n_t(&self) -> Result<usize> {
        let steps = self.time.horizon_years / self.time.step_years;
        let n = steps.round();
        ensure(n >= 1.0 && (steps - n).abs() < 1e-9, || {
            format!(
                "time.horizon_years {} is not a whole number of steps of {}",
                self.time.horizon_years, self.time.step_years
            )
        })?;
        Ok(n as usize)
    }

    pub fn validate(&self) -> Result<()> {
        positive(self.time.horizon_years, "time.horizon_years")?;
        positive(self.time.step_years, "time.step_years")?;
        self.n_t()?;

        let c = &self.conventional;
        nonneg(c.capacity_gw, "conventional.capacity_gw")?;
        positive(c.cost_mean_gbp_per_mwh, "conventional.cost_mean_gbp_per_mwh")?;
        ensure(c.cost_std_gbp_per_mwh.is_some() != c.cost_volatility.is_some(), || {
            "conventional: give exactly one of cost_std_gbp_per_mwh and cost_volatility".into()
        })?;
        positive(c.mean_reversion_per_year, "conventional.mean_reversion_per_year")?;
        ensure(c.grid_cells >= 2, || "conventional.grid_cells must be >= 2".into())?;
        if let Some(x) = c.cost_max_gbp_per_mwh {
            positive(x, "conventional.cost_max_gbp_per_mwh")?;
        }
        nonneg(c.fixed_cost_gbp_per_kw_year, "conventional.fixed_cost_gbp_per_kw_year")?;
        nonneg(c.salvage_value_gbp_per_kw, "conventional.salvage_value_gbp_per_kw")?;
        nonneg(c.salvage_depreciation_per_year, "conventional.salvage_depreciation_per_year")?;
        positive(c.discount_rate_per_year, "conventional.discount_rate_per_year")?;

        let r = &self.renewable;
        nonneg(r.installed_gw, "renewable.installed_gw")?;
        nonneg(r.potential_gw, "renewable.potential_gw")?;
        ensure(r.factor_mean > 0.0 && r.factor_mean < 1.0, || {
            format!("renewable.factor_mean must lie in (0, 1), got {}", r.factor_mean)
        })?;
        ensure(r.factor_std.is_some() != r.factor_volatility.is_some(), || {
            "renewable: give exactly one of factor_std and factor_volatility".into()
        })?;
        positive(r.mean_reversion_per_year, "renewable.mean_reversion_per_year")?;
        ensure(r.grid_cells >= 2, || "renewable.grid_cells must be >= 2".into())?;
        nonneg(r.build_cost_gbp_per_kw, "renewable.build_cost_gbp_per_kw")?;
        nonneg(r.owning_cost_fraction_per_year, "renewable.owning_cost_fraction_per_year")?;
        nonneg(r.depreciation_per_year, "renewable.depreciation_per_year")?;
        positive(r.discount_rate_per_year, "renewable.discount_rate_per_year")?;

        let m = &self.market;
        positive(m.bid_smoothing_gbp_per_mwh, "market.bid_smoothing_gbp_per_mwh")?;
        positive(m.price_cap_gbp_per_mwh, "market.price_cap_gbp_per_mwh")?;
        nonneg(m.baseline_max_gw, "market.baseline_max_gw")?;
        ensure(m.price_tolerance_rel > 0.0 && m.price_tolerance_rel < 1.0, || {
            "market.price_tolerance_rel must lie in (0, 1)".into()
        })?;

        ensure(!self.demand.segments.is_empty(), || "demand.segments is empty".into())?;
        let mut seen = std::collections::HashSet::new();
        for s in &self.demand.segments {
            ensure(seen.insert(&s.label), || format!("duplicate demand segment '{}'", s.label))?;
            nonneg(s.hours_weight, "demand.segments.hours_weight")?;
        }
        let total: f64 = self.demand.segments.iter().map(|s| s.hours_weight).sum();
        ensure((total - 1.0).abs() < 1e-6, || {
            format!("demand segment hours weights sum to {total}, expected 1")
        })?;

        let p = &self.policy;
        ensure(
            (0.0..1.0).contains(&p.renewable_subsidy_fraction),
            || {
                format!(
                    "policy.renewable_subsidy_fraction must lie in [0, 1), got {}",
                    p.renewable_subsidy_fraction
                )
            },
        )?;
        if let Some(k) = p.subsidized_build_cost_gbp_per_kw {
            nonneg(k, "policy.subsidized_build_cost_gbp_per_kw")?;
        }
        nonneg(p.capacity_payment_gbp_per_kw_year, "policy.capacity_payment_gbp_per_kw_year")?;

        let s = &self.solver;
        ensure(s.max_iters >= 1, || "solver.max_iters must be >= 1".into())?;
        nonneg(s.exploitability_target_gbp, "solver.exploitability_target_gbp")?;
        ensure(s.lp_tolerance > 0.0 && s.lp_tolerance < 1e-2, || {
            "solver.lp_tolerance must lie in (0, 1e-2)".into()
        })?;
        if let Some(w) = s.constant_step {
            ensure(w > 0.0 && w <= 1.0, || "solver.constant_step must lie in (0, 1]".into())?;
        }
        Ok(())
    }

    pub fn cir(&self) -> Result<CirParams> {
        let c = &self.conventional;
        match (c.cost_std_gbp_per_mwh, c.cost_volatility) {
            (Some(std), _) => calibrate_cir(
                StationaryMoments::new(c.cost_mean_gbp_per_mwh, std)?,
                c.mean_reversion_per_year,
            ),
            (None, Some(delta)) => {
                CirParams::new(c.mean_reversion_per_year, c.cost_mean_gbp_per_mwh, delta)
            }
            (None, None) => Err(Error::Validation("conventional cost spread missing".into())),
        }
    }

    pub fn jacobi(&self) -> Result<JacobiParams> {
        let r = &self.renewable;
        match (r.factor_std, r.factor_volatility) {
            (Some(std), _) => calibrate_jacobi(
                StationaryMoments::new(r.factor_mean, std)?,
                r.mean_reversion_per_year,
            ),
            (None, Some(delta)) => JacobiParams::new(r.mean_reversion_per_year, r.factor_mean, delta),
            (None, None) => Err(Error::Validation("renewable factor spread missing".into())),
        }
    }

    pub fn cost_grid(&self) -> Result<GridSpec> {
        let c = &self.conventional;
        let x_max = match c.cost_max_gbp_per_mwh {
            Some(x) => x,
            None => {
                let std = self.cir()?.stationary_moments().std;
                c.cost_mean_gbp_per_mwh + COST_GRID_STDS * std
            }
        };
        GridSpec::new(0.0, x_max, c.grid_cells, self.time.horizon_years, self.n_t()?)
    }

    pub fn factor_grid(&self) -> Result<GridSpec> {
        GridSpec::new(
            0.0,
            1.0,
            self.renewable.grid_cells,
            self.time.horizon_years,
            self.n_t()?,
        )
    }

    pub fn market_params(&self) -> MarketParams {
        MarketParams {
            epsilon: self.market.bid_smoothing_gbp_per_mwh,
            price_cap: self.market.price_cap_gbp_per_mwh,
            baseline_max: self.market.baseline_max_gw,
            conventional_capacity: self.conventional.capacity_gw,
            renewable_installed: self.renewable.installed_gw,
            renewable_potential: self.renewable.potential_gw,
            price_tol_rel: self.market.price_tolerance_rel,
        }
    }

    pub fn fp_config(&self) -> FpConfig {
        FpConfig {
            max_iters: self.solver.max_iters,
            exploitability_target: self.solver.exploitability_target_gbp,
            step: match self.solver.constant_step {
                Some(w) => StepRule::Constant(w),
                None => StepRule::Harmonic,
            },
            ..FpConfig::default()
        }
    }

    /// Build cost of a renewable project after policy, GBP per kW.
    pub fn effective_build_cost_gbp_per_kw(&self) -> f64 {
        self.policy.subsidized_build_cost_gbp_per_kw.unwrap_or(
            self.renewable.build_cost_gbp_per_kw * (1.0 - self.policy.renewable_subsidy_fraction),
        )
    }
}

/// Reads and validates a scenario. The demand path is resolved against the
/// scenario's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = ScenarioConfig::from_toml_str(&text, path)?;
    if cfg.demand.file.is_relative() {
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.demand.file = base.join(&cfg.demand.file);
    }
    if !cfg.demand.file.is_file() {
        return Err(Error::Validation(format!(
            "demand file {} does not exist",
            cfg.demand.file.display()
        )));
    }
    Ok(cfg)
}

/// Per-GW economics of both populations after subsidy and capacity payment.
pub fn apply_policy(cfg: &ScenarioConfig) -> (ConventionalEconomics, RenewableEconomics) {
    let c = &cfg.conventional;
    let r = &cfg.renewable;
    let conventional = ConventionalEconomics {
        rho: c.discount_rate_per_year,
        kappa_c: c.fixed_cost_gbp_per_kw_year * PER_KW_TO_PER_GW,
        k_c: c.salvage_value_gbp_per_kw * PER_KW_TO_PER_GW,
        gamma_c: c.salvage_depreciation_per_year,
        capacity_payment: cfg.policy.capacity_payment_gbp_per_kw_year * PER_KW_TO_PER_GW,
    };
    let renewable = RenewableEconomics {
        rho: r.discount_rate_per_year,
        kappa_r: r.owning_cost_fraction_per_year * r.build_cost_gbp_per_kw * PER_KW_TO_PER_GW,
        k_r: cfg.effective_build_cost_gbp_per_kw() * PER_KW_TO_PER_GW,
        gamma_r: r.depreciation_per_year,
    };
    (conventional, renewable)
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    time_index: usize,
    segment: String,
    demand_gw: f64,
}

/// Reads per-segment demand for `n_times` time levels.
pub fn load_demand(
    path: &Path,
    segments: &[SegmentConfig],
    n_times: usize,
) -> Result<Vec<DemandSegment>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let index: HashMap<&str, usize> = segments
        .iter()
        .enumerate()
        .map(|(k, s)| (s.label.as_str(), k))
        .collect();
    let mut series: Vec<Vec<Option<f64>>> = vec![vec![None; n_times]; segments.len()];
    for (line, row) in reader.deserialize::<DemandRow>().enumerate() {
        let row = row.map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;
        let lineno = line + 2;
        let &k = index.get(row.segment.as_str()).ok_or_else(|| {
            Error::Ingestion(format!(
                "{} line {lineno}: unknown segment '{}'",
                path.display(),
                row.segment
            ))
        })?;
        if row.time_index >= n_times {
            // series may extend past the horizon
            continue;
        }
        if !(row.demand_gw >= 0.0 && row.demand_gw.is_finite()) {
            return Err(Error::Ingestion(format!(
                "{} line {lineno}: demand must be finite and >= 0, got {}",
                path.display(),
                row.demand_gw
            )));
        }
        let slot = &mut series[k][row.time_index];
        if slot.is_some() {
            return Err(Error::Ingestion(format!(
                "{} line {lineno}: duplicate entry for segment '{}' at time index {}",
                path.display(),
                row.segment,
                row.time_index
            )));
        }
        *slot = Some(row.demand_gw);
    }
    let mut gaps = Vec::new();
    for (s, vals) in segments.iter().zip(&series) {
        let missing: Vec<usize> = (0..n_times).filter(|&i| vals[i].is_none()).collect();
        if !missing.is_empty() {
            gaps.push(format!("'{}' missing time indices {}", s.label, compact_ranges(&missing)));
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Ingestion(format!("{}: {}", path.display(), gaps.join("; "))));
    }
    Ok(segments
        .iter()
        .zip(series)
        .map(|(s, vals)| DemandSegment {
            label: s.label.clone(),
            hours_weight: s.hours_weight,
            series: vals.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        })
        .collect())
}

fn compact_ranges(idx: &[usize]) -> String {
    let mut parts = Vec::new();
    let mut k = 0;
    while k < idx.len() {
        let start = idx[k];
        let mut end = start;
        while k + 1 < idx.len() && idx[k + 1] == end + 1 {
            k += 1;
            end = idx[k];
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
        k += 1;
    }
    parts.join(",")
}

/// Parameters derived from a scenario.
#[derive(Debug, Clone)]
pub struct Derived {
    pub cir: CirParams,
    pub jacobi: JacobiParams,
    pub cost_grid: GridSpec,
    pub factor_grid: GridSpec,
    pub conventional: ConventionalEconomics,
    pub renewable: RenewableEconomics,
}

/// Builds the game described by a loaded scenario.
pub fn build_game(cfg: &ScenarioConfig) -> Result<(GameInstance, Derived)> {
    let cir = cfg.cir()?;
    let jacobi = cfg.jacobi()?;
    let cost_grid = cfg.cost_grid()?;
    let factor_grid = cfg.factor_grid()?;
    let segments = load_demand(&cfg.demand.file, &cfg.demand.segments, cost_grid.n_times())?;
    let (conventional, renewable) = apply_policy(cfg);
    let mut game = GameInstance::build(GameSpec {
        cir,
        jacobi,
        cost_grid,
        factor_grid,
        scheme: cfg.solver.drift_scheme,
        segments,
        market: cfg.market_params(),
        conventional,
        renewable,
    })?;
    game.lp_tol = cfg.solver.lp_tolerance;
    Ok((
        game,
        Derived {
            cir,
            jacobi,
            cost_grid,
            factor_grid,
            conventional,
            renewable,
        },
    ))
}

/// Ordered `key = value` pairs describing a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.to_string()))
            .collect();
        Self { entries }
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self::parse(&text))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Manifest) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        toml::Value::Array(items) => {
            for (k, v) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        toml::Value::String(s) => out.push(prefix, s),
        toml::Value::Float(f) => out.push(prefix, f),
        toml::Value::Integer(i) => out.push(prefix, i),
        toml::Value::Boolean(b) => out.push(prefix, b),
        toml::Value::Datetime(d) => out.push(prefix, d),
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const PRICES_FILE: &str = "prices.csv";
pub const CAPACITIES_FILE: &str = "capacities.csv";
pub const EXPLOITABILITY_FILE: &str = "exploitability.csv";
pub const TIMING_FILE: &str = "timing.txt";

/// Manifest describing a run: config echo, derived parameters and outcome.
pub fn build_manifest(
    cfg: &ScenarioConfig,
    derived: &Derived,
    result: &EquilibriumResult,
    game: &GameInstance,
) -> Manifest {
    let mut m = Manifest::default();
    let value = toml::Value::try_from(cfg).expect("scenario config always serializes");
    flatten("config", &value, &mut m);
    m.push("derived.cir.k", derived.cir.k);
    m.push("derived.cir.theta", derived.cir.theta);
    m.push("derived.cir.delta", derived.cir.delta);
    m.push("derived.cir.feller", derived.cir.feller_satisfied());
    m.push("derived.jacobi.k_bar", derived.jacobi.k_bar);
    m.push("derived.jacobi.theta_bar", derived.jacobi.theta_bar);
    m.push("derived.jacobi.delta_bar", derived.jacobi.delta_bar);
    for (name, g) in [("cost_grid", &derived.cost_grid), ("factor_grid", &derived.factor_grid)] {
        m.push(format!("derived.{name}.x_min"), g.x_min);
        m.push(format!("derived.{name}.x_max"), g.x_max);
        m.push(format!("derived.{name}.n_x"), g.n_x);
        m.push(format!("derived.{name}.dx"), g.dx());
        m.push(format!("derived.{name}.n_t"), g.n_t);
        m.push(format!("derived.{name}.dt"), g.dt());
    }
    let c = &derived.conventional;
    m.push("derived.conventional.kappa_c_gbp_per_gw_year", c.kappa_c);
    m.push("derived.conventional.k_c_gbp_per_gw", c.k_c);
    m.push("derived.conventional.capacity_payment_gbp_per_gw_year", c.capacity_payment);
    let r = &derived.renewable;
    m.push("derived.renewable.kappa_r_gbp_per_gw_year", r.kappa_r);
    m.push("derived.renewable.k_r_gbp_per_gw", r.k_r);
    m.push("derived.renewable.effective_build_cost_gbp_per_kw", cfg.effective_build_cost_gbp_per_kw());
    m.push("derived.renewable.installed_output_gw_t0", game.installed_renewable_output[0]);
    m.push("result.termination", result.termination.label());
    if let crate::mfg::Termination::Failed(msg) = &result.termination {
        m.push("result.failure", msg.replace('\n', " "));
    }
    m.push("result.partial", matches!(result.termination, crate::mfg::Termination::Failed(_)));
    m.push("result.iterations", result.history.len());
    if let Some(last) = result.final_exploitability() {
        m.push("result.exploitability.conventional_gbp", last.conventional);
        m.push("result.exploitability.renewable_gbp", last.renewable);
        m.push("result.exploitability.conventional_gbp_per_mw_hour", last.conventional_per_mw_hour);
        m.push("result.exploitability.renewable_gbp_per_mw_hour", last.renewable_per_mw_hour);
    }
    if let Some(first) = result.history.first() {
        m.push("result.initial_exploitability.conventional_gbp", first.conventional);
        m.push("result.initial_exploitability.renewable_gbp", first.renewable);
    }
    m.push("result.max_constraint_violation", result.max_violation);
    if let Some(last) = result.capacities.last() {
        m.push("result.final.conventional_gw", last.conventional_gw);
        m.push("result.final.renewable_entered_gw", last.renewable_entered_gw);
    }
    for (s, p) in game.segments.iter().zip(&result.prices) {
        if let Some(v) = p.last() {
            m.push(format!("result.final.price.{}", s.label), v);
        }
    }
    m
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn prices_csv(result: &EquilibriumResult, game: &GameInstance) -> String {
    let mut out = String::from("time,segment,price\n");
    for (s, series) in game.segments.iter().zip(&result.prices) {
        for (i, p) in series.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", game.cost_grid.time(i), s.label, p);
        }
    }
    out
}

pub fn capacities_csv(result: &EquilibriumResult) -> String {
    let mut out = String::from("time,conventional_gw,renewable_entered_gw,renewable_output_gw\n");
    for c in &result.capacities {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            c.time, c.conventional_gw, c.renewable_entered_gw, c.renewable_output_gw
        );
    }
    out
}

pub fn exploitability_csv(result: &EquilibriumResult) -> String {
    let mut out = String::from(
        "iteration,conventional_gbp,renewable_gbp,conventional_gbp_per_mw_hour,renewable_gbp_per_mw_hour\n",
    );
    for h in &result.history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            h.iteration,
            h.conventional,
            h.renewable,
            h.conventional_per_mw_hour,
            h.renewable_per_mw_hour
        );
    }
    out
}

/// Writes every output of a run into `dir`, creating it if needed.
pub fn write_results(
    dir: &Path,
    cfg: &ScenarioConfig,
    derived: &Derived,
    game: &GameInstance,
    result: &EquilibriumResult,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join(PRICES_FILE), &prices_csv(result, game))?;
    write_file(&dir.join(CAPACITIES_FILE), &capacities_csv(result))?;
    write_file(&dir.join(EXPLOITABILITY_FILE), &exploitability_csv(result))?;
    result.omega.write_csv(&game.cost_grid, &dir.join("omega.csv"))?;
    result.eta.write_csv(&game.factor_grid, &dir.join("eta.csv"))?;
    result.eta_bar.write_csv(&game.factor_grid, &dir.join("eta_bar.csv"))?;
    write_file(&dir.join(CONFIG_ECHO_FILE), &cfg.to_toml_string())?;
    let manifest = build_manifest(cfg, derived, result, game);
    write_file(&dir.join(MANIFEST_FILE), &manifest.render())?;
    Ok(manifest)
}

/// Wall-clock timings, kept apart from the manifest so the manifest stays
/// byte-identical across repeated runs.
pub fn write_timing(dir: &Path, seconds: f64, threads: usize) -> Result<()> {
    write_file(
        &dir.join(TIMING_FILE),
        &format!("wall_seconds = {seconds}\nthreads = {threads}\n"),
    )
}

/// Price series keyed by segment label, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    pub times: Vec<f64>,
    pub series: BTreeMap<String, Vec<f64>>,
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_prices(dir: &Path) -> Result<PriceTable> {
    let path = dir.join(PRICES_FILE);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| parse_err(&path, e.to_string()))?;
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut times: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(&path, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .ok_or_else(|| parse_err(&path, "short row"))?
                .parse::<f64>()
                .map_err(|e| parse_err(&path, e.to_string()))
        };
        let label = rec.get(1).ok_or_else(|| parse_err(&path, "short row"))?.to_string();
        times.entry(label.clone()).or_default().push(num(0)?);
        series.entry(label).or_default().push(num(2)?);
    }
    let times = times.into_values().next().unwrap_or_default();
    Ok(PriceTable { times, series })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub time: f64,
    pub conventional_gw: f64,
    pub renewable_entered_gw: f64,
    pub renewable_output_gw: f64,
}

pub fn read_capacities(dir: &Path) -> Result<Vec<CapacityRow>> {
    let path = dir.join(CAPACITIES_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    read_numeric_rows(&path, &text, 4).map(|rows| {
        rows.into_iter()
            .map(|r| CapacityRow {
                time: r[0],
                conventional_gw: r[1],
                renewable_entered_gw: r[2],
                renewable_output_gw: r[3],
            })
            .collect()
    })
}

/// `(iteration, conventional, renewable)` exploitabilities in GBP.
pub fn read_exploitability(dir: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let path = dir.join(EXPLOITABILITY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    read_numeric_rows(&path, &text, 5)
        .map(|rows| rows.into_iter().map(|r| (r[0] as usize, r[1], r[2])).collect())
}

fn read_numeric_rows(path: &Path, text: &str, width: usize) -> Result<Vec<Vec<f64>>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let row = l
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(path, e.to_string()))?;
            if row.len() != width {
                return Err(parse_err(path, format!("expected {width} columns in '{l}'")));
            }
            Ok(row)
        })
        .collect()
}

/// Reads `omega.csv` and `eta.csv` from a results directory.
pub fn read_flows(dir: &Path) -> Result<(MeasureFlow, MeasureFlow)> {
    let (_, omega) = MeasureFlow::read_csv(&dir.join("omega.csv"))?;
    let (_, eta) = MeasureFlow::read_csv(&dir.join("eta.csv"))?;
    Ok((omega, eta))
}
