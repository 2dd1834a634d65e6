//! Command-line interface.
//!
//! Exit codes: 0 success, 2 input error, 3 solver or numerical failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::best_response::{build_lp_from_rewards, dp_stopping_oracle, solve_lp};
use crate::error::Error;
use crate::grids::{GridSpec, MeasureFlow, TransitionOperator};
use crate::market::{clearing_price, discretized_price_theta};
use crate::mfg::{fictitious_play, FictitiousPlayError, GameInstance, FEASIBILITY_TOL};
use crate::processes::{
    calibrate_cir, calibrate_jacobi, cir_stationary_density, jacobi_stationary_density,
    moments_by_quadrature, StationaryMoments, DEFAULT_MEAN_REVERSION,
};
use crate::scenario_io::{
    build_game, load_scenario, read_capacities, read_flows, read_prices, write_results,
    write_timing, ScenarioConfig,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable naming the default root for run directories.
pub const OUTPUT_ROOT_ENV: &str = "POWERMFG_OUT";

#[derive(Debug, Parser)]
#[command(name = "powermfg", version, about = "Entry/exit equilibrium solver for electricity markets")]
pub struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit process parameters to stationary moments.
    Calibrate(CalibrateArgs),
    /// Solve the equilibrium of a scenario by fictitious play.
    Run(RunArgs),
    /// Align capacity and price trajectories of completed runs.
    Compare(CompareArgs),
    /// Cross-check solvers against independent oracles.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// TOML file with `[cost]` and/or `[factor]` tables holding `mean`, `std`
    /// and optionally `mean_reversion`.
    #[arg(long)]
    pub moments: Option<PathBuf>,
    #[arg(long)]
    pub cost_mean: Option<f64>,
    #[arg(long)]
    pub cost_std: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MEAN_REVERSION)]
    pub cost_k: f64,
    #[arg(long)]
    pub factor_mean: Option<f64>,
    #[arg(long)]
    pub factor_std: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MEAN_REVERSION)]
    pub factor_k: f64,
    /// Also write the parameters to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Results directory; defaults to `$POWERMFG_OUT/<scenario name>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = OUTPUT_ROOT_ENV, hide_env_values = true)]
    pub out_root: Option<PathBuf>,
    /// Overrides the scenario's iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Results directory whose `omega.csv` and `eta.csv` seed the run.
    #[arg(long)]
    pub seed_flows: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub runs: Vec<PathBuf>,
    /// Comparison CSV to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Largest state-cell and time-step count of the randomized instances.
    #[arg(long, default_value_t = 8)]
    pub max_size: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: corrupt the transition operators before checking.
    #[arg(long, hide = true)]
    pub corrupt_transition: bool,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT },
            message: e.to_string(),
        }
    }
}

fn input_error(message: impl Into<String>) -> CliError {
    CliError {
        code: EXIT_INPUT,
        message: message.into(),
    }
}

type CliResult = Result<(), CliError>;

/// Parses `args` and runs the command, returning the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return EXIT_INPUT;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let outcome = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::OracleCheck(a) => cmd_oracle_check(&a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsFile {
    cost: Option<MomentsEntry>,
    factor: Option<MomentsEntry>,
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsEntry {
    mean: f64,
    std: f64,
    mean_reversion: Option<f64>,
}

pub fn cmd_calibrate(a: &CalibrateArgs) -> CliResult {
    let mut cost = a.cost_mean.zip(a.cost_std).map(|(m, s)| (m, s, a.cost_k));
    let mut factor = a.factor_mean.zip(a.factor_std).map(|(m, s)| (m, s, a.factor_k));
    if a.cost_mean.is_some() != a.cost_std.is_some()
        || a.factor_mean.is_some() != a.factor_std.is_some()
    {
        return Err(input_error("give both mean and std for each process"));
    }
    if let Some(path) = &a.moments {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MomentsFile = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        if let Some(c) = file.cost {
            cost = Some((c.mean, c.std, c.mean_reversion.unwrap_or(a.cost_k)));
        }
        if let Some(f) = file.factor {
            factor = Some((f.mean, f.std, f.mean_reversion.unwrap_or(a.factor_k)));
        }
    }
    if cost.is_none() && factor.is_none() {
        return Err(input_error("no moments given: use --moments or --cost-mean/--cost-std or --factor-mean/--factor-std"));
    }
    let mut out = String::new();
    if let Some((mean, std, k)) = cost {
        let p = calibrate_cir(StationaryMoments::new(mean, std)?, k)?;
        let _ = writeln!(out, "cir.k = {}", p.k);
        let _ = writeln!(out, "cir.theta = {}", p.theta);
        let _ = writeln!(out, "cir.delta = {}", p.delta);
        if p.delta == 0.0 {
            eprintln!("warning: zero cost spread, the stationary cost law is a point mass");
        } else {
            let _ = writeln!(out, "cir.gamma_shape = {}", p.gamma_shape());
            let _ = writeln!(out, "cir.gamma_rate = {}", p.gamma_rate());
            let _ = writeln!(out, "cir.feller = {}", p.feller_satisfied());
            let hi = mean + 40.0 * std;
            let q = moments_by_quadrature(|x| cir_stationary_density(&p, x).unwrap_or(0.0), 0.0, hi, 4000);
            let _ = writeln!(out, "cir.roundtrip_mean_rel_err = {:e}", (q.mean - mean).abs() / mean);
            let _ = writeln!(out, "cir.roundtrip_std_rel_err = {:e}", (q.std - std).abs() / std);
        }
    }
    if let Some((mean, std, k)) = factor {
        let p = calibrate_jacobi(StationaryMoments::new(mean, std)?, k)?;
        let _ = writeln!(out, "jacobi.k_bar = {}", p.k_bar);
        let _ = writeln!(out, "jacobi.theta_bar = {}", p.theta_bar);
        let _ = writeln!(out, "jacobi.delta_bar = {}", p.delta_bar);
        if p.delta_bar == 0.0 {
            eprintln!("warning: zero capacity-factor spread, the stationary law is a point mass");
        } else {
            let (alpha, beta) = p.beta_parameters();
            let _ = writeln!(out, "jacobi.beta_alpha = {alpha}");
            let _ = writeln!(out, "jacobi.beta_beta = {beta}");
            let q = moments_by_quadrature(|x| jacobi_stationary_density(&p, x).unwrap_or(0.0), 0.0, 1.0, 4000);
            let _ = writeln!(out, "jacobi.roundtrip_mean_rel_err = {:e}", (q.mean - mean).abs() / mean);
            let _ = writeln!(out, "jacobi.roundtrip_std_rel_err = {:e}", (q.std - std).abs() / std);
        }
    }
    print!("{out}");
    if let Some(path) = &a.out {
        std::fs::write(path, &out).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn run_dir(a: &RunArgs, cfg: &ScenarioConfig) -> PathBuf {
    if let Some(out) = &a.out {
        return out.clone();
    }
    let root = a.out_root.clone().unwrap_or_else(|| PathBuf::from("runs"));
    root.join(&cfg.scenario.name)
}

pub fn cmd_run(a: &RunArgs) -> CliResult {
    if !a.scenario.is_file() {
        return Err(input_error(format!("scenario file {} not found", a.scenario.display())));
    }
    let mut cfg = load_scenario(&a.scenario)?;
    if let Some(n) = a.iters {
        if n == 0 {
            return Err(input_error("--iters must be >= 1"));
        }
        cfg.solver.max_iters = n;
    }
    let (game, derived) = build_game(&cfg)?;
    let mut fp = cfg.fp_config();
    if let Some(dir) = &a.seed_flows {
        let (omega, eta) = read_flows(dir)?;
        if omega.shape() != (game.cost_grid.n_times(), game.cost_grid.n_nodes())
            || eta.shape() != (game.factor_grid.n_times(), game.factor_grid.n_nodes())
        {
            return Err(input_error(format!(
                "seed flows in {} do not match the scenario grids",
                dir.display()
            )));
        }
        fp.seed_flows = Some((omega, eta));
    }
    let dir = run_dir(a, &cfg);
    let started = Instant::now();
    let outcome = fictitious_play(&game, &fp);
    let seconds = started.elapsed().as_secs_f64();
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(FictitiousPlayError::Setup(e)) => return Err(e.into()),
        Err(FictitiousPlayError::Interrupted { source, partial }) => (*partial, Some(source)),
    };
    write_results(&dir, &cfg, &derived, &game, &result)?;
    write_timing(&dir, seconds, rayon::current_num_threads())?;
    if let Some(last) = result.final_exploitability() {
        println!(
            "iterations {} ({}), exploitability conventional {:.6e} GBP ({:.3e} GBP/MW/h), renewable {:.6e} GBP ({:.3e} GBP/MW/h)",
            result.history.len(),
            result.termination.label(),
            last.conventional,
            last.conventional_per_mw_hour,
            last.renewable,
            last.renewable_per_mw_hour
        );
    }
    println!("wall time {seconds:.2} s, results in {}", dir.display());
    match failure {
        None => Ok(()),
        Some(e) => Err(CliError {
            code: EXIT_NUMERICAL,
            message: format!("{e} (partial results written to {})", dir.display()),
        }),
    }
}

struct RunData {
    name: String,
    times: Vec<f64>,
    conventional: Vec<f64>,
    renewable: Vec<f64>,
    prices: BTreeMap<String, Vec<f64>>,
}

fn load_run(dir: &Path) -> Result<RunData, CliError> {
    let caps = read_capacities(dir)?;
    let prices = read_prices(dir)?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    Ok(RunData {
        name,
        times: caps.iter().map(|c| c.time).collect(),
        conventional: caps.iter().map(|c| c.conventional_gw).collect(),
        renewable: caps.iter().map(|c| c.renewable_entered_gw).collect(),
        prices: prices.series,
    })
}

pub fn cmd_compare(a: &CompareArgs) -> CliResult {
    let runs = a
        .runs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>, _>>()?;
    let base = &runs[0];
    for r in &runs[1..] {
        let same_times = r.times.len() == base.times.len()
            && r.times.iter().zip(&base.times).all(|(x, y)| (x - y).abs() < 1e-9);
        let same_segments = r.prices.keys().eq(base.prices.keys());
        if !same_times || !same_segments {
            return Err(input_error(format!(
                "run '{}' is on a different time grid or segment set than '{}'",
                r.name, base.name
            )));
        }
    }
    let segments: Vec<&String> = base.prices.keys().collect();
    let mut csv = String::from("time");
    for r in &runs {
        let _ = write!(csv, ",{0}.conventional_gw,{0}.renewable_entered_gw", r.name);
        for s in &segments {
            let _ = write!(csv, ",{}.price_{s}", r.name);
        }
    }
    for r in &runs[1..] {
        let _ = write!(csv, ",{0}.delta_conventional_gw,{0}.delta_renewable_entered_gw", r.name);
        for s in &segments {
            let _ = write!(csv, ",{}.delta_price_{s}", r.name);
        }
    }
    csv.push('\n');
    for i in 0..base.times.len() {
        let _ = write!(csv, "{}", base.times[i]);
        for r in &runs {
            let _ = write!(csv, ",{},{}", r.conventional[i], r.renewable[i]);
            for s in &segments {
                let _ = write!(csv, ",{}", r.prices[*s][i]);
            }
        }
        for r in &runs[1..] {
            let _ = write!(
                csv,
                ",{},{}",
                r.conventional[i] - base.conventional[i],
                r.renewable[i] - base.renewable[i]
            );
            for s in &segments {
                let _ = write!(csv, ",{}", r.prices[*s][i] - base.prices[*s][i]);
            }
        }
        csv.push('\n');
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(&a.out, csv).map_err(|e| Error::io(&a.out, e))?;

    let last = base.times.len() - 1;
    for r in &runs {
        let mut line = format!(
            "{}: final conventional {:.4} GW, renewable entered {:.4} GW",
            r.name, r.conventional[last], r.renewable[last]
        );
        for s in &segments {
            let _ = write!(line, ", final {s} price {:.4}", r.prices[*s][last]);
        }
        println!("{line}");
    }
    let argmax = |f: &dyn Fn(&RunData) -> f64| {
        runs.iter()
            .max_by(|x, y| f(x).total_cmp(&f(y)))
            .map(|r| r.name.clone())
            .unwrap_or_default()
    };
    println!("highest final renewable entry: {}", argmax(&|r| r.renewable[last]));
    for s in &segments {
        println!("highest final {s} price: {}", argmax(&|r| r.prices[*s][last]));
    }
    Ok(())
}

/// Outcome of one oracle check.
#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn corrupt(op: &mut TransitionOperator) {
    // a positive coupling breaks the sign structure and creates mass
    let j = op.dim() / 2;
    op.sup[j] = op.sup[j].abs() + 1.0;
}

fn check_operator(name: &str, op: &TransitionOperator) -> Result<(), String> {
    let n = op.dim();
    for j in 0..n {
        if j > 0 && op.sub[j] > 0.0 {
            return Err(format!("{name} operator has a positive sub-diagonal entry at row {j}"));
        }
        if j + 1 < n && op.sup[j] > 0.0 {
            return Err(format!("{name} operator has a positive super-diagonal entry at row {j}"));
        }
        if op.main[j] < 1.0 {
            return Err(format!("{name} operator has main diagonal {} < 1 at row {j}", op.main[j]));
        }
    }
    if let Some((j, s)) = op
        .column_sums()
        .into_iter()
        .enumerate()
        .find(|(_, s)| *s < 1.0 - 1e-12)
    {
        return Err(format!("{name} operator creates mass: column {j} sums to {s}"));
    }
    Ok(())
}

/// Copy of the scenario with at most `cells` state cells per population.
fn shrink(cfg: &ScenarioConfig, cells: usize) -> ScenarioConfig {
    let mut small = cfg.clone();
    small.conventional.grid_cells = small.conventional.grid_cells.min(cells).max(2);
    small.renewable.grid_cells = small.renewable.grid_cells.min(cells).max(2);
    small
}

pub fn run_oracle_checks(
    cfg: &ScenarioConfig,
    max_size: usize,
    instances: usize,
    seed: u64,
    corrupt_transition: bool,
) -> Result<Vec<CheckReport>, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cir = cfg.cir()?;
    let jacobi = cfg.jacobi()?;
    let scheme = cfg.solver.drift_scheme;
    let mut reports = Vec::new();

    // randomized LP versus backward induction
    let mut worst = 0.0f64;
    let mut failure = None;
    for k in 0..instances {
        let n_x = rng.random_range(2..=max_size.max(2));
        let n_t = rng.random_range(1..=max_size);
        let conventional = k % 2 == 0;
        let grid = if conventional {
            GridSpec::new(0.0, cfg.cost_grid()?.x_max, n_x, n_t as f64 * cfg.time.step_years, n_t)?
        } else {
            GridSpec::new(0.0, 1.0, n_x, n_t as f64 * cfg.time.step_years, n_t)?
        };
        let mut op = if conventional {
            crate::grids::build_transition(&cir, &grid, scheme)
        } else {
            crate::grids::build_transition(&jacobi, &grid, scheme)
        };
        if corrupt_transition {
            corrupt(&mut op);
        }
        let mut rewards = MeasureFlow::for_grid(&grid);
        for i in 0..grid.n_times() {
            for v in rewards.row_mut(i) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let initial: Vec<f64> = (0..grid.n_nodes()).map(|_| rng.random_range(0.0..1.0)).collect();
        let lp = build_lp_from_rewards(&rewards, &op, &initial)?;
        let lp_value = match solve_lp(&lp, 1e-10) {
            Ok(s) => s.value,
            Err(e) => {
                failure.get_or_insert(format!("instance {k}: LP failed: {e}"));
                continue;
            }
        };
        match dp_stopping_oracle(&rewards, &op) {
            Ok(dp) => {
                let v = dp.value(&initial);
                let rel = (lp_value - v).abs() / lp_value.abs().max(1.0);
                worst = worst.max(rel);
                if rel > 1e-6 {
                    failure.get_or_insert(format!(
                        "instance {k} (n_x={n_x}, n_t={n_t}): LP {lp_value} vs DP {v}"
                    ));
                }
            }
            Err(e) => {
                failure.get_or_insert(format!("instance {k}: DP failed: {e}"));
            }
        }
    }
    reports.push(CheckReport {
        name: "lp-dp-agreement",
        passed: failure.is_none(),
        detail: failure.unwrap_or_else(|| {
            format!("{instances} instances, worst relative gap {worst:.3e}")
        }),
    });

    // price approximation bound
    let small = shrink(cfg, max_size);
    let (mut game, _) = build_game(&small)?;
    let mp = game.market;
    let mut theta_fail = None;
    let mut theta_worst = 0.0f64;
    for _ in 0..instances.max(1) * 10 {
        let row: Vec<f64> = (0..game.cost_grid.n_nodes())
            .map(|_| rng.random_range(0.0..2.0 * mp.conventional_capacity / game.cost_grid.n_nodes() as f64))
            .collect();
        let d = rng.random_range(-5.0..(mp.conventional_capacity + mp.baseline_max) * 1.1);
        let p = clearing_price(&row, d, &game.cost_grid, &mp);
        for n in [10usize, 100, 1000] {
            let theta = discretized_price_theta(&row, d, &game.cost_grid, &mp, n);
            let err = (theta - p).abs();
            theta_worst = theta_worst.max(err * n as f64 / mp.price_cap);
            if err > mp.price_cap / n as f64 {
                theta_fail.get_or_insert(format!("n={n}: |{theta} - {p}| > {}", mp.price_cap / n as f64));
            }
        }
    }
    reports.push(CheckReport {
        name: "price-approximation-bound",
        passed: theta_fail.is_none(),
        detail: theta_fail.unwrap_or_else(|| format!("worst |theta - price| n / cap = {theta_worst:.4}")),
    });

    // operator structure
    if corrupt_transition {
        corrupt(&mut game.cost_transition);
        corrupt(&mut game.factor_transition);
    }
    let op_check = check_operator("conventional", &game.cost_transition)
        .and_then(|_| check_operator("renewable", &game.factor_transition));
    reports.push(CheckReport {
        name: "transition-m-matrix",
        passed: op_check.is_ok(),
        detail: op_check.err().unwrap_or_else(|| "sign structure and mass balance hold".into()),
    });

    // feasibility of averaged iterates
    let fp = crate::mfg::FpConfig {
        max_iters: 10,
        ..small.fp_config()
    };
    let fp_report = match fictitious_play(&game, &fp) {
        Ok(r) => feasibility_report(&game, &r),
        Err(e) => CheckReport {
            name: "averaged-iterates-feasible",
            passed: false,
            detail: e.to_string(),
        },
    };
    reports.push(fp_report);
    Ok(reports)
}

fn feasibility_report(game: &GameInstance, r: &crate::mfg::EquilibriumResult) -> CheckReport {
    let masses_ok = |f: &MeasureFlow| {
        f.total_masses()
            .windows(2)
            .all(|w| w[1] <= w[0] + FEASIBILITY_TOL)
    };
    let passed = r.max_violation <= FEASIBILITY_TOL
        && masses_ok(&r.omega)
        && masses_ok(&r.eta)
        && r.omega.min_value() >= -FEASIBILITY_TOL
        && r.eta.min_value() >= -FEASIBILITY_TOL;
    CheckReport {
        name: "averaged-iterates-feasible",
        passed,
        detail: format!(
            "{} iterations on {}+{} nodes, max violation {:.3e}",
            r.history.len(),
            game.cost_grid.n_nodes(),
            game.factor_grid.n_nodes(),
            r.max_violation
        ),
    }
}

pub fn cmd_oracle_check(a: &OracleArgs) -> CliResult {
    if !(1..=12).contains(&a.max_size) {
        return Err(input_error("--max-size must lie in 1..=12"));
    }
    if !a.scenario.is_file() {
        return Err(input_error(format!("scenario file {} not found", a.scenario.display())));
    }
    let cfg = load_scenario(&a.scenario)?;
    let reports = run_oracle_checks(&cfg, a.max_size, a.instances, a.seed, a.corrupt_transition)?;
    let mut failed = 0;
    for r in &reports {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(CliError {
            code: EXIT_NUMERICAL,
            message: format!("{failed} oracle check(s) failed"),
        });
    }
    Ok(())
}
