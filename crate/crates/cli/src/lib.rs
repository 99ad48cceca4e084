//! Command-line front end: `crb`, `rate`, `optimize`, `sweep`, `simulate`
//! and `validate`.
//!
//! Exit codes: 0 success, 1 error (bad config, I/O, numerical failure),
//! 2 infeasible rate threshold, 3 validation failure.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use bisac_core::config::{self, Config, SweepSection};
use bisac_core::fim::{block_inverse, build_fim, crb_numeric, evaluate_crb, FimConvention};
use bisac_core::geometry::scene_geometry;
use bisac_core::linalg::HermitianCovariance;
use bisac_core::optimizer::{
    feasibility_probe, solve, sweep, sweep_parallel, SolveStatus, TradeoffPoint, TradeoffProblem,
};
use bisac_core::pulses::{pulse_constants, PulseName, DEFAULT_QUADRATURE_POINTS};
use bisac_core::rate::{build_rate_matrix, sum_rate};
use bisac_core::simulate::{mse_vs_crb, validate_derivative_energy, MseReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

/// Relative tolerance of the closed-form / numeric / block-inverse checks.
const VALIDATE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Parser)]
#[command(name = "bisac", version, about = "CRB / sum-rate trade-off for backscatter ISAC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cramér-Rao bound at a covariance.
    Crb(CovArgs),
    /// BD sum rate at a covariance.
    Rate(CovArgs),
    /// Minimize the CRB subject to power and minimum sum rate.
    Optimize(OptimizeArgs),
    /// Trade-off curve over a Γ_th grid, as CSV.
    Sweep(SweepArgs),
    /// Monte-Carlo ML estimation versus the bound, as CSV.
    Simulate(SimulateArgs),
    /// Numerical self-checks with PASS/FAIL lines.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConventionArg {
    Rescaled,
    Physical,
}

impl From<ConventionArg> for FimConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Rescaled => FimConvention::Rescaled,
            ConventionArg::Physical => FimConvention::Physical,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovarianceArg {
    /// `P_0 / M_t · I`.
    Isotropic,
    /// The optimizer's covariance at `--gamma-th` (0 when unset).
    Optimized,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in scenario: scenario-1 or scenario-2.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_parser = parse_pulse)]
    pub pulse: Option<PulseName>,
    #[arg(long)]
    pub power_dbm: Option<f64>,
    #[arg(long)]
    pub mt: Option<usize>,
    #[arg(long)]
    pub mr: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the meaning and units of every output field, then exit.
    #[arg(long)]
    pub describe_output: bool,
    /// Relative duality-gap target of the CRB solve.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub probe_tolerance: Option<f64>,
    #[arg(long)]
    pub newton_tolerance: Option<f64>,
    #[arg(long)]
    pub max_stages: Option<usize>,
    #[arg(long)]
    pub mu_growth: Option<f64>,
    /// Solve every sweep point from the default start.
    #[arg(long)]
    pub no_warm_start: bool,
}

#[derive(Debug, Args)]
pub struct CovArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "isotropic")]
    pub covariance: CovarianceArg,
    #[arg(long)]
    pub gamma_th: Option<f64>,
    #[arg(long, value_enum, default_value = "rescaled")]
    pub convention: ConventionArg,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Minimum sum rate, bps/Hz.
    #[arg(long, default_value_t = 0.0)]
    pub gamma_th: f64,
    #[arg(long, value_enum, default_value = "rescaled")]
    pub convention: ConventionArg,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    /// Evenly spaced grid `start:stop:points`, overriding `[sweep]`.
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<SweepSection>,
    /// Grid values are fractions of the Γ_max certificate.
    #[arg(long)]
    pub relative: bool,
    /// Solve grid points concurrently (no warm starts).
    #[arg(long)]
    pub parallel: bool,
    /// Fill the `seconds` column with wall-clock time (otherwise 0, so that
    /// repeated runs are byte-identical).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, value_enum, default_value = "rescaled")]
    pub convention: ConventionArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Multiplier on the covariance (×10³ = +30 dB).
    #[arg(long)]
    pub power_scaling: Option<f64>,
    #[arg(long, value_enum, default_value = "isotropic")]
    pub covariance: CovarianceArg,
    #[arg(long)]
    pub gamma_th: Option<f64>,
    /// Also write every trial's estimation error.
    #[arg(long)]
    pub per_trial: bool,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Monte-Carlo trials for the derivative-energy check.
    #[arg(long, default_value_t = 2000)]
    pub trials: usize,
}

fn parse_pulse(s: &str) -> Result<PulseName, String> {
    s.parse::<PulseName>().map_err(|e| e.to_string())
}

fn parse_grid(s: &str) -> Result<SweepSection, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err("expected start:stop:points".into());
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
    let points = n.trim().parse::<usize>().map_err(|e| format!("`{n}`: {e}"))?;
    Ok(SweepSection::linear(num(a)?, num(b)?, points, false))
}

/// Parses `argv` (including the program name) and runs; returns the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Crb(a) => cmd_crb(a),
        Command::Rate(a) => cmd_rate(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

/// Loads the configuration and applies command-line overrides.
pub fn load(common: &Common) -> anyhow::Result<Config> {
    let cfg = match (&common.config, &common.preset) {
        (Some(p), _) => config::load_config(p).with_context(|| format!("loading {}", p.display()))?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => config::preset("scenario-1")?,
    };
    let mut file = cfg.file;
    if let Some(p) = common.pulse {
        file.pulse = config::PulseSection {
            name: Some(p),
            samples: None,
            samples_imag: None,
        };
    }
    if let Some(v) = common.power_dbm {
        file.physics.power_dbm = v;
    }
    if let Some(v) = common.mt {
        file.scenario.tx_antennas = v;
    }
    if let Some(v) = common.mr {
        file.scenario.rx_antennas = v;
    }
    if let Some(v) = common.seed {
        file.simulation.seed = v;
    }
    let s = &mut file.solver;
    if let Some(v) = common.tolerance {
        s.tolerance = v;
    }
    if let Some(v) = common.probe_tolerance {
        s.probe_tolerance = v;
    }
    if let Some(v) = common.newton_tolerance {
        s.newton_tolerance = v;
    }
    if let Some(v) = common.max_stages {
        s.max_outer_stages = v;
    }
    if let Some(v) = common.mu_growth {
        s.mu_growth = v;
    }
    if common.no_warm_start {
        s.warm_start = false;
    }
    Ok(Config::from_file(file)?)
}

fn output(common: &Common) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &common.out {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(common: &Common, text: &str) -> anyhow::Result<()> {
    let mut w = output(common)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn problem(cfg: &Config, gamma_th: f64, convention: FimConvention) -> anyhow::Result<TradeoffProblem> {
    let pc = pulse_constants(&cfg.pulse, cfg.scenario.symbol_duration, DEFAULT_QUADRATURE_POINTS)?;
    Ok(TradeoffProblem::new(cfg.scenario.clone(), pc, gamma_th)?.with_convention(convention))
}

fn covariance(
    cfg: &Config,
    which: CovarianceArg,
    gamma_th: Option<f64>,
    convention: FimConvention,
) -> anyhow::Result<HermitianCovariance> {
    let s = &cfg.scenario;
    match which {
        CovarianceArg::Isotropic => Ok(HermitianCovariance::isotropic(
            s.array.tx_antennas,
            s.power_budget / s.array.tx_antennas as f64,
        )),
        CovarianceArg::Optimized => {
            let p = problem(cfg, gamma_th.unwrap_or(0.0), convention)?;
            let sol = solve(&p, &cfg.file.solver)?;
            if sol.status == SolveStatus::Infeasible {
                return Err(anyhow!("rate threshold infeasible; no optimized covariance"));
            }
            Ok(sol.covariance)
        }
    }
}

fn describe(common: &Common, fields: &[(&str, &str)]) -> anyhow::Result<i32> {
    let mut s = String::new();
    for (k, v) in fields {
        s.push_str(&format!("{k}\t{v}\n"));
    }
    emit(common, &s)?;
    Ok(EXIT_OK)
}

const CRB_FIELDS: &[(&str, &str)] = &[
    ("convention", "FIM convention of the bound (rescaled or physical)"),
    ("crb_total_mixed", "sum of all delay and DoA bounds, s² + rad² (mixed units)"),
    ("crb_delay_s2", "sum of delay bounds, s²"),
    ("crb_doa_rad2", "sum of DoA bounds, rad²"),
    ("numeric_crb_total_mixed", "trace of the dense FIM inverse, mixed units"),
    ("closed_numeric_mismatch", "relative difference of closed form and dense inverse"),
    ("bd<l>.crb_delay_s2", "delay bound of device l, s²"),
    ("bd<l>.crb_doa_rad2", "DoA bound of device l, rad²"),
];

const RATE_FIELDS: &[(&str, &str)] = &[
    ("sum_rate_bps_hz", "BD sum rate at the covariance, bps/Hz"),
    ("power_w", "trace of the covariance, W"),
    ("gamma_max_bps_hz", "maximum sum rate at the power budget (probe lower bound), bps/Hz"),
    ("gamma_max_upper_bps_hz", "certified upper bound on the maximum sum rate, bps/Hz"),
];

const OPTIMIZE_FIELDS: &[(&str, &str)] = &[
    ("status", "optimal, infeasible or max-iterations"),
    ("gamma_th_bps_hz", "requested minimum sum rate, bps/Hz"),
    ("gamma_effective_bps_hz", "threshold enforced after boundary relaxation, bps/Hz"),
    ("boundary_relaxed", "true when Γ_th sat at Γ_max and was pulled just inside"),
    ("gamma_max_bps_hz", "maximum sum rate certificate (lower bound), bps/Hz"),
    ("gamma_max_upper_bps_hz", "maximum sum rate certificate (upper bound), bps/Hz"),
    ("achieved_rate_bps_hz", "sum rate at the optimized covariance, bps/Hz"),
    ("power_w", "trace of the optimized covariance, W"),
    ("crb_convention", "FIM convention that was minimized"),
    ("crb_total_mixed", "optimized bound, s² + rad²"),
    ("crb_delay_s2", "optimized delay bound, s²"),
    ("crb_doa_rad2", "optimized DoA bound, rad²"),
    ("crb_physical_total_mixed", "bound of the directly differentiated model, s² + rad²"),
    ("crb_physical_delay_s2", "same, delay part, s²"),
    ("crb_physical_doa_rad2", "same, DoA part, rad²"),
    ("outer_stages", "barrier stages used"),
    ("newton_iterations", "Newton steps used"),
    ("final_barrier_weight", "barrier weight t at exit"),
    ("gap_bound", "duality-gap bound θ/t relative to the starting CRB"),
    ("power_slack_w", "P_0 − Tr R_x, W"),
    ("min_eigenvalue_w", "smallest eigenvalue of R_x, W"),
    ("rate_slack_bps_hz", "achieved rate minus effective threshold, bps/Hz"),
    ("lmi_min_eigenvalue", "smallest normalized eigenvalue over the Schur LMIs"),
    ("r_x[i][j]", "covariance entry, W, as re+imj"),
];

const SWEEP_FIELDS: &[(&str, &str)] = &[
    ("gamma_th_bps_hz", "minimum sum rate threshold, bps/Hz"),
    ("crb_total_mixed", "optimized bound, s² + rad² (empty when infeasible)"),
    ("crb_delay_s2", "optimized delay bound, s²"),
    ("crb_doa_rad2", "optimized DoA bound, rad²"),
    ("achieved_rate_bps_hz", "sum rate at the optimum, bps/Hz"),
    ("status", "optimal, optimal-relaxed, infeasible or max-iterations"),
    ("seconds", "solve wall-clock time, s (0 unless --timing)"),
];

const SIMULATE_FIELDS: &[(&str, &str)] = &[
    ("trials", "Monte-Carlo trials"),
    ("power_scaling", "multiplier on the covariance"),
    ("mse_delay_s2", "delay mean squared error, s²"),
    ("mse_delay_se_s2", "standard error of the delay MSE, s²"),
    ("mse_doa_rad2", "DoA mean squared error, rad²"),
    ("mse_doa_se_rad2", "standard error of the DoA MSE, rad²"),
    ("bias_delay_s", "mean delay error, s"),
    ("bias_doa_rad", "mean DoA error, rad"),
    ("crb_delay_s2", "delay bound of the directly differentiated model, s²"),
    ("crb_doa_rad2", "DoA bound of the directly differentiated model, rad²"),
    ("crb_rescaled_delay_s2", "delay bound of the rescaled convention, s²"),
    ("crb_rescaled_doa_rad2", "DoA bound of the rescaled convention, rad²"),
    ("doa_efficiency", "mse_doa_rad2 / crb_doa_rad2"),
    ("delay_efficiency", "mse_delay_s2 / crb_delay_s2"),
    ("per-trial rows (--per-trial)", "trial, delay_error_s, doa_error_rad"),
];

const VALIDATE_FIELDS: &[(&str, &str)] = &[
    ("PASS|FAIL <check> <detail>", "one line per check; exit code 3 when any fails"),
    ("closed-form/<convention>", "closed-form CRB versus dense inverse, relative"),
    ("block-inverse/<convention>", "block (Schur) inverse versus dense inverse, relative"),
    ("derivative-energy p=<p> q=<q>", "Monte-Carlo derivative energy versus analytic"),
];

fn cmd_crb(a: CovArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, CRB_FIELDS);
    }
    let cfg = load(&a.common)?;
    let conv = a.convention.into();
    let r = covariance(&cfg, a.covariance, a.gamma_th, conv)?;
    let geo = scene_geometry(&cfg.scenario)?;
    let pc = pulse_constants(&cfg.pulse, cfg.scenario.symbol_duration, DEFAULT_QUADRATURE_POINTS)?;
    let report = evaluate_crb(&cfg.scenario, &geo, &pc, &r, conv)?;
    emit(&a.common, &report.to_record())?;
    Ok(EXIT_OK)
}

fn cmd_rate(a: CovArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, RATE_FIELDS);
    }
    let cfg = load(&a.common)?;
    let conv = a.convention.into();
    let r = covariance(&cfg, a.covariance, a.gamma_th, conv)?;
    let geo = scene_geometry(&cfg.scenario)?;
    let c = sum_rate(&cfg.scenario, &build_rate_matrix(&cfg.scenario, &geo, &r)?)?;
    let probe = feasibility_probe(&problem(&cfg, 0.0, conv)?, &cfg.file.solver)?;
    let text = format!(
        "sum_rate_bps_hz={c:e}\npower_w={:e}\ngamma_max_bps_hz={:e}\ngamma_max_upper_bps_hz={:e}\n",
        r.trace(),
        probe.gamma_max,
        probe.gamma_upper
    );
    emit(&a.common, &text)?;
    Ok(EXIT_OK)
}

fn cmd_optimize(a: OptimizeArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, OPTIMIZE_FIELDS);
    }
    let cfg = load(&a.common)?;
    let p = problem(&cfg, a.gamma_th, a.convention.into())?;
    let sol = solve(&p, &cfg.file.solver)?;
    if sol.status == SolveStatus::Infeasible {
        let gmax = sol.probe.as_ref().map(|p| p.gamma_max).unwrap_or(0.0);
        eprintln!(
            "infeasible: gamma_th={:e} exceeds gamma_max={gmax:e} bps/Hz",
            a.gamma_th
        );
        emit(&a.common, &sol.to_record())?;
        return Ok(EXIT_INFEASIBLE);
    }
    if sol.status == SolveStatus::MaxIterations {
        eprintln!("warning: solver stopped at its iteration limit");
    }
    emit(&a.common, &sol.to_record())?;
    Ok(EXIT_OK)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn point_status(p: &TradeoffPoint) -> String {
    if p.boundary_relaxed && p.status == SolveStatus::Optimal {
        "optimal-relaxed".into()
    } else {
        p.status.to_string()
    }
}

fn cmd_sweep(a: SweepArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, SWEEP_FIELDS);
    }
    let cfg = load(&a.common)?;
    let spec = match (a.grid.clone(), &cfg.file.sweep) {
        (Some(mut g), _) => {
            g.relative = a.relative;
            g
        }
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(anyhow!("no Γ_th grid: pass --grid or add a [sweep] section")),
    };
    let mut grid = spec.grid()?;
    let p = problem(&cfg, 0.0, a.convention.into())?;
    if spec.relative {
        let probe = feasibility_probe(&p, &cfg.file.solver)?;
        grid.iter_mut().for_each(|g| *g *= probe.gamma_max);
    }
    let clock = Instant::now();
    let points = if a.parallel {
        sweep_parallel(&p, &grid, &cfg.file.solver)?
    } else {
        sweep(&p, &grid, &cfg.file.solver)?
    };
    let mut w = csv::Writer::from_writer(output(&a.common)?);
    w.write_record(SWEEP_FIELDS.iter().map(|(k, _)| *k))?;
    for pt in &points {
        let seconds = if a.timing { pt.seconds } else { 0.0 };
        w.write_record([
            format!("{:e}", pt.gamma_th),
            opt_num(pt.crb_total),
            opt_num(pt.crb_delay),
            opt_num(pt.crb_doa),
            opt_num(pt.rate),
            point_status(pt),
            format!("{seconds:e}"),
        ])?;
    }
    w.flush()?;
    if a.timing {
        eprintln!("sweep: {} points in {:.3} s", points.len(), clock.elapsed().as_secs_f64());
    }
    Ok(EXIT_OK)
}

fn mse_row(m: &MseReport) -> Vec<String> {
    vec![
        m.trials.to_string(),
        format!("{:e}", m.power_scaling),
        format!("{:e}", m.mse_delay),
        format!("{:e}", m.mse_delay_se),
        format!("{:e}", m.mse_doa),
        format!("{:e}", m.mse_doa_se),
        format!("{:e}", m.bias_delay),
        format!("{:e}", m.bias_doa),
        format!("{:e}", m.crb_delay),
        format!("{:e}", m.crb_doa),
        format!("{:e}", m.crb_rescaled_delay),
        format!("{:e}", m.crb_rescaled_doa),
        format!("{:e}", m.doa_efficiency_ratio()),
        format!("{:e}", m.mse_delay / m.crb_delay),
    ]
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, SIMULATE_FIELDS);
    }
    let cfg = load(&a.common)?;
    let mut run = cfg.file.simulation;
    if let Some(t) = a.trials {
        run.trials = t;
    }
    if let Some(s) = a.power_scaling {
        run.power_scaling = s;
    }
    let r = covariance(&cfg, a.covariance, a.gamma_th, FimConvention::Rescaled)?;
    let geo = scene_geometry(&cfg.scenario)?;
    let m = mse_vs_crb(&cfg.scenario, &geo, &cfg.pulse, &r, &run)?;
    let mut w = csv::Writer::from_writer(output(&a.common)?);
    let n_agg = SIMULATE_FIELDS.len() - 1;
    w.write_record(SIMULATE_FIELDS[..n_agg].iter().map(|(k, _)| *k))?;
    w.write_record(mse_row(&m))?;
    w.flush()?;
    if a.per_trial {
        // second block: different column set, so a separate file
        let path = a
            .common
            .out
            .as_ref()
            .map(|p| p.with_extension("trials.csv"))
            .ok_or_else(|| anyhow!("--per-trial needs --out"))?;
        let mut t = csv::Writer::from_path(&path)?;
        t.write_record(["trial", "delay_error_s", "doa_error_rad"])?;
        for (i, (dt, dp)) in m.errors.iter().enumerate() {
            t.write_record([i.to_string(), format!("{dt:e}"), format!("{dp:e}")])?;
        }
        t.flush()?;
    }
    Ok(EXIT_OK)
}

fn cmd_validate(a: ValidateArgs) -> anyhow::Result<i32> {
    if a.common.describe_output {
        return describe(&a.common, VALIDATE_FIELDS);
    }
    let cfg = load(&a.common)?;
    let s = &cfg.scenario;
    let geo = scene_geometry(s)?;
    let pc = pulse_constants(&cfg.pulse, s.symbol_duration, DEFAULT_QUADRATURE_POINTS)?;
    let r = HermitianCovariance::isotropic(
        s.array.tx_antennas,
        s.power_budget / s.array.tx_antennas as f64,
    );
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |name: String, pass: bool, detail: String| {
        ok &= pass;
        lines.push(format!("{} {name} {detail}", if pass { "PASS" } else { "FAIL" }));
    };
    for conv in [FimConvention::Rescaled, FimConvention::Physical] {
        let rep = evaluate_crb(s, &geo, &pc, &r, conv)?;
        check(
            format!("closed-form/{conv}"),
            rep.mismatch <= VALIDATE_TOLERANCE,
            format!("rel={:e}", rep.mismatch),
        );
        let j = build_fim(s, &geo, &pc, &r, conv)?.assemble();
        let dense = crb_numeric(&j)?;
        let block = block_inverse(&j)?;
        let rel = (0..j.nrows())
            .map(|i| ((block[(i, i)] - dense.diagonal[i]) / dense.diagonal[i]).abs())
            .fold(0.0, f64::max);
        check(format!("block-inverse/{conv}"), rel <= VALIDATE_TOLERANCE, format!("rel={rel:e}"));
    }
    let energy = validate_derivative_energy(
        s,
        &geo,
        &cfg.pulse,
        &r,
        a.trials,
        cfg.file.simulation.seed,
        cfg.file.simulation.oversampling,
    )?;
    for e in &energy.entries {
        let detail = if e.disjoint || e.p != e.q {
            format!("z={:.3}", e.empirical / e.std_error.max(f64::MIN_POSITIVE))
        } else {
            format!("ratio={:.5}", e.empirical / e.analytic)
        };
        check(format!("derivative-energy p={} q={}", e.p, e.q), e.passed, detail);
    }
    let mut text = lines.join("\n");
    text.push('\n');
    emit(&a.common, &text)?;
    Ok(if ok { EXIT_OK } else { EXIT_VALIDATION })
}
