//! CRB minimization under power and sum-rate constraints.
//!
//! The bound `Σ_l CRB(τ_l) + CRB(φ_l)` is a sum of ratios in `R_x`. Each ratio
//! is replaced by `1/ω_l` (delay) or `1/ν_l` (DoA) where the auxiliary variable
//! is kept below its ratio by a 2x2 Schur-complement LMI; the result is
//!
//! ```text
//! minimize   Σ_l 1/ω_l + 1/ν_l
//! subject to [[ε_g F̄² f_l − ω_l/ξ_l, e g_l], [e g_l, ε_g h_l]] ⪰ 0
//!            [[ε_g h_l − c_l ν_l/ξ_l, e g_l], [e g_l, ε_g F̄² f_l]] ⪰ 0
//!            Tr R_x ≤ P_0,  R_x ⪰ 0,  C_sum(R_x) ≥ Γ_th
//! ```
//!
//! which is convex and is solved with the log-barrier method in [`barrier`].

pub mod barrier;
mod problems;

use std::time::Instant;

use log::{debug, warn};
use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::fim::{evaluate_crb, xi_coefficients, CrbReport, FimConvention};
use crate::geometry::{scene_geometry, BdGeometry, Scenario};
use crate::linalg::{hermitian_coords, hermitian_eigenvalues, CMatrix, HermitianCovariance};
use crate::pulses::PulseConstants;
use crate::rate::sum_rate_at;

use self::barrier::{minimize, BarrierSettings};
use self::problems::{CovarianceModel, CrbProblem, ProbeProblem, RateModel};

/// Relative relaxation applied when `Γ_th` sits on the feasibility boundary.
pub const BOUNDARY_RELAXATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_outer_stages: usize,
    pub max_newton_iterations: usize,
    /// Barrier weight growth per outer stage.
    pub mu_growth: f64,
    /// Relative duality-gap target for the CRB problem.
    pub tolerance: f64,
    /// Inner stop on `λ² / 2`.
    pub newton_tolerance: f64,
    /// Relative gap target for the max-rate probe.
    pub probe_tolerance: f64,
    pub warm_start: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_outer_stages: 40,
            max_newton_iterations: 200,
            mu_growth: 10.0,
            tolerance: 1e-8,
            newton_tolerance: 1e-10,
            probe_tolerance: 1e-10,
            warm_start: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IsacError::Domain(format!("solver option {m}")));
        if self.max_outer_stages == 0 || self.max_newton_iterations == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.mu_growth > 1.0) {
            return bad("mu_growth must exceed 1");
        }
        for (n, v) in [
            ("tolerance", self.tolerance),
            ("newton_tolerance", self.newton_tolerance),
            ("probe_tolerance", self.probe_tolerance),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(&format!("{n} must be positive"));
            }
        }
        Ok(())
    }

    fn settings(&self, tolerance: f64) -> BarrierSettings {
        BarrierSettings {
            t0: 1.0,
            growth: self.mu_growth,
            tolerance,
            newton_tolerance: self.newton_tolerance,
            max_stages: self.max_outer_stages,
            max_newton: self.max_newton_iterations,
        }
    }
}

/// A scenario, a pulse and a rate threshold.
#[derive(Debug, Clone)]
pub struct TradeoffProblem {
    pub scenario: Scenario,
    pub geometry: Vec<BdGeometry>,
    pub pulse: PulseConstants,
    /// Minimum sum rate, bits/s/Hz.
    pub gamma_th: f64,
    /// Convention whose bound is minimized.
    pub convention: FimConvention,
    pub xi: Vec<f64>,
    /// `c_l = 1 / κ_l²`.
    pub doa_scale: Vec<f64>,
}

impl TradeoffProblem {
    pub fn new(scenario: Scenario, pulse: PulseConstants, gamma_th: f64) -> Result<Self> {
        if !(gamma_th >= 0.0) || !gamma_th.is_finite() {
            return Err(IsacError::Domain(format!(
                "rate threshold must be finite and non-negative, got {gamma_th}"
            )));
        }
        let geometry = scene_geometry(&scenario)?;
        scenario.require_disturbance()?;
        let xi = xi_coefficients(&scenario, &geometry);
        if let Some(l) = xi.iter().position(|&x| !(x > 0.0)) {
            return Err(IsacError::SingularInformation {
                device: l,
                reason: "zero symbol amplitude, the device carries no information".into(),
            });
        }
        let doa_scale = geometry
            .iter()
            .enumerate()
            .map(|(l, g)| g.doa_scale_constant(l))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scenario,
            geometry,
            pulse,
            gamma_th,
            convention: FimConvention::Rescaled,
            xi,
            doa_scale,
        })
    }

    pub fn with_convention(mut self, convention: FimConvention) -> Self {
        self.convention = convention;
        self
    }

    pub fn with_gamma(&self, gamma_th: f64) -> Self {
        Self {
            gamma_th,
            ..self.clone()
        }
    }

    /// `(ε_g, F̄², e)` with `e` the coupling of the active convention.
    pub(crate) fn pulse_scalars(&self) -> (f64, f64, f64) {
        (self.pulse.energy, self.pulse.msb, self.convention.coupling(&self.pulse))
    }

    fn tx_antennas(&self) -> usize {
        self.scenario.array.tx_antennas
    }

    /// Coordinates of `R̃ = I / (2 M_t)`, the default start.
    fn center(&self) -> Vec<f64> {
        let n = self.tx_antennas();
        let mut c = vec![0.0; n * n];
        for v in c.iter_mut().take(n) {
            *v = 0.5 / n as f64;
        }
        c
    }

    fn covariance_from_coords(&self, coords: &[f64]) -> Result<HermitianCovariance> {
        let n = self.tx_antennas();
        let m = crate::linalg::hermitian_from_coords(n, &coords[..n * n])
            * Complex64::new(self.scenario.power_budget, 0.0);
        HermitianCovariance::new(m)
    }

    fn rate_of_coords(&self, coords: &[f64]) -> Result<f64> {
        sum_rate_at(&self.scenario, &self.geometry, &self.covariance_from_coords(coords)?)
    }
}

/// Certificate of the largest achievable sum rate at power `P_0`.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    /// Sum rate of the returned covariance, a lower bound on the maximum.
    pub gamma_max: f64,
    /// Upper bound from the barrier duality gap.
    pub gamma_upper: f64,
    pub covariance: HermitianCovariance,
    pub converged: bool,
    pub stages: usize,
}

/// Maximizes the sum rate over `Tr R_x ≤ P_0`, `R_x ⪰ 0`.
pub fn feasibility_probe(problem: &TradeoffProblem, options: &SolverOptions) -> Result<ProbeResult> {
    options.validate()?;
    let center = problem.center();
    let c0 = problem.rate_of_coords(&center)?;
    if !(c0 > 0.0) {
        return Ok(ProbeResult {
            gamma_max: 0.0,
            gamma_upper: 0.0,
            covariance: problem.covariance_from_coords(&center)?,
            converged: true,
            stages: 0,
        });
    }
    let probe = ProbeProblem {
        cov: CovarianceModel::new(problem.tx_antennas()),
        rate: RateModel::new(problem),
        scale: c0,
    };
    let out = minimize(
        &probe,
        DVector::from_vec(center),
        &options.settings(options.probe_tolerance),
    );
    let gamma_max = problem.rate_of_coords(out.x.as_slice())?;
    if !out.converged {
        warn!("max-rate probe stopped before reaching its tolerance");
    }
    Ok(ProbeResult {
        gamma_max,
        gamma_upper: gamma_max + out.gap_bound * c0,
        covariance: problem.covariance_from_coords(out.x.as_slice())?,
        converged: out.converged,
        stages: out.stages,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::MaxIterations => "max-iterations",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub outer_stages: usize,
    pub newton_iterations: usize,
    /// Final barrier weight `t` (`μ` in some texts).
    pub final_barrier_weight: f64,
    /// `θ / t`, relative to the starting CRB.
    pub gap_bound: f64,
    pub last_newton_decrement: f64,
    /// `P_0 − Tr R_x`.
    pub power_slack: f64,
    pub min_eigenvalue: f64,
    /// `C_sum − Γ_th` (effective threshold).
    pub rate_slack: f64,
    /// `(ω*_l − ω_l) / ω*_l` before the auxiliaries are moved to their boundary.
    pub omega_gap: Vec<f64>,
    pub nu_gap: Vec<f64>,
    /// Smallest eigenvalue over all final LMIs, each normalized by its diagonal.
    pub lmi_min_eigenvalue: f64,
    /// `Σ 1/ω_l + 1/ν_l` at the returned point.
    pub fp_objective: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub gamma_th: f64,
    /// Threshold actually enforced (differs only when boundary-relaxed).
    pub gamma_effective: f64,
    pub boundary_relaxed: bool,
    pub covariance: HermitianCovariance,
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    /// Closed-form bound of the optimized convention at `covariance`.
    pub crb: Option<CrbReport>,
    /// Bound from the directly differentiated model at `covariance`.
    pub crb_physical: Option<CrbReport>,
    pub rate: f64,
    pub probe: Option<ProbeResult>,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Flat `key=value` lines.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k}={v}\n"));
        put("status", self.status.to_string());
        put("gamma_th_bps_hz", format!("{:e}", self.gamma_th));
        put("gamma_effective_bps_hz", format!("{:e}", self.gamma_effective));
        put("boundary_relaxed", self.boundary_relaxed.to_string());
        if let Some(p) = &self.probe {
            put("gamma_max_bps_hz", format!("{:e}", p.gamma_max));
            put("gamma_max_upper_bps_hz", format!("{:e}", p.gamma_upper));
        }
        put("achieved_rate_bps_hz", format!("{:e}", self.rate));
        put("power_w", format!("{:e}", self.covariance.trace()));
        if let Some(c) = &self.crb {
            put("crb_convention", c.convention.to_string());
            put("crb_total_mixed", format!("{:e}", c.crb_total));
            put("crb_delay_s2", format!("{:e}", c.crb_delay));
            put("crb_doa_rad2", format!("{:e}", c.crb_doa));
        }
        if let Some(c) = &self.crb_physical {
            put("crb_physical_total_mixed", format!("{:e}", c.crb_total));
            put("crb_physical_delay_s2", format!("{:e}", c.crb_delay));
            put("crb_physical_doa_rad2", format!("{:e}", c.crb_doa));
        }
        let d = &self.diagnostics;
        put("outer_stages", d.outer_stages.to_string());
        put("newton_iterations", d.newton_iterations.to_string());
        put("final_barrier_weight", format!("{:e}", d.final_barrier_weight));
        put("gap_bound", format!("{:e}", d.gap_bound));
        put("power_slack_w", format!("{:e}", d.power_slack));
        put("min_eigenvalue_w", format!("{:e}", d.min_eigenvalue));
        put("rate_slack_bps_hz", format!("{:e}", d.rate_slack));
        put("lmi_min_eigenvalue", format!("{:e}", d.lmi_min_eigenvalue));
        let n = self.covariance.dim();
        for i in 0..n {
            for j in 0..n {
                let z = self.covariance.matrix()[(i, j)];
                put(&format!("r_x[{i}][{j}]"), format!("{:e}{:+e}j", z.re, z.im));
            }
        }
        s
    }
}

/// Schur-complement boundaries `ω*_l`, `ν*_l` at a covariance.
pub fn schur_boundaries(
    problem: &TradeoffProblem,
    r: &HermitianCovariance,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (eg, msb, e) = problem.pulse_scalars();
    let mut omega = Vec::new();
    let mut nu = Vec::new();
    for (l, geo) in problem.geometry.iter().enumerate() {
        let t = crate::fim::channel_traces(r, &geo.channel)?;
        let tau = eg * msb * t.f;
        let doa = eg * t.h;
        let cross2 = e * e * t.g.norm_sqr();
        omega.push(problem.xi[l] * (tau - cross2 / doa));
        nu.push(problem.xi[l] * (doa - cross2 / tau) / problem.doa_scale[l]);
    }
    Ok((omega, nu))
}

/// The `2L` LMI matrices at `(R_x, ω, ν)`: first family then second family.
pub fn assemble_lmis(
    problem: &TradeoffProblem,
    r: &HermitianCovariance,
    omega: &[f64],
    nu: &[f64],
) -> Result<Vec<[[f64; 2]; 2]>> {
    let l = problem.geometry.len();
    if omega.len() != l || nu.len() != l {
        return Err(IsacError::Dimension(format!(
            "need {l} auxiliary values, got {} and {}",
            omega.len(),
            nu.len()
        )));
    }
    let (eg, msb, e) = problem.pulse_scalars();
    let mut first = Vec::with_capacity(l);
    let mut second = Vec::with_capacity(l);
    for (i, geo) in problem.geometry.iter().enumerate() {
        let t = crate::fim::channel_traces(r, &geo.channel)?;
        let g = e * t.g.norm();
        let xi = problem.xi[i];
        first.push([[eg * msb * t.f - omega[i] / xi, g], [g, eg * t.h]]);
        second.push([
            [eg * t.h - problem.doa_scale[i] * nu[i] / xi, g],
            [g, eg * msb * t.f],
        ]);
    }
    first.extend(second);
    Ok(first)
}

fn normalized_min_eigenvalue(m: &[[f64; 2]; 2]) -> f64 {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let (sa, sc) = (a.abs().max(c.abs()), c.abs().max(a.abs()));
    let (a, b, c) = (a / sa, b / (sa * sc).sqrt(), c / sc);
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

/// Solves one problem, running the max-rate probe when a rate constraint is present.
pub fn solve(problem: &TradeoffProblem, options: &SolverOptions) -> Result<Solution> {
    let probe = if problem.gamma_th > 0.0 {
        Some(feasibility_probe(problem, options)?)
    } else {
        None
    };
    solve_with_probe(problem, options, probe.as_ref(), None)
}

/// Solves with a precomputed probe and an optional warm-start covariance.
pub fn solve_with_probe(
    problem: &TradeoffProblem,
    options: &SolverOptions,
    probe: Option<&ProbeResult>,
    warm: Option<&HermitianCovariance>,
) -> Result<Solution> {
    options.validate()?;
    let gamma = problem.gamma_th;
    let mut gamma_eff = gamma;
    let mut relaxed = false;
    if gamma > 0.0 {
        let p = probe.ok_or_else(|| {
            IsacError::Domain("a positive rate threshold needs the max-rate probe".into())
        })?;
        if gamma > p.gamma_upper {
            return Ok(infeasible(problem, p));
        }
        if gamma >= p.gamma_max * (1.0 - BOUNDARY_RELAXATION) {
            gamma_eff = p.gamma_max * (1.0 - BOUNDARY_RELAXATION);
            relaxed = true;
            warn!("rate threshold {gamma} is on the feasibility boundary; relaxed to {gamma_eff}");
        }
    }
    let start = start_point(problem, probe, warm, gamma_eff)?;
    let crb_problem = CrbProblem::new(problem, &start, (gamma > 0.0).then_some(gamma_eff));
    let x0 = crb_problem.start_point(&start);
    let out = minimize(&crb_problem, x0, &options.settings(options.tolerance));
    debug!(
        "barrier solve: {} stages, {} Newton steps, gap {:e}",
        out.stages, out.newton_iterations, out.gap_bound
    );

    let n = problem.tx_antennas();
    let l = problem.geometry.len();
    let covariance = problem.covariance_from_coords(&out.x.as_slice()[..n * n])?;
    let (omega_star, nu_star) = schur_boundaries(problem, &covariance)?;
    let omega_pre: Vec<f64> = (0..l).map(|i| crb_problem.omega0[i] * out.x[n * n + i]).collect();
    let nu_pre: Vec<f64> = (0..l).map(|i| crb_problem.nu0[i] * out.x[n * n + l + i]).collect();
    let omega_gap = omega_pre.iter().zip(&omega_star).map(|(w, s)| (s - w) / s).collect();
    let nu_gap = nu_pre.iter().zip(&nu_star).map(|(w, s)| (s - w) / s).collect();

    let rate = sum_rate_at(&problem.scenario, &problem.geometry, &covariance)?;
    let crb = evaluate_crb(&problem.scenario, &problem.geometry, &problem.pulse, &covariance, problem.convention)?;
    let crb_physical = evaluate_crb(
        &problem.scenario,
        &problem.geometry,
        &problem.pulse,
        &covariance,
        FimConvention::Physical,
    )?;
    let lmis = assemble_lmis(problem, &covariance, &omega_star, &nu_star)?;
    let lmi_min_eigenvalue = lmis.iter().map(normalized_min_eigenvalue).fold(f64::INFINITY, f64::min);
    let fp_objective = omega_star.iter().chain(&nu_star).map(|v| 1.0 / v).sum();
    let p0 = problem.scenario.power_budget;
    let diagnostics = Diagnostics {
        outer_stages: out.stages,
        newton_iterations: out.newton_iterations,
        final_barrier_weight: out.t,
        gap_bound: out.gap_bound,
        last_newton_decrement: out.last_decrement,
        power_slack: p0 - covariance.trace(),
        min_eigenvalue: covariance.min_eigenvalue(),
        rate_slack: rate - gamma_eff,
        omega_gap,
        nu_gap,
        lmi_min_eigenvalue,
        fp_objective,
    };
    let status = if out.converged {
        SolveStatus::Optimal
    } else {
        SolveStatus::MaxIterations
    };
    Ok(Solution {
        status,
        gamma_th: gamma,
        gamma_effective: gamma_eff,
        boundary_relaxed: relaxed,
        covariance,
        omega: omega_star,
        nu: nu_star,
        crb: Some(crb),
        crb_physical: Some(crb_physical),
        rate,
        probe: probe.cloned(),
        diagnostics,
    })
}

fn infeasible(problem: &TradeoffProblem, probe: &ProbeResult) -> Solution {
    let rate = sum_rate_at(&problem.scenario, &problem.geometry, &probe.covariance).unwrap_or(probe.gamma_max);
    Solution {
        status: SolveStatus::Infeasible,
        gamma_th: problem.gamma_th,
        gamma_effective: problem.gamma_th,
        boundary_relaxed: false,
        covariance: probe.covariance.clone(),
        omega: Vec::new(),
        nu: Vec::new(),
        crb: None,
        crb_physical: None,
        rate,
        probe: Some(probe.clone()),
        diagnostics: Diagnostics::default(),
    }
}

/// Strictly feasible start: the warm start or the isotropic point, blended
/// toward the probe's max-rate covariance when the rate constraint demands it.
fn start_point(
    problem: &TradeoffProblem,
    probe: Option<&ProbeResult>,
    warm: Option<&HermitianCovariance>,
    gamma: f64,
) -> Result<Vec<f64>> {
    let center = problem.center();
    let p0 = problem.scenario.power_budget;
    let mut base = center.clone();
    if let Some(w) = warm {
        let coords = hermitian_coords(&(w.matrix() / Complex64::new(p0, 0.0)));
        let blended: Vec<f64> = coords.iter().zip(&center).map(|(a, b)| 0.9 * a + 0.1 * b).collect();
        if blended_interior(problem, &blended) {
            base = blended;
        }
    }
    if gamma <= 0.0 {
        return Ok(base);
    }
    let c_base = problem.rate_of_coords(&base)?;
    if c_base > gamma {
        return Ok(base);
    }
    let p = probe.expect("probe present whenever gamma > 0");
    let star = hermitian_coords(&(p.covariance.matrix() / Complex64::new(p0, 0.0)));
    // concavity: C(λ R* + (1−λ) R) ≥ λ Γ_max + (1−λ) C(R)
    let target = gamma + 0.5 * (p.gamma_max - gamma);
    let mut lambda = ((target - c_base) / (p.gamma_max - c_base)).clamp(0.0, 1.0);
    for _ in 0..64 {
        let mix: Vec<f64> = star.iter().zip(&base).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        if problem.rate_of_coords(&mix)? > gamma && blended_interior(problem, &mix) {
            return Ok(mix);
        }
        lambda = 0.5 * (1.0 + lambda);
    }
    Err(IsacError::Domain(format!(
        "no strictly feasible start found for rate threshold {gamma}"
    )))
}

fn blended_interior(problem: &TradeoffProblem, coords: &[f64]) -> bool {
    let n = problem.tx_antennas();
    let m: CMatrix = crate::linalg::hermitian_from_coords(n, coords);
    m.trace().re < 1.0 && hermitian_eigenvalues(&m).min() > 0.0
}

/// One point of the CRB / rate trade-off.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub gamma_th: f64,
    pub crb_total: Option<f64>,
    pub crb_delay: Option<f64>,
    pub crb_doa: Option<f64>,
    pub rate: Option<f64>,
    pub status: SolveStatus,
    pub boundary_relaxed: bool,
    pub gamma_max: Option<f64>,
    pub seconds: f64,
}

impl TradeoffPoint {
    fn from_solution(s: &Solution, seconds: f64) -> Self {
        let ok = s.status != SolveStatus::Infeasible;
        Self {
            gamma_th: s.gamma_th,
            crb_total: s.crb.as_ref().map(|c| c.crb_total),
            crb_delay: s.crb.as_ref().map(|c| c.crb_delay),
            crb_doa: s.crb.as_ref().map(|c| c.crb_doa),
            rate: ok.then_some(s.rate),
            status: s.status,
            boundary_relaxed: s.boundary_relaxed,
            gamma_max: s.probe.as_ref().map(|p| p.gamma_max),
            seconds,
        }
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(IsacError::Domain("rate grid values must be finite and non-negative".into()));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(IsacError::Domain("rate grid must be sorted ascending".into()));
    }
    Ok(())
}

/// Sequential sweep over an ascending grid, warm-starting each point from the
/// previous optimum when enabled.
pub fn sweep(
    problem: &TradeoffProblem,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<Vec<TradeoffPoint>> {
    check_grid(grid)?;
    let probe = if grid.iter().any(|&g| g > 0.0) {
        Some(feasibility_probe(problem, options)?)
    } else {
        None
    };
    let mut prev: Option<HermitianCovariance> = None;
    let mut out = Vec::with_capacity(grid.len());
    for &gamma in grid {
        let clock = Instant::now();
        let p = problem.with_gamma(gamma);
        let warm = if options.warm_start { prev.as_ref() } else { None };
        let s = solve_with_probe(&p, options, probe.as_ref(), warm)?;
        if s.status == SolveStatus::Optimal {
            prev = Some(s.covariance.clone());
        }
        out.push(TradeoffPoint::from_solution(&s, clock.elapsed().as_secs_f64()));
    }
    Ok(out)
}

/// Sweep with points solved concurrently; warm starts are disabled.
pub fn sweep_parallel(
    problem: &TradeoffProblem,
    grid: &[f64],
    options: &SolverOptions,
) -> Result<Vec<TradeoffPoint>> {
    check_grid(grid)?;
    let probe = if grid.iter().any(|&g| g > 0.0) {
        Some(feasibility_probe(problem, options)?)
    } else {
        None
    };
    grid.par_iter()
        .map(|&gamma| {
            let clock = Instant::now();
            let s = solve_with_probe(&problem.with_gamma(gamma), options, probe.as_ref(), None)?;
            Ok(TradeoffPoint::from_solution(&s, clock.elapsed().as_secs_f64()))
        })
        .collect()
}
