//! Sample-level Monte Carlo: excitation sampling, received-signal synthesis on
//! an oversampled grid, an empirical check of the per-device derivative
//! energies behind the FIM, and a grid-search ML estimator benchmarked against
//! the CRB.
//!
//! Time is sampled at the midpoints `t_i = (i + ½) δ` of a grid with step
//! `δ = Δt / K`. Each fine sample carries disturbance variance
//! `K (σ_c² + σ_z²)`, so the information per unit time equals that of the
//! symbol-rate model (`K = 1`).

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::fim::{evaluate_crb, FimConvention};
use crate::geometry::{steering_rx, steering_tx, BdGeometry, Scenario};
use crate::linalg::{psd_sqrt_factor, CMatrix, CVector, HermitianCovariance};
use crate::pulses::{pulse_constants, PulseShape, DEFAULT_QUADRATURE_POINTS};

/// Monte-Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationRun {
    pub seed: u64,
    pub trials: usize,
    /// Multiplier on the excitation covariance (and so on `P_0`).
    pub power_scaling: f64,
    /// Oversampling factor `K = Δt / δ`.
    pub oversampling: usize,
    /// Multiplies every propagation delay so that delays span several symbols.
    pub delay_scale: f64,
    /// Final delay grid step of the ML search, seconds.
    pub delay_resolution: f64,
    /// Final DoA grid step of the ML search, radians.
    pub doa_resolution: f64,
}

impl Default for SimulationRun {
    fn default() -> Self {
        Self {
            seed: 1,
            trials: 500,
            power_scaling: 1.0,
            oversampling: 8,
            delay_scale: 1.0,
            delay_resolution: 5e-13,
            doa_resolution: 1e-6,
        }
    }
}

impl SimulationRun {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(IsacError::Domain(m));
        if self.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if self.oversampling == 0 {
            return bad("oversampling must be at least 1".into());
        }
        for (n, v) in [
            ("power_scaling", self.power_scaling),
            ("delay_scale", self.delay_scale),
            ("delay_resolution", self.delay_resolution),
            ("doa_resolution", self.doa_resolution),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{n} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Deterministic generator for one `(seed, trial)` pair.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

fn cscg<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// `N` i.i.d. CSCG columns with covariance `R_x`.
pub fn sample_excitation_with<R: Rng + ?Sized>(
    r: &HermitianCovariance,
    n: usize,
    rng: &mut R,
) -> CMatrix {
    let b = psd_sqrt_factor(r.matrix());
    let m = r.dim();
    let w = CMatrix::from_fn(m, n, |_, _| cscg(rng, 1.0));
    b * w
}

pub fn sample_excitation(r: &HermitianCovariance, n: usize, seed: u64) -> CMatrix {
    sample_excitation_with(r, n, &mut trial_rng(seed, 0))
}

/// The oversampled time axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub symbol_duration: f64,
    pub oversampling: usize,
    pub samples: usize,
}

impl TimeGrid {
    pub fn step(&self) -> f64 {
        self.symbol_duration / self.oversampling as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.step()
    }
}

/// Oversampling factor for a requested delay grid; must divide `Δt`.
pub fn oversampling_for(symbol_duration: f64, sim_delay_grid: f64) -> Result<usize> {
    let ratio = symbol_duration / sim_delay_grid;
    let k = ratio.round();
    if !(sim_delay_grid > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
        return Err(IsacError::Config {
            path: "simulation.sim_delay_grid".into(),
            message: format!(
                "delay grid {sim_delay_grid:e} s must divide the symbol duration {symbol_duration:e} s"
            ),
        });
    }
    Ok(k as usize)
}

/// Copies of the geometries with every delay multiplied by `factor`.
pub fn scaled_delays(geometry: &[BdGeometry], factor: f64) -> Vec<BdGeometry> {
    geometry
        .iter()
        .map(|g| {
            let mut g = g.clone();
            g.tau_tx *= factor;
            g.tau_rx *= factor;
            g.tau_total *= factor;
            g
        })
        .collect()
}

/// Received samples plus what produced them.
#[derive(Debug, Clone)]
pub struct ReceivedSignal {
    /// `M_r x T`.
    pub samples: CMatrix,
    pub noiseless: CMatrix,
    pub grid: TimeGrid,
    /// Delays rounded to the simulation grid, seconds.
    pub delays: Vec<f64>,
}

/// Transmit-beam projection `z[n] = a_t(θ)ᵀ x[n]`.
fn project(symbols: &CMatrix, geo: &BdGeometry, scenario: &Scenario) -> Vec<Complex64> {
    let at = steering_tx(geo.dod, &scenario.array);
    (0..symbols.ncols())
        .map(|n| (0..at.len()).map(|k| at[k] * symbols[(k, n)]).sum())
        .collect()
}

/// `b[i] = Σ_n z[n] g(t_i − τ − nΔt)`; pulses do not overlap so one `n` is active.
fn delayed_waveform(z: &[Complex64], pulse: &PulseShape, grid: &TimeGrid, tau: f64) -> Vec<Complex64> {
    let dt = grid.symbol_duration;
    (0..grid.samples)
        .map(|i| {
            let s = grid.time(i) - tau;
            if s < 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let n = (s / dt).floor() as usize;
            if n >= z.len() {
                return Complex64::new(0.0, 0.0);
            }
            z[n] * pulse.shape(s / dt - n as f64)
        })
        .collect()
}

fn window_samples(scenario: &Scenario, delays: &[f64], k: usize) -> usize {
    let dt = scenario.symbol_duration;
    let max_tau = delays.iter().cloned().fold(0.0, f64::max);
    k * (scenario.symbols_per_slot + (max_tau / dt).ceil() as usize + 1)
}

/// Synthesizes `y(t) = Σ_l s_l α_l H_l x(t − τ_l) + c(t) + z(t)` on the grid.
pub fn synthesize_received_with<R: Rng + ?Sized>(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    symbols: &CMatrix,
    pulse: &PulseShape,
    sim_delay_grid: f64,
    rng: &mut R,
) -> Result<ReceivedSignal> {
    let k = oversampling_for(scenario.symbol_duration, sim_delay_grid)?;
    if symbols.nrows() != scenario.array.tx_antennas {
        return Err(IsacError::Dimension(format!(
            "symbols have {} rows for {} transmit antennas",
            symbols.nrows(),
            scenario.array.tx_antennas
        )));
    }
    let delta = scenario.symbol_duration / k as f64;
    let delays: Vec<f64> = geometry.iter().map(|g| (g.tau_total / delta).round() * delta).collect();
    let grid = TimeGrid {
        symbol_duration: scenario.symbol_duration,
        oversampling: k,
        samples: window_samples(scenario, &delays, k),
    };
    let m_r = scenario.array.rx_antennas;
    let mut clean = CMatrix::zeros(m_r, grid.samples);
    for ((geo, dev), &tau) in geometry.iter().zip(&scenario.devices).zip(&delays) {
        let gain = dev.symbol * geo.alpha;
        if gain == 0.0 {
            continue;
        }
        let ar = steering_rx(geo.doa, &scenario.array);
        let b = delayed_waveform(&project(symbols, geo, scenario), pulse, &grid, tau);
        for (i, bi) in b.iter().enumerate() {
            if bi.norm_sqr() == 0.0 {
                continue;
            }
            for m in 0..m_r {
                clean[(m, i)] += ar[m] * bi * gain;
            }
        }
    }
    let (vc, vz) = (k as f64 * scenario.clutter_power, k as f64 * scenario.noise_power);
    let mut samples = clean.clone();
    for i in 0..grid.samples {
        for m in 0..m_r {
            samples[(m, i)] += cscg(rng, vc);
        }
    }
    for i in 0..grid.samples {
        for m in 0..m_r {
            samples[(m, i)] += cscg(rng, vz);
        }
    }
    Ok(ReceivedSignal {
        samples,
        noiseless: clean,
        grid,
        delays,
    })
}

pub fn synthesize_received(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    symbols: &CMatrix,
    pulse: &PulseShape,
    sim_delay_grid: f64,
    seed: u64,
) -> Result<ReceivedSignal> {
    synthesize_received_with(scenario, geometry, symbols, pulse, sim_delay_grid, &mut trial_rng(seed, 0))
}

/// Empirical versus analytic derivative energy for one device pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyEntry {
    pub p: usize,
    pub q: usize,
    pub empirical: f64,
    pub std_error: f64,
    pub analytic: f64,
    /// `true` when the two delayed pulses never overlap, so the analytic value is 0.
    pub disjoint: bool,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct EnergyReport {
    pub trials: usize,
    pub oversampling: usize,
    pub entries: Vec<EnergyEntry>,
    /// Per device: empirical `E Re[(H ẋ)ᴴ (j Λ H x)]` (scaled as the entries),
    /// its standard error, and the rescaled cross value `Δt N Re[ε_ġ g]`.
    pub delay_doa_cross: Vec<(f64, f64, f64)>,
}

impl EnergyReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `∫ ġ*(s) ġ(s − lag) ds` by Simpson over the overlap of the two supports.
fn derivative_correlation(pulse: &PulseShape, dt: f64, lag: f64) -> Complex64 {
    let lam = lag / dt;
    let (lo, hi) = (lam.max(0.0), (1.0 + lam).min(1.0));
    if hi <= lo {
        return Complex64::new(0.0, 0.0);
    }
    let n = DEFAULT_QUADRATURE_POINTS;
    let h = (hi - lo) / n as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += pulse.shape_derivative(u).conj() * pulse.shape_derivative((u - lam).clamp(0.0, 1.0)) * w;
    }
    // d/dt = (1/Δt) d/du twice, ds = Δt du
    acc * (h / 3.0) / dt
}

/// Monte-Carlo check of
/// `E Re Σ_m (H_p ∂x/∂n_p)ᴴ (H_q ∂x/∂n_q) = ε_g F̄² N Δt Tr(H_p R_x H_pᴴ)` for
/// `p = q` and `0` for non-overlapping delays, with `∂x/∂n = Δt ẋ`.
///
/// Derivatives are central differences of the pulse across each fine sample.
pub fn validate_derivative_energy(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    pulse: &PulseShape,
    r: &HermitianCovariance,
    trials: usize,
    seed: u64,
    oversampling: usize,
) -> Result<EnergyReport> {
    if trials < 2 || oversampling == 0 {
        return Err(IsacError::Domain("need at least 2 trials and oversampling ≥ 1".into()));
    }
    let dt = scenario.symbol_duration;
    let n_sym = scenario.symbols_per_slot;
    let k = oversampling;
    let delta = dt / k as f64;
    let pc = pulse_constants(pulse, dt, DEFAULT_QUADRATURE_POINTS)?;
    let delays: Vec<f64> = geometry.iter().map(|g| (g.tau_total / delta).round() * delta).collect();
    let grid = TimeGrid {
        symbol_duration: dt,
        oversampling: k,
        samples: window_samples(scenario, &delays, k),
    };
    let l = geometry.len();
    let ar: Vec<CVector> = geometry.iter().map(|g| steering_rx(g.doa, &scenario.array)).collect();
    let lam_gain: Vec<f64> = (0..l)
        .map(|p| {
            (0..ar[p].len()).map(|m| m as f64 * ar[p][m].norm_sqr()).sum()
        })
        .collect();

    // pulse derivative by central difference over [t_i − δ/2, t_i + δ/2]
    let fd = |s: f64| -> (Complex64, Complex64) {
        if s < 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let n = (s / dt).floor();
        let u = s / dt - n;
        let h = 0.5 / k as f64;
        let d = (pulse.shape((u + h).min(1.0)) - pulse.shape((u - h).max(0.0))) / delta;
        (d, pulse.shape(u))
    };

    let per_trial: Vec<(Vec<f64>, Vec<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(seed, trial);
            let x = sample_excitation_with(r, n_sym, &mut rng);
            let z: Vec<Vec<Complex64>> = geometry.iter().map(|g| project(&x, g, scenario)).collect();
            // per device: ẋ projection and x projection at every sample
            let mut d = vec![vec![Complex64::new(0.0, 0.0); grid.samples]; l];
            let mut v = vec![vec![Complex64::new(0.0, 0.0); grid.samples]; l];
            for p in 0..l {
                for i in 0..grid.samples {
                    let s = grid.time(i) - delays[p];
                    if s < 0.0 {
                        continue;
                    }
                    let n = (s / dt).floor() as usize;
                    if n >= n_sym {
                        continue;
                    }
                    let (gd, g) = fd(s);
                    d[p][i] = z[p][n] * gd;
                    v[p][i] = z[p][n] * g;
                }
            }
            let mut pairs = Vec::with_capacity(l * l);
            for p in 0..l {
                for q in 0..l {
                    let steer = ar[p].dotc(&ar[q]);
                    let acc: Complex64 = (0..grid.samples).map(|i| d[p][i].conj() * d[q][i]).sum();
                    pairs.push((steer * acc).re * delta * dt);
                }
            }
            // Re[(H ẋ)ᴴ (j Λ H x)] = Re[j Σ_m m |a_r,m|² ẋ* x] with z folded in
            let cross = (0..l)
                .map(|p| {
                    let acc: Complex64 = (0..grid.samples).map(|i| d[p][i].conj() * v[p][i]).sum();
                    (Complex64::new(0.0, lam_gain[p]) * acc).re * delta * dt
                })
                .collect();
            (pairs, cross)
        })
        .collect();

    let mut entries = Vec::with_capacity(l * l);
    for p in 0..l {
        for q in 0..l {
            let samples: Vec<f64> = per_trial.iter().map(|t| t.0[p * l + q]).collect();
            let (mean, se) = mean_and_se(&samples);
            let hp = &geometry[p].channel;
            let hq = &geometry[q].channel;
            let lag = delays[q] - delays[p];
            let disjoint = p != q && lag.abs() >= dt;
            let analytic = if p == q {
                let f = crate::fim::channel_traces(r, hp)?.f;
                pc.energy * pc.msb * n_sym as f64 * dt * f
            } else if disjoint {
                0.0
            } else {
                let tr = crate::linalg::trace_product(&(hp.adjoint() * hq), r.matrix());
                (tr * derivative_correlation(pulse, dt, lag)).re * n_sym as f64 * dt
            };
            let passed = if p == q {
                analytic == 0.0 && mean == 0.0 || (mean / analytic - 1.0).abs() <= 0.02
            } else {
                (mean - analytic).abs() <= 3.0 * se.max(f64::MIN_POSITIVE)
                    || (mean == 0.0 && analytic == 0.0)
            };
            entries.push(EnergyEntry { p, q, empirical: mean, std_error: se, analytic, disjoint, passed });
        }
    }
    let delay_doa_cross = (0..l)
        .map(|p| {
            let samples: Vec<f64> = per_trial.iter().map(|t| t.1[p]).collect();
            let (mean, se) = mean_and_se(&samples);
            let g = crate::fim::channel_traces(r, &geometry[p].channel).map(|t| t.g)?;
            let rescaled = (pc.cross * g).re * n_sym as f64 * dt;
            Ok((mean, se, rescaled))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnergyReport { trials, oversampling: k, entries, delay_doa_cross })
}

/// Search window and final resolution of the ML grid search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationGrid {
    pub delay_center: f64,
    pub delay_halfwidth: f64,
    pub delay_resolution: f64,
    pub doa_center: f64,
    pub doa_halfwidth: f64,
    pub doa_resolution: f64,
}

/// Points per axis at every refinement level.
const GRID_POINTS: i64 = 10;
const ZOOM: f64 = 10.0;

/// Steps from coarse to fine: `res · ZOOM^j`, the coarsest still giving at
/// least `GRID_POINTS` points per side of the window.
fn level_steps(resolution: f64, halfwidth: f64) -> Vec<f64> {
    let mut steps = vec![resolution];
    while steps[steps.len() - 1] * ZOOM * GRID_POINTS as f64 <= halfwidth {
        let s = steps[steps.len() - 1] * ZOOM;
        steps.push(s);
    }
    steps.reverse();
    steps
}

/// Lattice `{k · step}` restricted to `[lo, hi]`.
fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let a = (lo / step).ceil() as i64;
    let b = (hi / step).floor() as i64;
    (a..=b).map(|k| k as f64 * step).collect()
}

/// Maximizes the Gaussian log-likelihood `2 Re⟨Y, μ⟩ − ‖μ‖²` of a single BD over
/// delay and DoA with the symbols, amplitude and DoD known.
///
/// The search is coarse to fine: each level evaluates the full product grid
/// around the incumbent, and every level's points lie on the final lattice
/// (multiples of the final resolutions), so on-lattice truths are reachable.
pub fn ml_estimate_single_bd(
    received: &ReceivedSignal,
    scenario: &Scenario,
    geometry: &BdGeometry,
    symbols: &CMatrix,
    pulse: &PulseShape,
    grid: &EstimationGrid,
) -> Result<(f64, f64)> {
    if scenario.num_devices() != 1 {
        return Err(IsacError::Domain("the ML estimator handles a single BD".into()));
    }
    let gain = scenario.devices[0].symbol * geometry.alpha;
    let z = project(symbols, geometry, scenario);
    let m_r = scenario.array.rx_antennas;
    let y = &received.samples;
    let loglik = |tau: f64, phis: &[f64]| -> Vec<f64> {
        let b = delayed_waveform(&z, pulse, &received.grid, tau);
        // u = Y conj(b)
        let mut u = CVector::zeros(m_r);
        let mut energy = 0.0;
        for (i, bi) in b.iter().enumerate() {
            if bi.norm_sqr() == 0.0 {
                continue;
            }
            energy += bi.norm_sqr();
            let c = bi.conj();
            for m in 0..m_r {
                u[m] += y[(m, i)] * c;
            }
        }
        phis.iter()
            .map(|&phi| {
                let ar = steering_rx(phi, &scenario.array);
                2.0 * gain * ar.dotc(&u).re - gain * gain * m_r as f64 * energy
            })
            .collect()
    };
    let delay_steps = level_steps(grid.delay_resolution, grid.delay_halfwidth);
    let doa_steps = level_steps(grid.doa_resolution, grid.doa_halfwidth);
    let depth = delay_steps.len().max(doa_steps.len());
    let pick = |steps: &[f64], j: usize| steps[(j + steps.len()).saturating_sub(depth).min(steps.len() - 1)];
    let levels: Vec<(f64, f64)> = (0..depth).map(|j| (pick(&delay_steps, j), pick(&doa_steps, j))).collect();
    let mut best = (grid.delay_center, grid.doa_center, f64::NEG_INFINITY);
    let (mut tc, mut pc, mut tw, mut pw) =
        (grid.delay_center, grid.doa_center, grid.delay_halfwidth, grid.doa_halfwidth);
    for (dstep, pstep) in levels {
        let taus = lattice(tc - tw, tc + tw, dstep);
        let phis = lattice(pc - pw, pc + pw, pstep);
        let mut level_best = (tc, pc, f64::NEG_INFINITY);
        for &tau in &taus {
            for (phi, v) in phis.iter().zip(loglik(tau, &phis)) {
                if v > level_best.2 {
                    level_best = (tau, *phi, v);
                }
            }
        }
        if level_best.2 >= best.2 {
            best = level_best;
        }
        tc = best.0;
        pc = best.1;
        tw = dstep;
        pw = pstep;
    }
    Ok((best.0, best.1))
}

/// MSE of the ML estimates over the trials next to the bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct MseReport {
    pub trials: usize,
    pub power_scaling: f64,
    pub mse_delay: f64,
    pub mse_doa: f64,
    /// Standard errors of the two MSE estimates.
    pub mse_delay_se: f64,
    pub mse_doa_se: f64,
    pub bias_delay: f64,
    pub bias_doa: f64,
    /// Bounds of the directly differentiated model at the scaled covariance.
    pub crb_delay: f64,
    pub crb_doa: f64,
    pub crb_rescaled_delay: f64,
    pub crb_rescaled_doa: f64,
    /// Per trial `(τ̂ − τ, φ̂ − φ)`.
    pub errors: Vec<(f64, f64)>,
}

impl MseReport {
    /// `mse_doa / crb_doa`.
    pub fn doa_efficiency_ratio(&self) -> f64 {
        self.mse_doa / self.crb_doa
    }
}

/// Repeats synthesis and ML estimation; trial `t` uses stream `t` of the seed.
pub fn mse_vs_crb(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    pulse: &PulseShape,
    r: &HermitianCovariance,
    run: &SimulationRun,
) -> Result<MseReport> {
    run.validate()?;
    if scenario.num_devices() != 1 {
        return Err(IsacError::Domain("MSE benchmark needs exactly one BD".into()));
    }
    let r = r.scaled(run.power_scaling);
    let pc = pulse_constants(pulse, scenario.symbol_duration, DEFAULT_QUADRATURE_POINTS)?;
    let phys = evaluate_crb(scenario, geometry, &pc, &r, FimConvention::Physical)?;
    let rescaled = evaluate_crb(scenario, geometry, &pc, &r, FimConvention::Rescaled)?;
    let geo = scaled_delays(geometry, run.delay_scale);
    let delta = scenario.symbol_duration / run.oversampling as f64;
    let tau_true = (geo[0].tau_total / delta).round() * delta;
    let phi_true = geo[0].doa;
    // ULA responses depend on sin φ only, so the search stays in the half-plane of the truth
    let grid = EstimationGrid {
        delay_center: tau_true,
        delay_halfwidth: 0.5 * scenario.symbol_duration,
        delay_resolution: run.delay_resolution,
        doa_center: phi_true,
        // half the distance to the nearest endfire direction, at most 0.2 rad
        doa_halfwidth: (0.5 * phi_true.cos().abs().asin()).min(0.2),
        doa_resolution: run.doa_resolution,
    };
    let errors: Vec<(f64, f64)> = (0..run.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(run.seed, trial);
            let x = sample_excitation_with(&r, scenario.symbols_per_slot, &mut rng);
            let rx = synthesize_received_with(scenario, &geo, &x, pulse, delta, &mut rng)?;
            let (t, p) = ml_estimate_single_bd(&rx, scenario, &geo[0], &x, pulse, &grid)?;
            Ok((t - tau_true, p - phi_true))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = errors.len() as f64;
    let sq = |f: &dyn Fn(&(f64, f64)) -> f64| -> (f64, f64) {
        let v: Vec<f64> = errors.iter().map(|e| f(e).powi(2)).collect();
        mean_and_se(&v)
    };
    let (mse_delay, mse_delay_se) = sq(&|e| e.0);
    let (mse_doa, mse_doa_se) = sq(&|e| e.1);
    let bias_delay = errors.iter().map(|e| e.0).sum::<f64>() / n;
    let bias_doa = errors.iter().map(|e| e.1).sum::<f64>() / n;
    let report = MseReport {
        trials: run.trials,
        power_scaling: run.power_scaling,
        mse_delay,
        mse_doa,
        mse_delay_se,
        mse_doa_se,
        bias_delay,
        bias_doa,
        crb_delay: phys.crb_delay,
        crb_doa: phys.crb_doa,
        crb_rescaled_delay: rescaled.crb_delay,
        crb_rescaled_doa: rescaled.crb_doa,
        errors,
    };
    let ratio = report.doa_efficiency_ratio();
    if !(1.0..=10.0).contains(&ratio) {
        warn!("DoA MSE is {ratio:.3} x CRB, outside the [1, 10] heuristic band");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scene_geometry, ArrayConfig, BackscatterDevice, Position};

    fn scenario(devices: &[(f64, f64)]) -> Scenario {
        Scenario {
            tx: Position::new(0.0, 0.0),
            rx: Position::new(2.0, -1.5),
            array: ArrayConfig { tx_antennas: 4, rx_antennas: 4, spacing_ratio: 0.5 },
            devices: devices
                .iter()
                .map(|&(x, y)| BackscatterDevice { position: Position::new(x, y), symbol: 1.0, reflection: 1.0 })
                .collect(),
            pathloss_ref: 1e-3,
            pathloss_exponent: 2.7,
            clutter_power: 1e-9,
            noise_power: 1e-9,
            symbol_duration: 5e-7,
            symbols_per_slot: 32,
            response_delay: 0.0,
            power_budget: 1.0,
        }
    }

    #[test]
    fn excitation_statistics() {
        let r = HermitianCovariance::isotropic(4, 4.0);
        let x = sample_excitation(&r, 100_000, 7);
        let emp = &x * x.adjoint() / Complex64::new(100_000.0, 0.0);
        let err = (&emp - r.matrix()).norm() / r.matrix().norm();
        assert!(err < 0.02, "{err}");
        assert_eq!(sample_excitation(&HermitianCovariance::zeros(3), 10, 1).norm(), 0.0);
        let v = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)]);
        let r1 = HermitianCovariance::new(&v * v.adjoint()).unwrap();
        let x = sample_excitation(&r1, 20, 3);
        for n in 0..20 {
            let c = x.column(n);
            assert!((c[1] - c[0] * Complex64::new(0.0, 2.0)).norm() < 1e-12 * c.norm().max(1.0));
        }
        assert_eq!(sample_excitation(&r, 16, 9), sample_excitation(&r, 16, 9));
    }

    #[test]
    fn noiseless_synthesis_matches_model() {
        let sc = scenario(&[(1.5, -0.5)]);
        let geo = scaled_delays(&scene_geometry(&sc).unwrap(), 200.0);
        let x = sample_excitation(&HermitianCovariance::isotropic(4, 1.0), sc.symbols_per_slot, 5);
        let pulse = PulseShape::Linear;
        let rx = synthesize_received(&sc, &geo, &x, &pulse, sc.symbol_duration, 1).unwrap();
        let n_tau = (rx.delays[0] / sc.symbol_duration).round() as usize;
        assert_eq!(n_tau, (geo[0].tau_total / sc.symbol_duration).round() as usize);
        assert!(n_tau >= 3);
        let g = pulse.shape(0.5);
        for m in n_tau..n_tau + sc.symbols_per_slot {
            let expect = &geo[0].channel * x.column(m - n_tau) * (g * geo[0].alpha);
            let got = rx.noiseless.column(m);
            assert!((got - &expect).norm() < 1e-12 * expect.norm());
        }
        assert!(rx.noiseless.column(0).norm() == 0.0);
    }

    #[test]
    fn noise_variance_additivity() {
        let mut sc = scenario(&[(1.5, -0.5)]);
        sc.devices[0].symbol = 0.0;
        let geo = scene_geometry(&sc).unwrap();
        let x = sample_excitation(&HermitianCovariance::isotropic(4, 1.0), sc.symbols_per_slot, 5);
        let var = |sc: &Scenario| {
            let mut acc = 0.0;
            let mut count = 0.0;
            for seed in 0..20 {
                let rx = synthesize_received(sc, &geo, &x, &PulseShape::Cosine, sc.symbol_duration / 4.0, seed).unwrap();
                assert_eq!(rx.noiseless.norm(), 0.0);
                acc += (&rx.samples - &rx.noiseless).norm_squared();
                count += rx.samples.len() as f64;
            }
            acc / count
        };
        let v1 = var(&sc);
        assert!((v1 / (4.0 * 2e-9) - 1.0).abs() < 0.03);
        sc.noise_power *= 2.0;
        let v2 = var(&sc);
        assert!((v2 / v1 - 1.5).abs() < 0.05);
        sc.clutter_power = 0.0;
        let v3 = var(&sc);
        assert!((v3 / (4.0 * 2e-9) - 1.0).abs() < 0.03);
    }

    #[test]
    fn bad_delay_grid() {
        let sc = scenario(&[(1.5, -0.5)]);
        let geo = scene_geometry(&sc).unwrap();
        let x = CMatrix::zeros(4, sc.symbols_per_slot);
        let err = synthesize_received(&sc, &geo, &x, &PulseShape::Cosine, 3e-7, 0).unwrap_err();
        assert!(matches!(err, IsacError::Config { .. }));
    }

    #[test]
    fn derivative_energy_zero_covariance() {
        let sc = scenario(&[(1.5, -0.5), (1.2, -1.0)]);
        let geo = scene_geometry(&sc).unwrap();
        let rep = validate_derivative_energy(&sc, &geo, &PulseShape::Cosine, &HermitianCovariance::zeros(4), 4, 1, 4).unwrap();
        assert!(rep.entries.iter().all(|e| e.empirical == 0.0 && e.analytic == 0.0 && e.passed));
    }

    #[test]
    fn derivative_energy_small_run() {
        let sc = scenario(&[(1.5, -0.5), (1.2, -1.0)]);
        let geo = scaled_delays(&scene_geometry(&sc).unwrap(), 300.0);
        let rep = validate_derivative_energy(&sc, &geo, &PulseShape::Linear, &HermitianCovariance::isotropic(4, 1.0), 400, 2, 8).unwrap();
        let diag = &rep.entries[0];
        assert!((diag.empirical / diag.analytic - 1.0).abs() < 0.05, "{diag:?}");
        assert!(rep.delay_doa_cross.iter().all(|c| c.0.abs() < 1e-12 * diag.analytic));
    }

    #[test]
    fn derivative_correlation_at_zero_lag_is_msb_energy() {
        let pc = pulse_constants(&PulseShape::Cosine, 5e-7, 4096).unwrap();
        let a = derivative_correlation(&PulseShape::Cosine, 5e-7, 0.0);
        assert!((a.re - pc.energy * pc.msb).abs() < 1e-9 * a.re);
        assert_eq!(derivative_correlation(&PulseShape::Cosine, 5e-7, 6e-7).norm(), 0.0);
    }

    #[test]
    fn ml_recovers_noiseless_on_grid_truth() {
        let mut sc = scenario(&[(1.5, -0.5)]);
        sc.clutter_power = 0.0;
        sc.noise_power = 0.0;
        let k = 4;
        let delta = sc.symbol_duration / k as f64;
        let geo = scaled_delays(&scene_geometry(&sc).unwrap(), 100.0);
        let x = sample_excitation(&HermitianCovariance::isotropic(4, 1.0), sc.symbols_per_slot, 11);
        let rx = synthesize_received(&sc, &geo, &x, &PulseShape::Sinc, delta, 0).unwrap();
        let res_phi = 1e-4;
        let phi_grid = (geo[0].doa / res_phi).round() * res_phi;
        let mut g2 = geo.clone();
        g2[0].doa = phi_grid;
        g2[0].channel = crate::geometry::channel_matrix(phi_grid, g2[0].dod, &sc.array);
        let rx2 = synthesize_received(&sc, &g2, &x, &PulseShape::Sinc, delta, 0).unwrap();
        let grid = EstimationGrid {
            delay_center: rx.delays[0] + 0.13 * sc.symbol_duration,
            delay_halfwidth: 0.4 * sc.symbol_duration,
            delay_resolution: delta / 1000.0,
            doa_center: phi_grid + 0.03,
            doa_halfwidth: 0.1,
            doa_resolution: res_phi,
        };
        let (t, p) = ml_estimate_single_bd(&rx2, &sc, &g2[0], &x, &PulseShape::Sinc, &grid).unwrap();
        assert!((t - rx2.delays[0]).abs() < 1e-3 * grid.delay_resolution, "{t} {}", rx2.delays[0]);
        assert!((p - phi_grid).abs() < 1e-3 * res_phi);
    }

    #[test]
    fn mse_zero_noise_single_trial() {
        let mut sc = scenario(&[(1.5, -0.5)]);
        let geo = scene_geometry(&sc).unwrap();
        // effectively noiseless
        sc.clutter_power = 1e-30;
        sc.noise_power = 1e-30;
        let run = SimulationRun { trials: 1, delay_scale: 50.0, doa_resolution: 1e-6, delay_resolution: 1e-12, ..Default::default() };
        let rep = mse_vs_crb(&sc, &geo, &PulseShape::Cosine, &HermitianCovariance::isotropic(4, 1.0), &run).unwrap();
        // the delay truth sits on the lattice; the DoA truth is within half a step of it
        assert!(rep.mse_delay < 1e-3 * run.delay_resolution.powi(2), "{rep:?}");
        assert!(rep.mse_doa <= 0.25 * run.doa_resolution.powi(2), "{rep:?}");
    }
}
