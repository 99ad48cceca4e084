//! Fisher information for the delays and DoAs of all BDs and the resulting
//! Cramér-Rao bounds.
//!
//! Two conventions are carried side by side.
//!
//! * [`FimConvention::Rescaled`] keeps the angle block free of the array factor
//!   `κ_l = 2π (d/λ) cos φ_l` and couples delay and angle through
//!   `Re[ε_ġ g_l]`. The DoA bound is mapped back to radians² with
//!   `c_l = 1 / κ_l²`.
//! * [`FimConvention::Physical`] differentiates the received mean directly,
//!   `∂H_l/∂φ_l = j κ_l Λ H_l`, which gives the cross entry
//!   `κ_l Re[−j ε_ġ g_l]`. It vanishes for every real pulse.
//!
//! Both share the closed form
//! `CRB(τ_l) = ε_g h_l / (ξ_l D_l)`, `CRB(φ_l) = c_l ε_g F̄² f_l / (ξ_l D_l)`
//! with `D_l = ε_g² F̄² f_l h_l − e² |g_l|²` and a convention-specific coupling `e`.

use std::fmt;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::geometry::{BdGeometry, Scenario};
use crate::linalg::{CMatrix, HermitianCovariance};
use crate::pulses::PulseConstants;

/// Condition number above which the FIM is reported as ill conditioned.
pub const CONDITION_WARN: f64 = 1e12;
/// Closed-form versus numeric disagreement that is surfaced as a diagnostic.
pub const MISMATCH_WARN: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FimConvention {
    #[default]
    Rescaled,
    Physical,
}

impl FimConvention {
    /// Magnitude of the delay/angle coupling in the rescaled 2x2 block.
    pub fn coupling(self, pulse: &PulseConstants) -> f64 {
        match self {
            FimConvention::Rescaled => pulse.cross.norm(),
            FimConvention::Physical => pulse.cross.im.abs(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FimConvention::Rescaled => "rescaled",
            FimConvention::Physical => "physical",
        }
    }
}

impl fmt::Display for FimConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `ξ_l = 2 ϱ N s_l² η(d_T) η(d_R) / ((σ_c² + σ_z²) Δt)`.
pub fn xi_coefficients(scenario: &Scenario, geometry: &[BdGeometry]) -> Vec<f64> {
    let scale =
        2.0 * scenario.symbols_per_slot as f64 / (scenario.disturbance_power() * scenario.symbol_duration);
    scenario
        .devices
        .iter()
        .zip(geometry)
        .enumerate()
        .map(|(l, (dev, geo))| {
            if dev.symbol == 0.0 {
                warn!("device {l} has s = 0 and carries no information; the FIM is singular");
            }
            // α² = ϱ η(d_T) η(d_R)
            scale * dev.symbol * dev.symbol * geo.alpha * geo.alpha
        })
        .collect()
}

/// `f_l`, `g_l`, `h_l` for one channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTraces {
    /// `Tr(H R Hᴴ)`.
    pub f: f64,
    /// `Tr(H R Hᴴ Λ)`; real in exact arithmetic because `Hᴴ Λ H` is Hermitian.
    pub g: Complex64,
    /// `Tr(Λ H R Hᴴ Λ)`.
    pub h: f64,
}

/// Traces of `H R Hᴴ` weighted by `Λ = diag(0, …, M_r − 1)`.
pub fn channel_traces(r: &HermitianCovariance, channel: &CMatrix) -> Result<ChannelTraces> {
    if channel.ncols() != r.dim() {
        return Err(IsacError::Dimension(format!(
            "channel has {} columns but R_x is {}x{}",
            channel.ncols(),
            r.dim(),
            r.dim()
        )));
    }
    let q = channel * r.matrix() * channel.adjoint();
    let (mut f, mut g, mut h) = (0.0, Complex64::new(0.0, 0.0), 0.0);
    for m in 0..q.nrows() {
        let d = q[(m, m)];
        let w = m as f64;
        f += d.re;
        g += d * w;
        h += d.re * w * w;
    }
    Ok(ChannelTraces { f, g, h })
}

/// Per-BD 2x2 information blocks; the cross-BD entries are zero.
#[derive(Debug, Clone)]
pub struct FimBlocks {
    pub convention: FimConvention,
    pub xi: Vec<f64>,
    pub traces: Vec<ChannelTraces>,
    /// `κ_l`, kept so the rescaled angle block can be mapped to radians.
    pub angle_scale: Vec<f64>,
    pub g_tt: Vec<f64>,
    pub g_tp: Vec<f64>,
    pub g_pp: Vec<f64>,
}

impl FimBlocks {
    pub fn num_devices(&self) -> usize {
        self.xi.len()
    }

    /// `[[G_ττ, G_τΦ], [G_τΦᵀ, G_ΦΦ]]`, `2L x 2L`.
    pub fn assemble(&self) -> DMatrix<f64> {
        let l = self.num_devices();
        let mut j = DMatrix::zeros(2 * l, 2 * l);
        for i in 0..l {
            j[(i, i)] = self.g_tt[i];
            j[(i, l + i)] = self.g_tp[i];
            j[(l + i, i)] = self.g_tp[i];
            j[(l + i, l + i)] = self.g_pp[i];
        }
        j
    }

    /// Multiplier turning the `l`-th angle entry of `J⁻¹` into radians².
    fn doa_unit_factor(&self, l: usize) -> f64 {
        match self.convention {
            FimConvention::Rescaled => 1.0 / (self.angle_scale[l] * self.angle_scale[l]),
            FimConvention::Physical => 1.0,
        }
    }
}

/// Builds the information blocks for the given excitation covariance.
pub fn build_fim(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    pulse: &PulseConstants,
    r: &HermitianCovariance,
    convention: FimConvention,
) -> Result<FimBlocks> {
    if geometry.len() != scenario.num_devices() {
        return Err(IsacError::Dimension(format!(
            "{} geometries for {} devices",
            geometry.len(),
            scenario.num_devices()
        )));
    }
    scenario.require_disturbance()?;
    if !(pulse.energy.is_finite() && pulse.msb.is_finite() && pulse.cross.norm().is_finite()) {
        return Err(IsacError::Evaluation("pulse constants are not finite".into()));
    }
    let xi = xi_coefficients(scenario, geometry);
    let l = geometry.len();
    let mut out = FimBlocks {
        convention,
        xi: xi.clone(),
        traces: Vec::with_capacity(l),
        angle_scale: geometry.iter().map(|g| g.angle_scale).collect(),
        g_tt: Vec::with_capacity(l),
        g_tp: Vec::with_capacity(l),
        g_pp: Vec::with_capacity(l),
    };
    for (geo, &x) in geometry.iter().zip(&xi) {
        let t = channel_traces(r, &geo.channel)?;
        let eg = pulse.energy;
        let (cross, pp) = match convention {
            FimConvention::Rescaled => ((pulse.cross * t.g).re, eg * t.h),
            FimConvention::Physical => {
                let k = geo.angle_scale;
                ((Complex64::new(0.0, -k) * pulse.cross * t.g).re, eg * k * k * t.h)
            }
        };
        out.g_tt.push(x * eg * pulse.msb * t.f);
        out.g_tp.push(x * cross);
        out.g_pp.push(x * pp);
        out.traces.push(t);
    }
    Ok(out)
}

/// Bounds on the delays (s²) and DoAs (rad²), per BD and summed.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbReport {
    pub convention: FimConvention,
    pub crb_delay_per_bd: Vec<f64>,
    pub crb_doa_per_bd: Vec<f64>,
    pub crb_delay: f64,
    pub crb_doa: f64,
    /// `crb_delay + crb_doa`, mixed units.
    pub crb_total: f64,
    /// The same total from a dense inverse of the assembled FIM.
    pub numeric_crb_total: f64,
    /// `|crb_total − numeric_crb_total| / crb_total`.
    pub mismatch: f64,
}

impl CrbReport {
    /// Flat `key=value` lines.
    pub fn to_record(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        put("convention", self.convention.to_string());
        put("crb_total_mixed", format!("{:e}", self.crb_total));
        put("crb_delay_s2", format!("{:e}", self.crb_delay));
        put("crb_doa_rad2", format!("{:e}", self.crb_doa));
        put("numeric_crb_total_mixed", format!("{:e}", self.numeric_crb_total));
        put("closed_numeric_mismatch", format!("{:e}", self.mismatch));
        for (l, (t, p)) in self.crb_delay_per_bd.iter().zip(&self.crb_doa_per_bd).enumerate() {
            put(&format!("bd{l}.crb_delay_s2"), format!("{t:e}"));
            put(&format!("bd{l}.crb_doa_rad2"), format!("{p:e}"));
        }
        s
    }
}

/// Closed-form bounds; the numeric total is attached for cross-checking.
pub fn crb_closed_form(
    blocks: &FimBlocks,
    pulse: &PulseConstants,
    geometry: &[BdGeometry],
) -> Result<CrbReport> {
    let e = blocks.convention.coupling(pulse);
    let (eg, msb) = (pulse.energy, pulse.msb);
    let mut delay = Vec::with_capacity(geometry.len());
    let mut doa = Vec::with_capacity(geometry.len());
    for (l, geo) in geometry.iter().enumerate() {
        let c_l = geo.doa_scale_constant(l)?;
        let t = &blocks.traces[l];
        let xi = blocks.xi[l];
        let den = eg * eg * msb * t.f * t.h - e * e * t.g.norm_sqr();
        if !(den > 0.0) || !(xi > 0.0) {
            return Err(IsacError::SingularInformation {
                device: l,
                reason: format!("non-positive information determinant {den:e} (ξ = {xi:e})"),
            });
        }
        delay.push(eg * t.h / (xi * den));
        doa.push(c_l * eg * msb * t.f / (xi * den));
    }
    let crb_delay: f64 = delay.iter().sum();
    let crb_doa: f64 = doa.iter().sum();
    let crb_total = crb_delay + crb_doa;

    let numeric = crb_numeric(&blocks.assemble())?;
    let l = blocks.num_devices();
    let numeric_crb_total: f64 = (0..l)
        .map(|i| numeric.diagonal[i] + blocks.doa_unit_factor(i) * numeric.diagonal[l + i])
        .sum();
    let mismatch = (crb_total - numeric_crb_total).abs() / crb_total;
    if mismatch > MISMATCH_WARN {
        warn!(
            "{} closed-form CRB differs from the numeric inverse by {mismatch:e} relative",
            blocks.convention
        );
    }
    Ok(CrbReport {
        convention: blocks.convention,
        crb_delay_per_bd: delay,
        crb_doa_per_bd: doa,
        crb_delay,
        crb_doa,
        crb_total,
        numeric_crb_total,
        mismatch,
    })
}

/// Builds the FIM and evaluates the closed-form bound in one call.
pub fn evaluate_crb(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    pulse: &PulseConstants,
    r: &HermitianCovariance,
    convention: FimConvention,
) -> Result<CrbReport> {
    let blocks = build_fim(scenario, geometry, pulse, r, convention)?;
    crb_closed_form(&blocks, pulse, geometry)
}

/// Result of inverting an assembled FIM two ways.
#[derive(Debug, Clone)]
pub struct NumericCrb {
    /// `Tr(J⁻¹)` from the pivoted dense inverse.
    pub total: f64,
    pub diagonal: Vec<f64>,
    /// `Tr(J⁻¹)` from the 2x2 block inverse.
    pub block_total: f64,
    pub block_diagonal: Vec<f64>,
    /// Condition number of the Jacobi-equilibrated FIM.
    pub condition: f64,
}

/// Dense and block inverses of a symmetric positive definite `2L x 2L` FIM.
pub fn crb_numeric(j: &DMatrix<f64>) -> Result<NumericCrb> {
    let n = j.nrows();
    if n == 0 || n != j.ncols() || !n.is_multiple_of(2) {
        return Err(IsacError::Dimension(format!(
            "FIM must be square with even size, got {}x{}",
            j.nrows(),
            j.ncols()
        )));
    }
    let singular = |reason: String| IsacError::InvalidMatrix(format!("singular FIM: {reason}"));
    let d: Vec<f64> = (0..n).map(|i| j[(i, i)]).collect();
    if d.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(singular("non-positive diagonal entry".into()));
    }
    let eq = DMatrix::from_fn(n, n, |a, b| j[(a, b)] / (d[a] * d[b]).sqrt());
    let eig = eq.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) {
        return Err(singular(format!("smallest equilibrated eigenvalue {lo:e}")));
    }
    let condition = hi / lo;
    if condition > CONDITION_WARN {
        warn!("FIM is ill conditioned (equilibrated condition number {condition:e})");
    }
    let inv = j
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| singular("LU factorization failed".into()))?;
    let diagonal: Vec<f64> = (0..n).map(|i| inv[(i, i)]).collect();
    let block = block_inverse(j)?;
    let block_diagonal: Vec<f64> = (0..n).map(|i| block[(i, i)]).collect();
    Ok(NumericCrb {
        total: diagonal.iter().sum(),
        diagonal,
        block_total: block_diagonal.iter().sum(),
        block_diagonal,
        condition,
    })
}

/// Inverse of `[[A, B], [Bᵀ, D]]` via the Schur complement `S = D − Bᵀ A⁻¹ B`:
/// `[[A⁻¹ + A⁻¹ B S⁻¹ Bᵀ A⁻¹, −A⁻¹ B S⁻¹], [−S⁻¹ Bᵀ A⁻¹, S⁻¹]]`.
///
/// The top-left block is the Woodbury form of `(A − B D⁻¹ Bᵀ)⁻¹`.
pub fn block_inverse(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = j.nrows();
    let l = n / 2;
    let a = j.view((0, 0), (l, l)).into_owned();
    let b = j.view((0, l), (l, l)).into_owned();
    let d = j.view((l, l), (l, l)).into_owned();
    let fail = |what: &str| IsacError::InvalidMatrix(format!("block inverse: {what} is singular"));
    let a_inv = a.try_inverse().ok_or_else(|| fail("delay block"))?;
    let a_inv_b = &a_inv * &b;
    let s = &d - b.transpose() * &a_inv_b;
    let s_inv = s.try_inverse().ok_or_else(|| fail("Schur complement"))?;
    let top_right = -(&a_inv_b * &s_inv);
    let top_left = &a_inv - &top_right * a_inv_b.transpose();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (l, l)).copy_from(&top_left);
    out.view_mut((0, l), (l, l)).copy_from(&top_right);
    out.view_mut((l, 0), (l, l)).copy_from(&top_right.transpose());
    out.view_mut((l, l), (l, l)).copy_from(&s_inv);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scene_geometry, ArrayConfig, BackscatterDevice, Position};
    use crate::pulses::{pulse_constants, PulseShape};

    fn scenario_one() -> Scenario {
        Scenario {
            tx: Position::new(0.0, 0.0),
            rx: Position::new(2.0, -1.5),
            array: ArrayConfig::default(),
            devices: vec![BackscatterDevice {
                position: Position::new(1.5, -0.5),
                symbol: 1.0,
                reflection: 1.0,
            }],
            pathloss_ref: 1e-3,
            pathloss_exponent: 2.7,
            clutter_power: 1e-9,
            noise_power: 1e-9,
            symbol_duration: 5e-7,
            symbols_per_slot: 128,
            response_delay: 0.0,
            power_budget: 1.0,
        }
    }

    #[test]
    fn xi_scenario_one() {
        let sc = scenario_one();
        let geo = scene_geometry(&sc).unwrap();
        let xi = xi_coefficients(&sc, &geo)[0];
        // independent arithmetic: 2·128·ζ²(d_T d_R)^-2.7 / (2e-9 · 5e-7)
        let dt = 2.5f64.sqrt();
        let dr = 1.25f64.sqrt();
        let oracle = 2.0 * 128.0 * 1e-6 * (dt * dr).powf(-2.7) / (2e-9 * 5e-7);
        assert!((xi - oracle).abs() / oracle < 1e-12);
        assert!((xi - 5.50e10).abs() / 5.50e10 < 0.01);

        let mut sc2 = sc.clone();
        sc2.symbols_per_slot = 256;
        sc2.devices[0].symbol = 0.5;
        let xi2 = xi_coefficients(&sc2, &geo)[0];
        assert!((xi2 - xi / 2.0).abs() / xi < 1e-14);
    }

    #[test]
    fn traces_isotropic() {
        let sc = scenario_one();
        let geo = scene_geometry(&sc).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        let t = channel_traces(&r, &geo[0].channel).unwrap();
        assert!((t.f - 8.0).abs() < 1e-12);
        assert!((t.g.re - 28.0).abs() < 1e-12 && t.g.im.abs() < 1e-12);
        assert!((t.h - 140.0).abs() < 1e-11);
        let z = channel_traces(&HermitianCovariance::zeros(8), &geo[0].channel).unwrap();
        assert_eq!((z.f, z.g.norm(), z.h), (0.0, 0.0, 0.0));
    }

    #[test]
    fn decoupled_limit_and_scaling() {
        let sc = scenario_one();
        let geo = scene_geometry(&sc).unwrap();
        let pc = pulse_constants(&PulseShape::Cosine, sc.symbol_duration, 4096).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        let phys = evaluate_crb(&sc, &geo, &pc, &r, FimConvention::Physical).unwrap();
        let blocks = build_fim(&sc, &geo, &pc, &r, FimConvention::Physical).unwrap();
        let t = blocks.traces[0];
        let xi = blocks.xi[0];
        let tau = 1.0 / (xi * pc.energy * pc.msb * t.f);
        let c_l = geo[0].doa_scale_constant(0).unwrap();
        let phi = c_l / (xi * pc.energy * t.h);
        assert!((phys.crb_delay - tau).abs() / tau < 1e-12);
        assert!((phys.crb_doa - phi).abs() / phi < 1e-12);
        assert!(phys.mismatch < 1e-10);

        let rescaled = evaluate_crb(&sc, &geo, &pc, &r, FimConvention::Rescaled).unwrap();
        assert!(rescaled.crb_total > phys.crb_total);
        assert!(rescaled.mismatch < 1e-10);
        let doubled =
            evaluate_crb(&sc, &geo, &pc, &r.scaled(2.0), FimConvention::Rescaled).unwrap();
        assert!((doubled.crb_total * 2.0 - rescaled.crb_total).abs() / rescaled.crb_total < 1e-12);
    }

    #[test]
    fn fim_linear_in_covariance() {
        let sc = scenario_one();
        let geo = scene_geometry(&sc).unwrap();
        let pc = pulse_constants(&PulseShape::Linear, sc.symbol_duration, 4096).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        for conv in [FimConvention::Rescaled, FimConvention::Physical] {
            let a = build_fim(&sc, &geo, &pc, &r, conv).unwrap().assemble();
            let b = build_fim(&sc, &geo, &pc, &r.scaled(2.0), conv).unwrap().assemble();
            assert!((&b - &a * 2.0).norm() <= 1e-12 * b.norm());
            assert!(a[(0, 0)] > 0.0 && a[(1, 1)] > 0.0);
        }
    }

    #[test]
    fn numeric_small_cases() {
        let j = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let n = crb_numeric(&j).unwrap();
        assert!((n.total - 7.0 / 11.0).abs() < 1e-14);
        assert!((n.block_total - 7.0 / 11.0).abs() < 1e-14);
        let diag = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0, 5.0, 10.0]));
        let n = crb_numeric(&diag).unwrap();
        assert_eq!(n.diagonal, vec![0.5, 0.25, 0.2, 0.1]);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(crb_numeric(&sing).is_err());
    }

    #[test]
    fn endfire_is_rejected() {
        let mut sc = scenario_one();
        // straight above the receiver: φ = π/2
        sc.devices[0].position = Position::new(2.0, 0.5);
        let geo = scene_geometry(&sc).unwrap();
        let pc = pulse_constants(&PulseShape::Cosine, sc.symbol_duration, 4096).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        let err = evaluate_crb(&sc, &geo, &pc, &r, FimConvention::Rescaled).unwrap_err();
        assert!(matches!(err, IsacError::GeometrySingular { device: 0, .. }));
    }

    #[test]
    fn record_is_flat() {
        let sc = scenario_one();
        let geo = scene_geometry(&sc).unwrap();
        let pc = pulse_constants(&PulseShape::Sinc, sc.symbol_duration, 4096).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        let rep = evaluate_crb(&sc, &geo, &pc, &r, FimConvention::Rescaled).unwrap();
        let rec = rep.to_record();
        assert!(rec.lines().all(|l| l.split('=').count() == 2));
        assert!(rec.contains("bd0.crb_doa_rad2="));
    }
}
