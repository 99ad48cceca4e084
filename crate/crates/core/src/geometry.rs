//! Scene geometry: distances, angles, delays, path loss, steering vectors and
//! the per-BD rank-one channels, plus closed-form BD localization from an
//! estimated round-trip delay and DoA.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::linalg::{CMatrix, CVector};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Quadrant-aware bearing of `other` seen from `self`, radians.
    pub fn bearing_to(&self, other: &Position) -> f64 {
        (other.y - self.y).atan2(other.x - self.x)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Uniform linear arrays at the ISAC transmitter and receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    /// Adjacent-element spacing over the carrier wavelength, `d/λ`.
    pub spacing_ratio: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            tx_antennas: 8,
            rx_antennas: 8,
            spacing_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackscatterDevice {
    pub position: Position,
    /// Amplitude symbol `s_l ∈ [0, 1]` held for the whole slot.
    pub symbol: f64,
    /// Fraction of the incident power that is reflected, `ϱ ∈ [0, 1]`.
    pub reflection: f64,
}

/// Everything the downstream math needs; powers are linear watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tx: Position,
    pub rx: Position,
    pub array: ArrayConfig,
    pub devices: Vec<BackscatterDevice>,
    /// Linear power gain at the 1 m reference distance, `ζ`.
    pub pathloss_ref: f64,
    pub pathloss_exponent: f64,
    pub clutter_power: f64,
    pub noise_power: f64,
    /// Excitation symbol duration `Δt`, seconds.
    pub symbol_duration: f64,
    pub symbols_per_slot: usize,
    /// Constant BD response delay `τ_0`, seconds.
    pub response_delay: f64,
    /// Transmit power budget `P_0`, watts.
    pub power_budget: f64,
}

impl Scenario {
    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    /// `σ_c² + σ_z²`.
    pub fn disturbance_power(&self) -> f64 {
        self.clutter_power + self.noise_power
    }

    /// Bounds and rates need a positive disturbance power; only simulation
    /// accepts a noiseless scene.
    pub fn require_disturbance(&self) -> Result<()> {
        if self.disturbance_power() > 0.0 {
            Ok(())
        } else {
            Err(IsacError::Domain(
                "clutter plus noise power must be positive for bounds and rates".into(),
            ))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dom = |m: String| Err(IsacError::Domain(m));
        if !self.tx.is_finite() || !self.rx.is_finite() {
            return dom("non-finite transmitter or receiver position".into());
        }
        if self.array.tx_antennas == 0 || self.array.rx_antennas == 0 {
            return dom("arrays need at least one antenna".into());
        }
        if !(self.array.spacing_ratio > 0.0) {
            return dom("antenna spacing ratio must be positive".into());
        }
        if self.devices.is_empty() {
            return dom("at least one backscatter device is required".into());
        }
        for (name, v) in [("clutter_power", self.clutter_power), ("noise_power", self.noise_power)] {
            if !(v >= 0.0) || !v.is_finite() {
                return dom(format!("{name} must be non-negative and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("pathloss_ref", self.pathloss_ref),
            ("symbol_duration", self.symbol_duration),
            ("power_budget", self.power_budget),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return dom(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.symbols_per_slot == 0 {
            return dom("symbols_per_slot must be positive".into());
        }
        if !(self.response_delay >= 0.0) {
            return dom("response delay must be non-negative".into());
        }
        if self.tx.distance(&self.rx) <= 0.0 {
            return Err(IsacError::GeometryInfeasible(
                "transmitter and receiver are co-located".into(),
            ));
        }
        for (l, d) in self.devices.iter().enumerate() {
            if !d.position.is_finite() {
                return dom(format!("device {l} has a non-finite position"));
            }
            if !(0.0..=1.0).contains(&d.symbol) {
                return dom(format!("device {l}: symbol {} outside [0, 1]", d.symbol));
            }
            if !(0.0..=1.0).contains(&d.reflection) {
                return dom(format!(
                    "device {l}: reflection fraction {} outside [0, 1]",
                    d.reflection
                ));
            }
            if d.position.distance(&self.tx) <= 0.0 || d.position.distance(&self.rx) <= 0.0 {
                return Err(IsacError::GeometryInfeasible(format!(
                    "device {l} is co-located with the transmitter or receiver"
                )));
            }
        }
        Ok(())
    }
}

/// Derived per-device quantities.
#[derive(Debug, Clone)]
pub struct BdGeometry {
    pub d_tx: f64,
    pub d_rx: f64,
    pub d_0: f64,
    /// DoD at the transmitter, `θ_l`.
    pub dod: f64,
    /// DoA at the receiver, `φ_l`.
    pub doa: f64,
    /// Bearing of the receiver seen from the transmitter, `β`.
    pub beta: f64,
    pub tau_tx: f64,
    pub tau_rx: f64,
    /// Total delay `τ_{0,l} = τ_{T,l} + τ_0 + τ_{R,l}`.
    pub tau_total: f64,
    /// Amplitude `sqrt(ϱ η(d_T) η(d_R))`.
    pub alpha: f64,
    /// `a_r(φ) a_t(θ)ᵀ`, `M_r x M_t`.
    pub channel: CMatrix,
    /// `round(τ_{0,l} / Δt)`.
    pub integer_delay: i64,
    /// `2π (d/λ) cos φ`, the factor `∂a_r/∂φ = j κ Λ a_r` carries.
    pub angle_scale: f64,
}

impl BdGeometry {
    /// `c_l = 1 / κ_l²`; errors at endfire where the DoA is unidentifiable.
    pub fn doa_scale_constant(&self, device: usize) -> Result<f64> {
        let k2 = self.angle_scale * self.angle_scale;
        if !(k2 > 1e-24) {
            return Err(IsacError::GeometrySingular {
                device,
                reason: format!("DoA {:.6} rad is at endfire (cos φ = 0)", self.doa),
            });
        }
        Ok(1.0 / k2)
    }
}

/// `η(d) = ζ d^(-γ)`.
pub fn pathloss(d: f64, zeta: f64, gamma: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(IsacError::Domain(format!(
            "path loss distance must be positive, got {d}"
        )));
    }
    Ok(zeta * d.powf(-gamma))
}

/// ULA steering vector, element `k` is `exp(j 2π (d/λ) k sin(angle))`.
pub fn steering(angle: f64, elements: usize, spacing_ratio: f64) -> CVector {
    let step = 2.0 * PI * spacing_ratio * angle.sin();
    CVector::from_fn(elements, |k, _| Complex64::from_polar(1.0, step * k as f64))
}

pub fn steering_tx(theta: f64, array: &ArrayConfig) -> CVector {
    steering(theta, array.tx_antennas, array.spacing_ratio)
}

pub fn steering_rx(phi: f64, array: &ArrayConfig) -> CVector {
    steering(phi, array.rx_antennas, array.spacing_ratio)
}

/// `a_r(φ) a_t(θ)ᵀ`.
pub fn channel_matrix(phi: f64, theta: f64, array: &ArrayConfig) -> CMatrix {
    let ar = steering_rx(phi, array);
    let at = steering_tx(theta, array);
    &ar * at.transpose()
}

/// Populates [`BdGeometry`] for every device of the scenario.
pub fn scene_geometry(scenario: &Scenario) -> Result<Vec<BdGeometry>> {
    scenario.validate()?;
    let d_0 = scenario.tx.distance(&scenario.rx);
    let beta = scenario.tx.bearing_to(&scenario.rx);
    scenario
        .devices
        .iter()
        .map(|dev| {
            let d_tx = dev.position.distance(&scenario.tx);
            let d_rx = dev.position.distance(&scenario.rx);
            let dod = scenario.tx.bearing_to(&dev.position);
            let doa = scenario.rx.bearing_to(&dev.position);
            let tau_tx = d_tx / SPEED_OF_LIGHT;
            let tau_rx = d_rx / SPEED_OF_LIGHT;
            let tau_total = tau_tx + scenario.response_delay + tau_rx;
            let eta_t = pathloss(d_tx, scenario.pathloss_ref, scenario.pathloss_exponent)?;
            let eta_r = pathloss(d_rx, scenario.pathloss_ref, scenario.pathloss_exponent)?;
            Ok(BdGeometry {
                d_tx,
                d_rx,
                d_0,
                dod,
                doa,
                beta,
                tau_tx,
                tau_rx,
                tau_total,
                alpha: (dev.reflection * eta_t * eta_r).sqrt(),
                channel: channel_matrix(doa, dod, &scenario.array),
                integer_delay: (tau_total / scenario.symbol_duration).round() as i64,
                angle_scale: 2.0 * PI * scenario.array.spacing_ratio * doa.cos(),
            })
        })
        .collect()
}

/// Position estimate recovered from a delay / DoA pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Localization {
    /// Receiver-to-BD distance.
    pub d_rx: f64,
    pub position: Position,
    /// DoD at the transmitter.
    pub dod: f64,
}

/// Closed-form localization from an estimated total delay and DoA.
///
/// With `S = c (τ̂ − τ_0)` the bistatic path length, the law of cosines in the
/// transmitter / receiver / BD triangle gives
/// `d_R = (S² − d_0²) / (2 (S + d_0 cos(φ̂ − β)))`.
/// `S > d_0` is required (the BD cannot be closer than the direct path); under
/// that condition the denominator is strictly positive for any DoA.
pub fn locate_bd(tau_hat: f64, doa_hat: f64, scenario: &Scenario) -> Result<Localization> {
    let d_0 = scenario.tx.distance(&scenario.rx);
    let beta = scenario.tx.bearing_to(&scenario.rx);
    let path = SPEED_OF_LIGHT * (tau_hat - scenario.response_delay);
    if !path.is_finite() || path <= d_0 {
        return Err(IsacError::GeometryInfeasible(format!(
            "bistatic path {path:.6} m does not exceed the baseline {d_0:.6} m"
        )));
    }
    let denom = 2.0 * (d_0 * (doa_hat - beta).cos() + path);
    if !(denom > 0.0) {
        return Err(IsacError::GeometryInfeasible(format!(
            "non-positive range denominator {denom:e}"
        )));
    }
    // S² − d_0² factored to keep precision when S is close to d_0.
    let d_rx = (path - d_0) * (path + d_0) / denom;
    let position = Position::new(
        scenario.rx.x + d_rx * doa_hat.cos(),
        scenario.rx.y + d_rx * doa_hat.sin(),
    );
    Ok(Localization {
        d_rx,
        position,
        dod: scenario.tx.bearing_to(&position),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scenario_one() -> Scenario {
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
    fn pathloss_values() {
        assert_eq!(pathloss(1.0, 1e-3, 2.7).unwrap(), 1e-3);
        assert_eq!(pathloss(1.0, 0.42, 3.3).unwrap(), 0.42);
        let two = pathloss(2.0, 1e-3, 2.7).unwrap();
        assert!((two - 1.539e-4).abs() < 1e-7);
        assert!(matches!(pathloss(0.0, 1e-3, 2.7), Err(IsacError::Domain(_))));
        assert!(pathloss(-1.0, 1e-3, 2.7).is_err());
        assert!(pathloss(3.0, 1e-3, 2.7).unwrap() < two);
    }

    #[test]
    fn steering_examples() {
        let a = steering(0.0, 4, 0.5);
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let b = steering(PI / 6.0, 2, 0.5);
        assert!((b[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((b[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        let r = steering(PI / 2.0, 2, 0.5);
        assert!((r[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let ones = steering(0.0, 8, 0.5);
        assert_eq!(ones.len(), 8);
        for phi in [-1.3, -0.2, 0.4, 2.9] {
            assert!(steering(phi, 7, 0.5).iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn scenario_one_geometry() {
        let s = scenario_one();
        let g = &scene_geometry(&s).unwrap()[0];
        assert!((g.d_0 - 2.5).abs() < 1e-15);
        assert!((g.d_tx - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((g.d_rx - 1.25f64.sqrt()).abs() < 1e-12);
        assert!((g.doa.to_degrees() - 116.565).abs() < 1e-3);
        assert!((g.beta.to_degrees() + 36.870).abs() < 1e-3);
        assert_eq!(g.integer_delay, 0);
        let expected_tau = (g.d_tx + g.d_rx) / SPEED_OF_LIGHT;
        assert!((g.tau_total - expected_tau).abs() < 1e-24);
        let eta_t = pathloss(g.d_tx, 1e-3, 2.7).unwrap();
        let eta_r = pathloss(g.d_rx, 1e-3, 2.7).unwrap();
        assert!((g.alpha - (eta_t * eta_r).sqrt()).abs() < 1e-18);
    }

    #[test]
    fn channel_rank_one_with_unit_entries() {
        let s = scenario_one();
        let g = &scene_geometry(&s).unwrap()[0];
        let h = &g.channel;
        assert!(h.iter().all(|z| (z.norm() - 1.0).abs() < 1e-13));
        let tr = (h * h.adjoint()).trace().re;
        assert!((tr - 64.0).abs() < 1e-10);
        let sv = h.clone().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!((sv[0] - 8.0).abs() < 1e-10);
        assert!(sv[1..].iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn co_located_nodes_rejected() {
        let mut s = scenario_one();
        s.devices[0].position = s.rx;
        assert!(matches!(
            scene_geometry(&s),
            Err(IsacError::GeometryInfeasible(_))
        ));
        let mut s = scenario_one();
        s.rx = s.tx;
        assert!(scene_geometry(&s).is_err());
        let mut s = scenario_one();
        s.devices.clear();
        assert!(matches!(scene_geometry(&s), Err(IsacError::Domain(_))));
    }

    #[test]
    fn locate_example_point() {
        let s = scenario_one();
        let g = &scene_geometry(&s).unwrap()[0];
        let loc = locate_bd(g.tau_total, g.doa, &s).unwrap();
        assert!((loc.d_rx - 1.25f64.sqrt()).abs() < 1e-9);
        assert!((loc.position.x - 1.5).abs() < 1e-9);
        assert!((loc.position.y + 0.5).abs() < 1e-9);
        assert!((loc.dod - g.dod).abs() < 1e-9);
        // numerator S² − d_0² = 1.03552, denominator 0.92620
        let path = SPEED_OF_LIGHT * g.tau_total;
        assert!(((path * path - 6.25) - 1.03552).abs() < 1e-4);
        let beta = g.beta;
        assert!((2.0 * (2.5 * (g.doa - beta).cos() + path) - 0.9261).abs() < 2e-4);
    }

    #[test]
    fn locate_collinear_beyond_receiver() {
        let s = scenario_one();
        let beta = s.tx.bearing_to(&s.rx);
        let path = 3.7;
        let loc = locate_bd(path / SPEED_OF_LIGHT, beta, &s).unwrap();
        assert!((loc.d_rx - (path - 2.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn locate_delay_sensitivity() {
        let s = scenario_one();
        let g = &scene_geometry(&s).unwrap()[0];
        let a = locate_bd(g.tau_total, g.doa, &s).unwrap();
        let b = locate_bd(g.tau_total + 1e-9, g.doa, &s).unwrap();
        // independent oracle: bisection on d_R + |R + d_R u − T| = S along the DoA ray
        let path = SPEED_OF_LIGHT * (g.tau_total + 1e-9);
        let (mut lo, mut hi) = (0.0, path);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let p = Position::new(s.rx.x + mid * g.doa.cos(), s.rx.y + mid * g.doa.sin());
            if mid + p.distance(&s.tx) < path {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((b.d_rx - lo).abs() < 1e-9);
        // a 1 ns (0.30 m) path error moves the range estimate by about 0.68 m here
        assert!((b.d_rx - a.d_rx - 0.680_237).abs() < 1e-5);
    }

    #[test]
    fn locate_rejects_short_path() {
        let s = scenario_one();
        assert!(matches!(
            locate_bd(2.0 / SPEED_OF_LIGHT, 0.3, &s),
            Err(IsacError::GeometryInfeasible(_))
        ));
    }
}
