//! Transmit pulse shapes on `[0, Δt]` and the four scalars a pulse contributes
//! to the Fisher information: average power, energy, mean-square bandwidth and
//! the pulse/derivative cross energy.
//!
//! Every shape is stored in normalized time `u = t / Δt ∈ [0, 1]`, so one
//! shape serves any symbol duration.

use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};

/// Quadrature resolution used when a caller has no preference.
pub const DEFAULT_QUADRATURE_POINTS: usize = 4096;
const MIN_QUADRATURE_POINTS: usize = 64;
/// Finite-difference step in normalized time (`Δt / 10⁶`).
const FD_STEP: f64 = 1e-6;

type ShapeFn = dyn Fn(f64) -> Complex64 + Send + Sync;

/// User-supplied pulse in normalized time.
#[derive(Clone)]
pub struct CustomPulse {
    pub name: String,
    shape: Arc<ShapeFn>,
    derivative: Option<Arc<ShapeFn>>,
}

impl CustomPulse {
    /// `shape(u)` for `u ∈ [0, 1]`; the derivative is taken numerically.
    pub fn new<F>(name: impl Into<String>, shape: F) -> Self
    where
        F: Fn(f64) -> Complex64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            shape: Arc::new(shape),
            derivative: None,
        }
    }

    /// Supplies `d shape / du` analytically.
    pub fn with_derivative<F>(mut self, derivative: F) -> Self
    where
        F: Fn(f64) -> Complex64 + Send + Sync + 'static,
    {
        self.derivative = Some(Arc::new(derivative));
        self
    }
}

impl fmt::Debug for CustomPulse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPulse")
            .field("name", &self.name)
            .field("analytic_derivative", &self.derivative.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PulseShape {
    /// `g1(t) = √2 cos(π t / (2Δt))`.
    Cosine,
    /// `g2(t) = √(π/a) sinc(t/Δt)`, `sinc(x) = sin(πx)/(πx)`, `a = ∫₀^π sin²x/x² dx`.
    Sinc,
    /// `g3(t) = √3 (1 − t/Δt)`.
    Linear,
    Custom(CustomPulse),
}

/// Names accepted by [`PulseShape::from_name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PulseName {
    G1,
    G2,
    G3,
}

impl PulseName {
    pub fn shape(self) -> PulseShape {
        match self {
            PulseName::G1 => PulseShape::Cosine,
            PulseName::G2 => PulseShape::Sinc,
            PulseName::G3 => PulseShape::Linear,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PulseName::G1 => "g1",
            PulseName::G2 => "g2",
            PulseName::G3 => "g3",
        }
    }
}

impl std::str::FromStr for PulseName {
    type Err = IsacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g1" | "cosine" | "cos" => Ok(PulseName::G1),
            "g2" | "sinc" => Ok(PulseName::G2),
            "g3" | "linear" => Ok(PulseName::G3),
            other => Err(IsacError::Domain(format!("unknown pulse `{other}`"))),
        }
    }
}

/// `∫₀^π sin²x / x² dx`, the sinc pulse normalizer.
pub fn sinc_normalizer() -> f64 {
    static A: OnceLock<f64> = OnceLock::new();
    *A.get_or_init(|| {
        simpson(1 << 14, 0.0, PI, |x| {
            if x == 0.0 {
                1.0
            } else {
                let s = x.sin() / x;
                s * s
            }
        })
    })
}

fn sinc(x: f64) -> f64 {
    let px = PI * x;
    if px.abs() < 1e-6 {
        1.0 - px * px / 6.0
    } else {
        px.sin() / px
    }
}

fn sinc_derivative(x: f64) -> f64 {
    let px = PI * x;
    if px.abs() < 1e-4 {
        // series of (πx cos πx − sin πx) / (π x²)
        -PI * px / 3.0 + PI * px * px * px / 30.0
    } else {
        (px * px.cos() - px.sin()) / (PI * x * x)
    }
}

impl PulseShape {
    pub fn name(&self) -> &str {
        match self {
            PulseShape::Cosine => "g1",
            PulseShape::Sinc => "g2",
            PulseShape::Linear => "g3",
            PulseShape::Custom(c) => &c.name,
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(name.parse::<PulseName>()?.shape())
    }

    pub fn is_real(&self) -> bool {
        !matches!(self, PulseShape::Custom(_))
    }

    /// Shape value at normalized time `u`; zero outside `[0, 1]`.
    pub fn shape(&self, u: f64) -> Complex64 {
        if !(0.0..=1.0).contains(&u) {
            return Complex64::new(0.0, 0.0);
        }
        self.shape_unchecked(u)
    }

    fn shape_unchecked(&self, u: f64) -> Complex64 {
        let re = |v: f64| Complex64::new(v, 0.0);
        match self {
            PulseShape::Cosine => re(2f64.sqrt() * (PI * u / 2.0).cos()),
            PulseShape::Sinc => re((PI / sinc_normalizer()).sqrt() * sinc(u)),
            PulseShape::Linear => re(3f64.sqrt() * (1.0 - u)),
            PulseShape::Custom(c) => (c.shape)(u),
        }
    }

    /// `d shape / du` on `[0, 1]`, analytic where available.
    pub fn shape_derivative(&self, u: f64) -> Complex64 {
        let re = |v: f64| Complex64::new(v, 0.0);
        match self {
            PulseShape::Cosine => re(-2f64.sqrt() * PI / 2.0 * (PI * u / 2.0).sin()),
            PulseShape::Sinc => re((PI / sinc_normalizer()).sqrt() * sinc_derivative(u)),
            PulseShape::Linear => re(-3f64.sqrt()),
            PulseShape::Custom(c) => match &c.derivative {
                Some(d) => d(u),
                None => self.finite_difference(u),
            },
        }
    }

    /// Central differences inside the support, one-sided second order at the ends.
    fn finite_difference(&self, u: f64) -> Complex64 {
        let h = FD_STEP;
        let f = |x: f64| self.shape_unchecked(x);
        if u - h < 0.0 {
            (f(u) * -3.0 + f(u + h) * 4.0 - f(u + 2.0 * h)) / (2.0 * h)
        } else if u + h > 1.0 {
            (f(u) * 3.0 - f(u - h) * 4.0 + f(u - 2.0 * h)) / (2.0 * h)
        } else {
            (f(u + h) - f(u - h)) / (2.0 * h)
        }
    }
}

/// `g(t)` for a symbol of duration `dt`; zero outside `[0, Δt]`.
pub fn eval_pulse(pulse: &PulseShape, t: f64, dt: f64) -> Complex64 {
    pulse.shape(t / dt)
}

/// Scalars the pulse contributes to the Fisher information.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseConstants {
    /// Average power `p_g = ε_g / Δt`.
    pub avg_power: f64,
    /// Energy `ε_g = ∫₀^Δt |g|² dt`, seconds.
    pub energy: f64,
    /// Mean-square bandwidth `F̄² = ∫|ġ|² / ∫|g|²`, s⁻².
    pub msb: f64,
    /// Cross energy `ε_ġ = ∫₀^Δt ġ*(t) g(t) dt`, dimensionless.
    pub cross: Complex64,
    pub symbol_duration: f64,
}

impl PulseConstants {
    /// Dimensionless mean-square bandwidth `F̄² Δt²`.
    pub fn msb_normalized(&self) -> f64 {
        self.msb * self.symbol_duration * self.symbol_duration
    }
}

fn simpson<T, F>(intervals: usize, a: f64, b: f64, f: F) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T> + Copy,
    F: Fn(f64) -> T,
{
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc = acc + f(a + i as f64 * h) * w;
    }
    acc * (h / 3.0)
}

/// Composite Simpson evaluation of the pulse constants.
pub fn pulse_constants(
    pulse: &PulseShape,
    dt: f64,
    quadrature_points: usize,
) -> Result<PulseConstants> {
    if !(dt > 0.0) {
        return Err(IsacError::Domain(format!(
            "symbol duration must be positive, got {dt}"
        )));
    }
    if quadrature_points < MIN_QUADRATURE_POINTS {
        return Err(IsacError::Domain(format!(
            "need at least {MIN_QUADRATURE_POINTS} quadrature points, got {quadrature_points}"
        )));
    }
    let n = quadrature_points + quadrature_points % 2;
    let mut bad = None;
    let mut sample = |u: f64| {
        let g = pulse.shape(u);
        let d = pulse.shape_derivative(u);
        if !(g.re.is_finite() && g.im.is_finite() && d.re.is_finite() && d.im.is_finite()) {
            bad.get_or_insert(u);
        }
        (g, d)
    };
    let h = 1.0 / n as f64;
    let (mut e_g, mut e_d, mut cross) = (0.0, 0.0, Complex64::new(0.0, 0.0));
    for i in 0..=n {
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let (g, d) = sample(i as f64 * h);
        e_g += w * g.norm_sqr();
        e_d += w * d.norm_sqr();
        cross += d.conj() * g * w;
    }
    if let Some(u) = bad {
        return Err(IsacError::Evaluation(format!(
            "pulse `{}` is not finite at t/Δt = {u}",
            pulse.name()
        )));
    }
    let scale = h / 3.0;
    let (e_g, e_d, cross) = (e_g * scale, e_d * scale, cross * scale);
    if !(e_g > 0.0) {
        return Err(IsacError::Evaluation(format!(
            "pulse `{}` has zero energy",
            pulse.name()
        )));
    }
    Ok(PulseConstants {
        avg_power: e_g,
        energy: e_g * dt,
        msb: e_d / e_g / (dt * dt),
        cross,
        symbol_duration: dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 5e-7;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn sinc_normalizer_value() {
        // independent reference: adaptive quadrature, 1.4181515761326287
        assert!((sinc_normalizer() - 1.418_151_576_132_628_7).abs() < 1e-12);
    }

    #[test]
    fn cosine_constants() {
        let c = pulse_constants(&PulseShape::Cosine, DT, 4096).unwrap();
        assert!((c.avg_power - 1.0).abs() < 1e-10);
        assert!(rel(c.energy, DT) < 1e-10);
        assert!(rel(c.msb, PI * PI / (4.0 * DT * DT)) < 1e-8);
        assert!(rel(c.msb, 9.8696e12) < 1e-4);
        assert!((c.cross - Complex64::new(-1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn linear_constants() {
        let c = pulse_constants(&PulseShape::Linear, DT, 4096).unwrap();
        assert!((c.avg_power - 1.0).abs() < 1e-12);
        assert!((c.cross.re + 1.5).abs() < 1e-12);
        assert!(rel(c.msb, 3.0 / (DT * DT)) < 1e-12);
    }

    #[test]
    fn sinc_constants() {
        let c = pulse_constants(&PulseShape::Sinc, DT, 4096).unwrap();
        assert!((c.avg_power - 1.0).abs() < 1e-9);
        // reference values from adaptive quadrature of the closed-form derivative
        assert!(rel(c.msb_normalized(), 2.551_443_857_461_919_6) < 1e-8);
        assert!((c.cross.re + 1.107_636_414_351_798_7).abs() < 1e-9);
        assert_eq!(c.cross.im, 0.0);
    }

    #[test]
    fn eval_examples() {
        assert!((eval_pulse(&PulseShape::Cosine, 0.0, DT).re - 2f64.sqrt()).abs() < 1e-15);
        assert!(eval_pulse(&PulseShape::Cosine, DT, DT).norm() < 1e-15);
        assert!((eval_pulse(&PulseShape::Sinc, 0.0, DT).re - 1.4883).abs() < 1e-4);
        assert_eq!(eval_pulse(&PulseShape::Linear, -1e-9, DT).norm(), 0.0);
        assert_eq!(eval_pulse(&PulseShape::Linear, 1.5 * DT, DT).norm(), 0.0);
    }

    #[test]
    fn builtins_normalized_and_real_identity() {
        for p in [PulseShape::Cosine, PulseShape::Sinc, PulseShape::Linear] {
            let c = pulse_constants(&p, DT, 1024).unwrap();
            assert!((c.avg_power - 1.0).abs() < 1e-6, "{}", p.name());
            let ends = 0.5 * (p.shape(1.0).norm_sqr() - p.shape(0.0).norm_sqr());
            assert!((c.cross.re - ends).abs() < 1e-6, "{}", p.name());
            assert!(c.msb >= 0.0);
            assert!(rel(c.energy, c.avg_power * DT) < 1e-14);
        }
    }

    #[test]
    fn quadrature_converged_at_4096() {
        for p in [PulseShape::Cosine, PulseShape::Sinc, PulseShape::Linear] {
            let a = pulse_constants(&p, DT, 4096).unwrap();
            let b = pulse_constants(&p, DT, 8192).unwrap();
            assert!(rel(a.avg_power, b.avg_power) < 1e-8);
            assert!(rel(a.msb, b.msb) < 1e-8);
            assert!((a.cross - b.cross).norm() / b.cross.norm() < 1e-8);
        }
    }

    #[test]
    fn custom_pulse_numeric_derivative_matches_builtin() {
        let custom = PulseShape::Custom(CustomPulse::new("cos-fd", |u| {
            Complex64::new(2f64.sqrt() * (PI * u / 2.0).cos(), 0.0)
        }));
        let a = pulse_constants(&custom, DT, 4096).unwrap();
        let b = pulse_constants(&PulseShape::Cosine, DT, 4096).unwrap();
        assert!(rel(a.msb, b.msb) < 1e-6);
        assert!((a.cross - b.cross).norm() < 1e-6);
    }

    #[test]
    fn complex_custom_pulse_has_complex_cross_energy() {
        // chirp-like unit-power pulse: g = exp(j π u²), ε_ġ = ∫ (−j 2π u) du = −jπ
        let chirp = PulseShape::Custom(
            CustomPulse::new("chirp", |u| Complex64::from_polar(1.0, PI * u * u))
                .with_derivative(|u| {
                    Complex64::new(0.0, 2.0 * PI * u) * Complex64::from_polar(1.0, PI * u * u)
                }),
        );
        let c = pulse_constants(&chirp, DT, 4096).unwrap();
        assert!((c.avg_power - 1.0).abs() < 1e-12);
        assert!((c.cross - Complex64::new(0.0, -PI)).norm() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(pulse_constants(&PulseShape::Cosine, 0.0, 4096).is_err());
        assert!(pulse_constants(&PulseShape::Cosine, DT, 16).is_err());
        let nan = PulseShape::Custom(CustomPulse::new("nan", |_| Complex64::new(f64::NAN, 0.0)));
        assert!(matches!(
            pulse_constants(&nan, DT, 128),
            Err(IsacError::Evaluation(_))
        ));
        assert!("g4".parse::<PulseName>().is_err());
        assert_eq!("G2".parse::<PulseName>().unwrap(), PulseName::G2);
    }
}
