//! TOML scenario files and the two built-in presets.
//!
//! The file schema ([`ConfigFile`]) keeps powers in dB / dBm; [`Config`] is the
//! resolved form with linear quantities, an expanded device list and a concrete
//! pulse. dB values are converted only here.
//!
//! ```toml
//! [scenario]
//! tx = [0.0, 0.0]
//! rx = [2.0, -1.5]
//! tx_antennas = 8
//! rx_antennas = 8
//! spacing_ratio = 0.5
//! devices = [{ position = [1.5, -0.5], symbol = 1.0 }]
//!
//! [physics]
//! pathloss_db = 30.0
//! pathloss_exponent = 2.7
//! clutter_power_dbm = -60.0
//! noise_power_dbm = -60.0
//! power_dbm = 30.0
//! symbol_duration = 5e-7
//! symbols_per_slot = 128
//! reflection = 1.0
//!
//! [pulse]
//! name = "g1"
//! ```

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::geometry::{ArrayConfig, BackscatterDevice, Position, Scenario};
use crate::optimizer::SolverOptions;
use crate::pulses::{CustomPulse, PulseName, PulseShape};
use crate::simulate::SimulationRun;
use crate::Complex64;

pub const PRESET_NAMES: [&str; 2] = ["scenario-1", "scenario-2"];

const SCENARIO_1: &str = r#"
[scenario]
tx = [0.0, 0.0]
rx = [2.0, -1.5]
tx_antennas = 8
rx_antennas = 8
spacing_ratio = 0.5
devices = [{ position = [1.5, -0.5], symbol = 1.0 }]

[physics]
pathloss_db = 30.0
pathloss_exponent = 2.7
clutter_power_dbm = -60.0
noise_power_dbm = -60.0
power_dbm = 30.0
symbol_duration = 5e-7
symbols_per_slot = 128
reflection = 1.0
response_delay = 0.0

[pulse]
name = "g1"

[sweep]
start = 0.0
stop = 1.2
points = 15
relative = true
"#;

const SCENARIO_2: &str = r#"
[scenario]
tx = [0.0, 0.0]
rx = [2.0, -1.5]
tx_antennas = 8
rx_antennas = 8
spacing_ratio = 0.5

[scenario.circle]
center = [1.5, -0.5]
radius = 0.5
count = 9
placement = "boundary"
symbols = [1.0, 0.875, 0.75, 0.625, 0.5, 0.375, 0.25, 0.125, 1.0]

[physics]
pathloss_db = 30.0
pathloss_exponent = 2.7
clutter_power_dbm = -60.0
noise_power_dbm = -60.0
power_dbm = 30.0
symbol_duration = 5e-7
symbols_per_slot = 128
reflection = 1.0
response_delay = 0.0

[pulse]
name = "g1"

[sweep]
start = 0.0
stop = 1.2
points = 15
relative = true
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSection,
    pub physics: PhysicsSection,
    #[serde(default)]
    pub pulse: PulseSection,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub simulation: SimulationRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub tx: [f64; 2],
    pub rx: [f64; 2],
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    #[serde(default = "half")]
    pub spacing_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub devices: Vec<DeviceEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circle: Option<CircleLayout>,
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceEntry {
    pub position: [f64; 2],
    pub symbol: f64,
    /// Overrides `physics.reflection` for this device.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reflection: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Equal angular spacing on the circle, offset by half a step.
    Boundary,
    /// Uniform in the disk, drawn from `seed`.
    Disk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleLayout {
    pub center: [f64; 2],
    pub radius: f64,
    pub count: usize,
    pub placement: Placement,
    /// One symbol per device, or a single value shared by all.
    pub symbols: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    /// Path loss at 1 m, dB (a loss: 30 dB means a gain of 10⁻³).
    pub pathloss_db: f64,
    pub pathloss_exponent: f64,
    pub clutter_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub power_dbm: f64,
    pub symbol_duration: f64,
    pub symbols_per_slot: usize,
    #[serde(default = "one")]
    pub reflection: f64,
    #[serde(default)]
    pub response_delay: f64,
}

fn one() -> f64 {
    1.0
}

/// Either a named pulse or a sampled table on `[0, 1]` (linear interpolation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<PulseName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_imag: Option<Vec<f64>>,
}

impl Default for PulseSection {
    fn default() -> Self {
        Self {
            name: Some(PulseName::G1),
            samples: None,
            samples_imag: None,
        }
    }
}

/// Γ_th grid: explicit `values`, or `points` evenly spaced from `start` to
/// `stop`. With `relative = true` the grid is in units of the Γ_max
/// certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(default)]
    pub relative: bool,
}

impl SweepSection {
    pub fn linear(start: f64, stop: f64, points: usize, relative: bool) -> Self {
        Self {
            values: None,
            start: Some(start),
            stop: Some(stop),
            points: Some(points),
            relative,
        }
    }

    /// Grid values, still relative if `relative` is set.
    pub fn grid(&self) -> Result<Vec<f64>> {
        let cfg = |path: &str, message: String| IsacError::Config {
            path: format!("sweep.{path}"),
            message,
        };
        let grid = match (&self.values, self.start, self.stop, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n == 0 {
                    return Err(cfg("points", "must be positive".into()));
                }
                if n == 1 {
                    vec![a]
                } else {
                    (0..n)
                        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                        .collect()
                }
            }
            (Some(_), ..) => {
                return Err(cfg(
                    "values",
                    "give either `values` or `start`/`stop`/`points`, not both".into(),
                ))
            }
            (None, a, b, n) => {
                let missing = [("start", a.is_none()), ("stop", b.is_none()), ("points", n.is_none())]
                    .into_iter()
                    .find(|(_, m)| *m)
                    .map(|(k, _)| k)
                    .unwrap_or("values");
                return Err(cfg(missing, "missing required key".into()));
            }
        };
        if grid.is_empty() {
            return Err(cfg("values", "grid is empty".into()));
        }
        if let Some(bad) = grid.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(cfg("values", format!("Γ_th must be non-negative, got {bad}")));
        }
        Ok(grid)
    }
}

/// Resolved configuration: linear units, explicit devices, concrete pulse.
#[derive(Debug, Clone)]
pub struct Config {
    pub file: ConfigFile,
    pub scenario: Scenario,
    pub pulse: PulseShape,
}

impl Config {
    pub fn from_file(file: ConfigFile) -> Result<Self> {
        let scenario = resolve_scenario(&file)?;
        let pulse = resolve_pulse(&file.pulse)?;
        file.solver.validate().map_err(|e| IsacError::Config {
            path: "solver".into(),
            message: e.to_string(),
        })?;
        file.simulation.validate().map_err(|e| IsacError::Config {
            path: "simulation".into(),
            message: e.to_string(),
        })?;
        if let Some(s) = &file.sweep {
            s.grid()?;
        }
        Ok(Self {
            file,
            scenario,
            pulse,
        })
    }

    /// Re-resolves after the file section was edited (CLI overrides).
    pub fn refresh(self) -> Result<Self> {
        Self::from_file(self.file)
    }

    pub fn to_toml(&self) -> Result<String> {
        to_toml(&self.file)
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates TOML text.
pub fn parse_config(text: &str) -> Result<Config> {
    let de = toml::Deserializer::parse(text).map_err(|e| IsacError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        let line = inner.span().map(|s| line_of(text, s.start));
        let message = match line {
            Some(l) => format!("{} (line {l})", inner.message()),
            None => inner.message().to_string(),
        };
        IsacError::Config {
            path: if path == "." { "<root>".into() } else { path },
            message,
        }
    })?;
    Config::from_file(file)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_config(&text)
}

pub fn preset_text(name: &str) -> Result<&'static str> {
    match name {
        "scenario-1" => Ok(SCENARIO_1),
        "scenario-2" => Ok(SCENARIO_2),
        other => Err(IsacError::Config {
            path: "preset".into(),
            message: format!("unknown preset `{other}`; known: {}", PRESET_NAMES.join(", ")),
        }),
    }
}

pub fn preset(name: &str) -> Result<Config> {
    parse_config(preset_text(name)?)
}

pub fn to_toml(file: &ConfigFile) -> Result<String> {
    toml::to_string_pretty(file).map_err(|e| IsacError::Config {
        path: "<root>".into(),
        message: e.to_string(),
    })
}

fn cfg_err(path: &str, message: impl Into<String>) -> IsacError {
    IsacError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn position(p: [f64; 2]) -> Position {
    Position::new(p[0], p[1])
}

fn resolve_devices(file: &ConfigFile) -> Result<Vec<BackscatterDevice>> {
    let s = &file.scenario;
    let rho = file.physics.reflection;
    match (&s.circle, s.devices.is_empty()) {
        (Some(_), false) => Err(cfg_err(
            "scenario.devices",
            "give either `devices` or `circle`, not both",
        )),
        (None, true) => Err(cfg_err(
            "scenario.devices",
            "missing required key (or a `scenario.circle` generator)",
        )),
        (None, false) => Ok(s
            .devices
            .iter()
            .map(|d| BackscatterDevice {
                position: position(d.position),
                symbol: d.symbol,
                reflection: d.reflection.unwrap_or(rho),
            })
            .collect()),
        (Some(c), true) => {
            if c.count == 0 {
                return Err(cfg_err("scenario.circle.count", "must be positive"));
            }
            if !(c.radius > 0.0) || !c.radius.is_finite() {
                return Err(cfg_err("scenario.circle.radius", "must be positive"));
            }
            let symbols: Vec<f64> = match c.symbols.len() {
                1 => vec![c.symbols[0]; c.count],
                n if n == c.count => c.symbols.clone(),
                n => {
                    return Err(cfg_err(
                        "scenario.circle.symbols",
                        format!("expected 1 or {} entries, got {n}", c.count),
                    ))
                }
            };
            let points = circle_points(c)?;
            Ok(points
                .into_iter()
                .zip(symbols)
                .map(|(position, symbol)| BackscatterDevice {
                    position,
                    symbol,
                    reflection: rho,
                })
                .collect())
        }
    }
}

fn circle_points(c: &CircleLayout) -> Result<Vec<Position>> {
    let center = position(c.center);
    match c.placement {
        Placement::Boundary => Ok((0..c.count)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + 0.5) / c.count as f64;
                Position::new(center.x + c.radius * a.cos(), center.y + c.radius * a.sin())
            })
            .collect()),
        Placement::Disk => {
            let seed = c
                .seed
                .ok_or_else(|| cfg_err("scenario.circle.seed", "disk placement needs a seed"))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..c.count)
                .map(|_| {
                    let r = c.radius * rng.random::<f64>().sqrt();
                    let a = 2.0 * PI * rng.random::<f64>();
                    Position::new(center.x + r * a.cos(), center.y + r * a.sin())
                })
                .collect())
        }
    }
}

fn resolve_scenario(file: &ConfigFile) -> Result<Scenario> {
    let s = &file.scenario;
    let p = &file.physics;
    for (path, v) in [
        ("physics.pathloss_db", p.pathloss_db),
        ("physics.pathloss_exponent", p.pathloss_exponent),
        ("physics.clutter_power_dbm", p.clutter_power_dbm),
        ("physics.noise_power_dbm", p.noise_power_dbm),
        ("physics.power_dbm", p.power_dbm),
    ] {
        if !v.is_finite() {
            return Err(cfg_err(path, "must be finite"));
        }
    }
    if !(p.pathloss_exponent > 0.0) {
        return Err(cfg_err("physics.pathloss_exponent", "must be positive"));
    }
    let scenario = Scenario {
        tx: position(s.tx),
        rx: position(s.rx),
        array: ArrayConfig {
            tx_antennas: s.tx_antennas,
            rx_antennas: s.rx_antennas,
            spacing_ratio: s.spacing_ratio,
        },
        devices: resolve_devices(file)?,
        pathloss_ref: db_to_linear(-p.pathloss_db),
        pathloss_exponent: p.pathloss_exponent,
        clutter_power: dbm_to_watts(p.clutter_power_dbm),
        noise_power: dbm_to_watts(p.noise_power_dbm),
        symbol_duration: p.symbol_duration,
        symbols_per_slot: p.symbols_per_slot,
        response_delay: p.response_delay,
        power_budget: dbm_to_watts(p.power_dbm),
    };
    scenario.validate().map_err(|e| cfg_err("scenario", e.to_string()))?;
    Ok(scenario)
}

fn resolve_pulse(p: &PulseSection) -> Result<PulseShape> {
    match (&p.name, &p.samples) {
        (Some(n), None) => {
            if p.samples_imag.is_some() {
                return Err(cfg_err("pulse.samples_imag", "only valid with `samples`"));
            }
            Ok(n.shape())
        }
        (None, Some(re)) => {
            if re.len() < 2 {
                return Err(cfg_err("pulse.samples", "need at least two samples"));
            }
            let im = match &p.samples_imag {
                Some(im) if im.len() != re.len() => {
                    return Err(cfg_err(
                        "pulse.samples_imag",
                        format!("length {} differs from samples length {}", im.len(), re.len()),
                    ))
                }
                Some(im) => im.clone(),
                None => vec![0.0; re.len()],
            };
            if re.iter().chain(&im).any(|v| !v.is_finite()) {
                return Err(cfg_err("pulse.samples", "non-finite sample"));
            }
            let table: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            Ok(PulseShape::Custom(CustomPulse::new("table", move |u| interpolate(&table, u))))
        }
        (Some(_), Some(_)) => Err(cfg_err("pulse", "give either `name` or `samples`, not both")),
        (None, None) => Err(cfg_err("pulse.name", "missing required key (or `samples`)")),
    }
}

fn interpolate(table: &[Complex64], u: f64) -> Complex64 {
    let last = table.len() - 1;
    let x = u.clamp(0.0, 1.0) * last as f64;
    let i = (x.floor() as usize).min(last - 1);
    let w = x - i as f64;
    table[i] * (1.0 - w) + table[i + 1] * w
}
