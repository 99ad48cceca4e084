use proptest::prelude::*;

use bisac_core::config;
use bisac_core::fim::{build_fim, crb_numeric, evaluate_crb, FimConvention};
use bisac_core::geometry::{
    channel_matrix, locate_bd, pathloss, scene_geometry, ArrayConfig, BackscatterDevice, Position,
    Scenario,
};
use bisac_core::linalg::{CMatrix, HermitianCovariance};
use bisac_core::optimizer::{solve, SolveStatus, SolverOptions, TradeoffProblem};
use bisac_core::pulses::{pulse_constants, PulseName, DEFAULT_QUADRATURE_POINTS};
use bisac_core::rate::sum_rate_at;
use bisac_core::simulate::sample_excitation;
use bisac_core::{Complex64, SPEED_OF_LIGHT};

fn scenario_one() -> Scenario {
    config::preset("scenario-1").unwrap().scenario
}

fn covariance(entries: &[(f64, f64)], n: usize, power: f64) -> HermitianCovariance {
    let a = CMatrix::from_fn(n, n, |i, j| {
        let (re, im) = entries[i * n + j];
        Complex64::new(re, im)
    });
    let mut m = &a * a.adjoint() + CMatrix::identity(n, n) * Complex64::new(0.05, 0.0);
    let tr = m.trace().re;
    m *= Complex64::new(power / tr, 0.0);
    HermitianCovariance::new(m).unwrap()
}

fn pulse_strategy() -> impl Strategy<Value = PulseName> {
    prop_oneof![Just(PulseName::G1), Just(PulseName::G2), Just(PulseName::G3)]
}

fn device_strategy() -> impl Strategy<Value = (f64, f64, u8)> {
    (0.3f64..2.5, -2.5f64..-0.6, 1u8..=8)
}

fn scene(devices: &[(f64, f64, u8)], mt: usize, mr: usize) -> Option<Scenario> {
    let mut s = scenario_one();
    s.array = ArrayConfig { tx_antennas: mt, rx_antennas: mr, spacing_ratio: 0.5 };
    s.devices = devices
        .iter()
        .map(|&(x, y, k)| BackscatterDevice {
            position: Position::new(x, y),
            symbol: k as f64 / 8.0,
            reflection: 1.0,
        })
        .collect();
    let g = scene_geometry(&s).ok()?;
    let ok = g.iter().all(|b| b.doa.cos().abs() > 0.2 && b.d_rx > 0.2 && b.d_tx > 0.2);
    ok.then_some(s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_identity(phi in -1.5f64..1.5, theta in -1.5f64..1.5, mt in 1usize..9, mr in 1usize..9) {
        let h = channel_matrix(phi, theta, &ArrayConfig { tx_antennas: mt, rx_antennas: mr, spacing_ratio: 0.5 });
        let tr = (&h * h.adjoint()).trace();
        prop_assert!((tr.re - (mt * mr) as f64).abs() < 1e-9 * (mt * mr) as f64);
        prop_assert!(tr.im.abs() < 1e-9);
    }

    #[test]
    fn pathloss_decreases(d in 0.1f64..50.0, step in 1e-3f64..5.0, gamma in 0.5f64..4.0) {
        let a = pathloss(d, 1e-3, gamma).unwrap();
        let b = pathloss(d + step, 1e-3, gamma).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn localization_roundtrip(x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let s = scenario_one();
        let bd = Position::new(x, y);
        let (dt, dr) = (bd.distance(&s.tx), bd.distance(&s.rx));
        let d0 = s.tx.distance(&s.rx);
        prop_assume!(dt > 0.1 && dr > 0.1 && dt + dr > d0 + 0.01);
        let loc = locate_bd((dt + dr) / SPEED_OF_LIGHT, s.rx.bearing_to(&bd), &s).unwrap();
        prop_assert!(loc.position.distance(&bd) < 1e-9);
        prop_assert!((loc.d_rx - dr).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_dense_inverse(
        devices in prop::collection::vec(device_strategy(), 1..4),
        mt in 2usize..6,
        mr in 2usize..6,
        entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 36),
        pulse in pulse_strategy(),
    ) {
        let Some(s) = scene(&devices, mt, mr) else { return Ok(()); };
        let g = scene_geometry(&s).unwrap();
        let r = covariance(&entries, mt, s.power_budget);
        let pc = pulse_constants(&pulse.shape(), s.symbol_duration, DEFAULT_QUADRATURE_POINTS).unwrap();
        for conv in [FimConvention::Rescaled, FimConvention::Physical] {
            let rep = evaluate_crb(&s, &g, &pc, &r, conv).unwrap();
            prop_assert!(rep.mismatch < 1e-10, "{conv}: {}", rep.mismatch);
            let n = crb_numeric(&build_fim(&s, &g, &pc, &r, conv).unwrap().assemble()).unwrap();
            for (a, b) in n.diagonal.iter().zip(&n.block_diagonal) {
                prop_assert!((a - b).abs() <= 1e-10 * a.abs());
            }
        }
    }

    #[test]
    fn crb_is_inverse_homogeneous(
        entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
        c in 0.01f64..100.0,
        pulse in pulse_strategy(),
    ) {
        let mut s = scenario_one();
        s.array.tx_antennas = 4;
        let g = scene_geometry(&s).unwrap();
        let r = covariance(&entries, 4, s.power_budget);
        let pc = pulse_constants(&pulse.shape(), s.symbol_duration, DEFAULT_QUADRATURE_POINTS).unwrap();
        let a = evaluate_crb(&s, &g, &pc, &r, FimConvention::Rescaled).unwrap().crb_total;
        let b = evaluate_crb(&s, &g, &pc, &r.scaled(c), FimConvention::Rescaled).unwrap().crb_total;
        prop_assert!((b * c / a - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rate_grows_with_power(
        entries in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 16),
        c in 1.01f64..10.0,
    ) {
        let mut s = config::preset("scenario-2").unwrap().scenario;
        s.array.tx_antennas = 4;
        let g = scene_geometry(&s).unwrap();
        let r = covariance(&entries, 4, s.power_budget);
        let a = sum_rate_at(&s, &g, &r).unwrap();
        let b = sum_rate_at(&s, &g, &r.scaled(c)).unwrap();
        prop_assert!(a > 0.0 && b > a);
    }

    #[test]
    fn rate_is_concave_along_segments(
        e1 in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
        e2 in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
        w in 0.0f64..1.0,
    ) {
        let mut s = config::preset("scenario-2").unwrap().scenario;
        s.array.tx_antennas = 3;
        let g = scene_geometry(&s).unwrap();
        let a = covariance(&e1, 3, 1.0);
        let b = covariance(&e2, 3, 1.0);
        let mix = HermitianCovariance::new(a.matrix() * Complex64::new(w, 0.0) + b.matrix() * Complex64::new(1.0 - w, 0.0)).unwrap();
        let lhs = sum_rate_at(&s, &g, &mix).unwrap();
        let rhs = w * sum_rate_at(&s, &g, &a).unwrap() + (1.0 - w) * sum_rate_at(&s, &g, &b).unwrap();
        prop_assert!(lhs >= rhs - 1e-12);
    }

    #[test]
    fn msb_is_duration_invariant(pulse in pulse_strategy(), dt in 1e-9f64..1e-3) {
        let a = pulse_constants(&pulse.shape(), dt, 1024).unwrap();
        let b = pulse_constants(&pulse.shape(), 5e-7, 1024).unwrap();
        prop_assert!((a.msb_normalized() / b.msb_normalized() - 1.0).abs() < 1e-12);
        prop_assert!((a.energy / dt - b.energy / 5e-7).abs() < 1e-12);
        prop_assert!((a.cross - b.cross).norm() < 1e-12);
    }

    #[test]
    fn excitation_is_seeded(seed in any::<u64>()) {
        let r = HermitianCovariance::isotropic(3, 0.2);
        prop_assert_eq!(sample_excitation(&r, 16, seed), sample_excitation(&r, 16, seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn optimum_is_feasible(frac in 0.0f64..0.99, mt in 2usize..5, pulse in pulse_strategy()) {
        let mut s = config::preset("scenario-2").unwrap().scenario;
        s.array.tx_antennas = mt;
        s.array.rx_antennas = 4;
        let pc = pulse_constants(&pulse.shape(), s.symbol_duration, DEFAULT_QUADRATURE_POINTS).unwrap();
        let opts = SolverOptions::default();
        let p = TradeoffProblem::new(s.clone(), pc, 0.0).unwrap();
        let gmax = bisac_core::optimizer::feasibility_probe(&p, &opts).unwrap().gamma_max;
        let sol = solve(&p.with_gamma(frac * gmax), &opts).unwrap();
        prop_assert_eq!(sol.status, SolveStatus::Optimal);
        prop_assert!(sol.covariance.trace() <= s.power_budget * (1.0 + 1e-9));
        prop_assert!(sol.covariance.min_eigenvalue() >= -1e-12);
        prop_assert!(sol.rate >= frac * gmax * (1.0 - 1e-9));
        // the optimum is no worse than the isotropic point when that is feasible
        let iso = HermitianCovariance::isotropic(mt, s.power_budget / mt as f64);
        let g = scene_geometry(&s).unwrap();
        if sum_rate_at(&s, &g, &iso).unwrap() >= frac * gmax {
            let c_iso = evaluate_crb(&s, &g, &pc, &iso, FimConvention::Rescaled).unwrap().crb_total;
            prop_assert!(sol.crb.unwrap().crb_total <= c_iso * (1.0 + 1e-8));
        }
    }
}
