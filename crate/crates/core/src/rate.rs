//! Sum transmission rate of the BDs seen as a multiple-access channel,
//! `C_sum = (1/N) log₂ det(I_L + N / (σ_c² + σ_z²) · F)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::geometry::{BdGeometry, Scenario};
use crate::linalg::{hermitian_eigenvalues, hermitian_part, trace_product, CMatrix, HermitianCovariance};

/// `F[i, j] = s_i s_j α_i α_j Tr(H_j R_x H_iᴴ)`, Hermitian PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct RateMatrix(CMatrix);

impl RateMatrix {
    /// Wraps a raw matrix, symmetrizing it.
    pub fn from_matrix(f: CMatrix) -> Self {
        Self(hermitian_part(&f))
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `c = N / (σ_c² + σ_z²)`.
pub fn snr_factor(scenario: &Scenario) -> f64 {
    scenario.symbols_per_slot as f64 / scenario.disturbance_power()
}

/// Per-BD amplitude `s_l α_l`.
fn gains(scenario: &Scenario, geometry: &[BdGeometry]) -> Vec<f64> {
    scenario
        .devices
        .iter()
        .zip(geometry)
        .map(|(d, g)| d.symbol * g.alpha)
        .collect()
}

/// Weighted channel products `K_ij = s_i s_j α_i α_j H_iᴴ H_j`, so that
/// `F[i, j] = Tr(K_ij R_x)`.
pub fn rate_kernels(scenario: &Scenario, geometry: &[BdGeometry]) -> Vec<Vec<CMatrix>> {
    let w = gains(scenario, geometry);
    let l = geometry.len();
    (0..l)
        .map(|i| {
            (0..l)
                .map(|j| geometry[i].channel.adjoint() * &geometry[j].channel * Complex64::new(w[i] * w[j], 0.0))
                .collect()
        })
        .collect()
}

pub fn build_rate_matrix(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    r: &HermitianCovariance,
) -> Result<RateMatrix> {
    if let Some(g) = geometry.first() {
        if g.channel.ncols() != r.dim() {
            return Err(IsacError::Dimension(format!(
                "channel has {} columns but R_x is {}x{}",
                g.channel.ncols(),
                r.dim(),
                r.dim()
            )));
        }
    }
    let w = gains(scenario, geometry);
    let l = geometry.len();
    let projected: Vec<CMatrix> = geometry.iter().map(|g| &g.channel * r.matrix()).collect();
    let f = CMatrix::from_fn(l, l, |i, j| {
        // Tr(H_j R H_iᴴ) = Tr((H_j R) H_iᴴ)
        trace_product(&projected[j], &geometry[i].channel.adjoint()) * (w[i] * w[j])
    });
    Ok(RateMatrix::from_matrix(f))
}

/// `C_sum` in bits/s/Hz from the eigenvalues of `F`.
pub fn sum_rate(scenario: &Scenario, f: &RateMatrix) -> Result<f64> {
    scenario.require_disturbance()?;
    let eig = hermitian_eigenvalues(f.matrix());
    let trace = f.matrix().trace().re;
    let c = snr_factor(scenario);
    let mut acc = 0.0;
    for &lam in eig.iter() {
        if lam < -1e-10 * trace.abs().max(f64::MIN_POSITIVE) {
            return Err(IsacError::InvalidMatrix(format!(
                "rate matrix has a negative eigenvalue {lam:e}"
            )));
        }
        acc += (c * lam.max(0.0)).ln_1p();
    }
    Ok(acc / (scenario.symbols_per_slot as f64 * std::f64::consts::LN_2))
}

/// `C_sum(R_x)` in one call.
pub fn sum_rate_at(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    r: &HermitianCovariance,
) -> Result<f64> {
    sum_rate(scenario, &build_rate_matrix(scenario, geometry, r)?)
}

/// Inverse of `I + c F`, the quantity both derivatives need.
pub(crate) fn regularized_inverse(scenario: &Scenario, f: &RateMatrix) -> Result<CMatrix> {
    let c = snr_factor(scenario);
    let a = CMatrix::identity(f.dim(), f.dim()) + f.matrix() * Complex64::new(c, 0.0);
    a.try_inverse()
        .ok_or_else(|| IsacError::InvalidMatrix("I + cF is singular".into()))
}

/// Hermitian `G` with `dC_sum = Re Tr(G dR_x)`:
/// `G = (1 / (N ln 2)) Σ_ij [c (I + cF)⁻¹]_ji K_ij`, symmetrized.
pub fn sum_rate_gradient(
    scenario: &Scenario,
    geometry: &[BdGeometry],
    r: &HermitianCovariance,
) -> Result<CMatrix> {
    let f = build_rate_matrix(scenario, geometry, r)?;
    let inv = regularized_inverse(scenario, &f)?;
    let kernels = rate_kernels(scenario, geometry);
    let c = snr_factor(scenario);
    let scale = c / (scenario.symbols_per_slot as f64 * std::f64::consts::LN_2);
    let n = r.dim();
    let mut g = CMatrix::zeros(n, n);
    for (i, row) in kernels.iter().enumerate() {
        for (j, k) in row.iter().enumerate() {
            g += k * (inv[(j, i)] * scale);
        }
    }
    Ok(hermitian_part(&g))
}

/// Real symmetric Hessian of `C_sum` in the coordinates of `basis`:
/// `−(c² / (N ln 2)) Re Tr(A⁻¹ dF_k A⁻¹ dF_l)` with `A = I + cF`.
pub(crate) fn sum_rate_hessian(
    scenario: &Scenario,
    kernels: &[Vec<CMatrix>],
    inv: &CMatrix,
    basis: &[CMatrix],
) -> DMatrix<f64> {
    let l = kernels.len();
    let c = snr_factor(scenario);
    let scale = c * c / (scenario.symbols_per_slot as f64 * std::f64::consts::LN_2);
    // dF_k[i, j] = Tr(K_ij E_k); premultiplied by A⁻¹
    let dirs: Vec<CMatrix> = basis
        .iter()
        .map(|e| {
            let df = CMatrix::from_fn(l, l, |i, j| trace_product(&kernels[i][j], e));
            inv * df
        })
        .collect();
    let m = basis.len();
    let mut h = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = -scale * trace_product(&dirs[a], &dirs[b]).re;
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{scene_geometry, ArrayConfig, BackscatterDevice, Position};
    use crate::linalg::{hermitian_basis, hermitian_coords, hermitian_from_coords};

    fn scenario(devices: &[(f64, f64, f64)]) -> Scenario {
        Scenario {
            tx: Position::new(0.0, 0.0),
            rx: Position::new(2.0, -1.5),
            array: ArrayConfig::default(),
            devices: devices
                .iter()
                .map(|&(x, y, s)| BackscatterDevice {
                    position: Position::new(x, y),
                    symbol: s,
                    reflection: 1.0,
                })
                .collect(),
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

    fn some_covariance(n: usize, power: f64) -> HermitianCovariance {
        let b = CMatrix::from_fn(n, n, |i, j| {
            Complex64::new((1.0 + i as f64 * 0.7 + j as f64 * 0.3).sin(), (0.4 * (i * j) as f64).cos())
        });
        let r = &b * b.adjoint();
        let t = r.trace().re;
        HermitianCovariance::new(r * Complex64::new(power / t, 0.0)).unwrap()
    }

    #[test]
    fn single_bd_value() {
        let sc = scenario(&[(1.5, -0.5, 1.0)]);
        let geo = scene_geometry(&sc).unwrap();
        let r = HermitianCovariance::isotropic(8, 1.0);
        let f = build_rate_matrix(&sc, &geo, &r).unwrap();
        let alpha2 = 1e-6 * (2.5f64.sqrt() * 1.25f64.sqrt()).powf(-2.7);
        assert!((f.matrix()[(0, 0)].re - 8.0 * alpha2).abs() < 1e-18);
        assert!((f.matrix()[(0, 0)].re - 1.718e-6).abs() < 1e-9);
        let c = sum_rate(&sc, &f).unwrap();
        let oracle = (1.0 + 128.0 * 8.0 * alpha2 / 2e-9).log2() / 128.0;
        assert!((c - oracle).abs() < 1e-14);
        assert!((c - 0.131).abs() < 5e-4);
        assert_eq!(sum_rate_at(&sc, &geo, &HermitianCovariance::zeros(8)).unwrap(), 0.0);
        assert!(sum_rate_at(&sc, &geo, &r.scaled(2.0)).unwrap() > c);
    }

    #[test]
    fn colocated_devices_are_rank_one() {
        let sc = scenario(&[(1.5, -0.5, 0.8), (1.5, -0.5, 0.8)]);
        let geo = scene_geometry(&sc).unwrap();
        let f = build_rate_matrix(&sc, &geo, &some_covariance(8, 1.0)).unwrap();
        let eig = hermitian_eigenvalues(f.matrix());
        assert!(eig.min().abs() < 1e-12 * eig.max());
    }

    #[test]
    fn negative_matrix_rejected() {
        let sc = scenario(&[(1.5, -0.5, 1.0)]);
        let f = RateMatrix::from_matrix(CMatrix::from_element(1, 1, Complex64::new(-1.0, 0.0)));
        assert!(matches!(sum_rate(&sc, &f), Err(IsacError::InvalidMatrix(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sc = scenario(&[(1.5, -0.5, 1.0), (1.2, -0.9, 0.6), (1.8, -0.2, 0.9)]);
        let geo = scene_geometry(&sc).unwrap();
        let r = some_covariance(8, 1.0);
        let g = sum_rate_gradient(&sc, &geo, &r).unwrap();
        assert!(crate::linalg::max_hermitian_defect(&g) < 1e-15);
        let coords = hermitian_coords(r.matrix());
        let basis = hermitian_basis(8);
        let h = 1e-6 * r.trace() / 8.0;
        for (k, e) in basis.iter().enumerate() {
            let mut plus = coords.clone();
            let mut minus = coords.clone();
            plus[k] += h;
            minus[k] -= h;
            let rp = HermitianCovariance::new(hermitian_from_coords(8, &plus)).unwrap();
            let rm = HermitianCovariance::new(hermitian_from_coords(8, &minus)).unwrap();
            let fd = (sum_rate_at(&sc, &geo, &rp).unwrap() - sum_rate_at(&sc, &geo, &rm).unwrap())
                / (2.0 * h);
            let an = trace_product(&g, e).re;
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-3), "coord {k}: {fd} vs {an}");
        }
    }

    #[test]
    fn gradient_at_zero() {
        let sc = scenario(&[(1.5, -0.5, 1.0)]);
        let geo = scene_geometry(&sc).unwrap();
        let g = sum_rate_gradient(&sc, &geo, &HermitianCovariance::zeros(8)).unwrap();
        let c = snr_factor(&sc);
        let alpha2 = geo[0].alpha * geo[0].alpha;
        let expect = geo[0].channel.adjoint() * &geo[0].channel
            * Complex64::new(c * alpha2 / (128.0 * std::f64::consts::LN_2), 0.0);
        assert!((g - &expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut sc = scenario(&[(1.5, -0.5, 1.0), (1.2, -0.9, 0.6)]);
        sc.array = ArrayConfig { tx_antennas: 3, rx_antennas: 4, spacing_ratio: 0.5 };
        let geo = scene_geometry(&sc).unwrap();
        let r = some_covariance(3, 1.0);
        let basis = hermitian_basis(3);
        let f = build_rate_matrix(&sc, &geo, &r).unwrap();
        let inv = regularized_inverse(&sc, &f).unwrap();
        let hess = sum_rate_hessian(&sc, &rate_kernels(&sc, &geo), &inv, &basis);
        let coords = hermitian_coords(r.matrix());
        let h = 1e-6;
        for k in 0..basis.len() {
            let mut p = coords.clone();
            let mut m = coords.clone();
            p[k] += h;
            m[k] -= h;
            let gp = sum_rate_gradient(&sc, &geo, &HermitianCovariance::new(hermitian_from_coords(3, &p)).unwrap()).unwrap();
            let gm = sum_rate_gradient(&sc, &geo, &HermitianCovariance::new(hermitian_from_coords(3, &m)).unwrap()).unwrap();
            for (q, e) in basis.iter().enumerate() {
                let fd = (trace_product(&gp, e).re - trace_product(&gm, e).re) / (2.0 * h);
                assert!((fd - hess[(q, k)]).abs() <= 1e-5 * hess.norm(), "({q},{k})");
            }
        }
    }
}
