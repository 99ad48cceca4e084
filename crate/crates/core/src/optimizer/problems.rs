//! The two barrier problems: CRB minimization in the auxiliary-variable form
//! and sum-rate maximization (the feasibility probe).
//!
//! The covariance is parameterized as `R_x = P_0 R̃`, `R̃ = Σ r_k E_k` over the
//! real Hermitian basis, so the power constraint reads `Tr R̃ < 1`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::barrier::{BarrierProblem, Quadratic};
use super::TradeoffProblem;
use crate::linalg::{hermitian_basis, hermitian_from_coords, trace_functional_coords, trace_product, CMatrix};
use crate::rate::{snr_factor, sum_rate, sum_rate_hessian, RateMatrix};

/// `R̃ ≻ 0` and `Tr R̃ < 1`.
pub(crate) struct CovarianceModel {
    pub n_tx: usize,
    pub basis: Vec<CMatrix>,
    /// Coordinates of `Tr R̃`.
    trace: DVector<f64>,
}

impl CovarianceModel {
    pub fn new(n_tx: usize) -> Self {
        let basis = hermitian_basis(n_tx);
        let trace = DVector::from_fn(basis.len(), |k, _| if k < n_tx { 1.0 } else { 0.0 });
        Self { n_tx, basis, trace }
    }

    pub fn coords(&self) -> usize {
        self.basis.len()
    }

    pub fn matrix(&self, x: &DVector<f64>) -> CMatrix {
        hermitian_from_coords(self.n_tx, &x.as_slice()[..self.coords()])
    }

    /// `−ln det R̃ − ln(1 − Tr R̃)`.
    pub fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let r = self.matrix(x);
        let slack = 1.0 - r.trace().re;
        if !(slack > 0.0) {
            return None;
        }
        let ch = r.cholesky()?;
        let logdet: f64 = (0..self.n_tx).map(|i| 2.0 * ch.l_dirty()[(i, i)].re.ln()).sum();
        if !logdet.is_finite() {
            return None;
        }
        Some(-logdet - slack.ln())
    }

    /// Adds value and derivatives of the covariance barrier into `q`.
    pub fn accumulate(&self, x: &DVector<f64>, q: &mut Quadratic) -> Option<()> {
        q.value += self.value(x)?;
        let r = self.matrix(x);
        let slack = 1.0 - r.trace().re;
        let inv = r.cholesky()?.inverse();
        let m = self.coords();
        let g = trace_functional_coords(&inv);
        let prods: Vec<CMatrix> = self.basis.iter().map(|e| &inv * e).collect();
        for a in 0..m {
            q.grad[a] += -g[a] + self.trace[a] / slack;
            for b in a..m {
                let v = trace_product(&prods[a], &prods[b]).re
                    + self.trace[a] * self.trace[b] / (slack * slack);
                q.hess[(a, b)] += v;
                if a != b {
                    q.hess[(b, a)] += v;
                }
            }
        }
        Some(())
    }

    pub fn barrier_parameter(&self) -> f64 {
        self.n_tx as f64 + 1.0
    }
}

/// `C_sum(P_0 R̃)` with derivatives in the `R̃` coordinates.
pub(crate) struct RateModel {
    pub scenario: crate::geometry::Scenario,
    pub kernels: Vec<Vec<CMatrix>>,
    pub power: f64,
}

impl RateModel {
    pub fn new(problem: &TradeoffProblem) -> Self {
        Self {
            scenario: problem.scenario.clone(),
            kernels: crate::rate::rate_kernels(&problem.scenario, &problem.geometry),
            power: problem.scenario.power_budget,
        }
    }

    fn rate_matrix(&self, r: &CMatrix) -> RateMatrix {
        let l = self.kernels.len();
        RateMatrix::from_matrix(CMatrix::from_fn(l, l, |i, j| {
            trace_product(&self.kernels[i][j], r) * self.power
        }))
    }

    pub fn value(&self, r: &CMatrix) -> Option<f64> {
        sum_rate(&self.scenario, &self.rate_matrix(r)).ok()
    }

    /// Value, gradient and Hessian of `C_sum` over the covariance coordinates.
    pub fn quadratic(&self, r: &CMatrix, basis: &[CMatrix]) -> Option<Quadratic> {
        let f = self.rate_matrix(r);
        let value = sum_rate(&self.scenario, &f).ok()?;
        let inv = crate::rate::regularized_inverse(&self.scenario, &f).ok()?;
        let c = snr_factor(&self.scenario);
        let scale = c / (self.scenario.symbols_per_slot as f64 * std::f64::consts::LN_2);
        let n = r.nrows();
        let mut g = CMatrix::zeros(n, n);
        for (i, row) in self.kernels.iter().enumerate() {
            for (j, k) in row.iter().enumerate() {
                g += k * (inv[(j, i)] * scale);
            }
        }
        let grad = DVector::from_vec(trace_functional_coords(&g)) * self.power;
        let hess = sum_rate_hessian(&self.scenario, &self.kernels, &inv, basis)
            * (self.power * self.power);
        Some(Quadratic { value, grad, hess })
    }
}

/// Maximizes the sum rate over `Tr R̃ < 1`, `R̃ ≻ 0`; objective `−C_sum / scale`.
pub(crate) struct ProbeProblem {
    pub cov: CovarianceModel,
    pub rate: RateModel,
    pub scale: f64,
}

impl BarrierProblem for ProbeProblem {
    fn dim(&self) -> usize {
        self.cov.coords()
    }

    fn barrier_parameter(&self) -> f64 {
        self.cov.barrier_parameter()
    }

    fn objective(&self, x: &DVector<f64>) -> Quadratic {
        let r = self.cov.matrix(x);
        match self.rate.quadratic(&r, &self.cov.basis) {
            Some(q) => Quadratic {
                value: -q.value / self.scale,
                grad: -q.grad / self.scale,
                hess: -q.hess / self.scale,
            },
            None => Quadratic {
                value: f64::INFINITY,
                ..Quadratic::zeros(self.dim())
            },
        }
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        self.rate
            .value(&self.cov.matrix(x))
            .map_or(f64::INFINITY, |v| -v / self.scale)
    }

    fn barrier(&self, x: &DVector<f64>) -> Option<Quadratic> {
        let mut q = Quadratic::zeros(self.dim());
        self.cov.accumulate(x, &mut q)?;
        Some(q)
    }

    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        self.cov.value(x)
    }
}

/// A 2x2 LMI `[[a, b], [b, c]] ≻ 0` whose entries are linear in `x`.
#[derive(Debug, Clone)]
pub(crate) struct Lmi2 {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub c: DVector<f64>,
}

impl Lmi2 {
    pub fn entries(&self, x: &DVector<f64>) -> (f64, f64, f64) {
        (self.a.dot(x), self.b.dot(x), self.c.dot(x))
    }

    fn value(&self, x: &DVector<f64>) -> Option<f64> {
        let (a, b, c) = self.entries(x);
        let det = a * c - b * b;
        (a > 0.0 && det > 0.0).then(|| -det.ln())
    }

    /// `−ln det`: gradient `−∇det / det`,
    /// Hessian `∇det ∇detᵀ / det² − (∇a ∇cᵀ + ∇c ∇aᵀ − 2 ∇b ∇bᵀ) / det`.
    fn accumulate(&self, x: &DVector<f64>, q: &mut Quadratic) -> Option<()> {
        let (a, b, c) = self.entries(x);
        let det = a * c - b * b;
        if !(a > 0.0 && det > 0.0) {
            return None;
        }
        q.value -= det.ln();
        let gdet = &self.a * c + &self.c * a - &self.b * (2.0 * b);
        q.grad -= &gdet / det;
        q.hess += &gdet * gdet.transpose() / (det * det);
        let cross = &self.a * self.c.transpose() + &self.c * self.a.transpose()
            - &self.b * self.b.transpose() * 2.0;
        q.hess -= cross / det;
        Some(())
    }
}

/// Minimizes `Σ_l (1/ω_l + 1/ν_l)` under the LMIs, the power and PSD
/// constraints, and (when `Γ > 0`) the sum-rate constraint.
///
/// Variables: `x = [r (M_t²), u (L), v (L)]`, `ω_l = ω⁰_l u_l`, `ν_l = ν⁰_l v_l`.
/// The objective is divided by its value at the start point.
pub(crate) struct CrbProblem {
    pub cov: CovarianceModel,
    pub rate: Option<(RateModel, f64)>,
    pub lmis: Vec<Lmi2>,
    pub omega0: Vec<f64>,
    pub nu0: Vec<f64>,
    pub scale: f64,
    pub devices: usize,
}

/// Trace functionals of one device in `R̃` coordinates: `f`, `g`, `h` per unit `R̃`.
pub(crate) struct DeviceTraces {
    pub f: DVector<f64>,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
}

pub(crate) fn device_traces(problem: &TradeoffProblem, basis_len: usize) -> Vec<DeviceTraces> {
    let p0 = problem.scenario.power_budget;
    let m_r = problem.scenario.array.rx_antennas;
    let lam = CMatrix::from_fn(m_r, m_r, |i, j| {
        Complex64::new(if i == j { i as f64 } else { 0.0 }, 0.0)
    });
    problem
        .geometry
        .iter()
        .map(|geo| {
            let h = &geo.channel;
            let hh = h.adjoint();
            let mk = |q: CMatrix| {
                let v = trace_functional_coords(&q);
                debug_assert_eq!(v.len(), basis_len);
                DVector::from_vec(v) * p0
            };
            DeviceTraces {
                f: mk(&hh * h),
                g: mk(&hh * &lam * h),
                h: mk(&hh * &lam * &lam * h),
            }
        })
        .collect()
}

impl CrbProblem {
    /// Builds the problem around the start point `r_start` (coordinates of `R̃`).
    pub fn new(problem: &TradeoffProblem, r_start: &[f64], gamma: Option<f64>) -> Self {
        let cov = CovarianceModel::new(problem.scenario.array.tx_antennas);
        let n = cov.coords();
        let l = problem.geometry.len();
        let dim = n + 2 * l;
        let traces = device_traces(problem, n);
        let (eg, msb, e) = problem.pulse_scalars();
        let r0 = DVector::from_column_slice(r_start);
        let mut lmis = Vec::with_capacity(2 * l);
        let mut omega0 = Vec::with_capacity(l);
        let mut nu0 = Vec::with_capacity(l);
        let embed = |v: &DVector<f64>| {
            let mut out = DVector::zeros(dim);
            out.rows_mut(0, n).copy_from(v);
            out
        };
        for (i, t) in traces.iter().enumerate() {
            let xi = problem.xi[i];
            let c_l = problem.doa_scale[i];
            let (f, g, h) = (t.f.dot(&r0), t.g.dot(&r0), t.h.dot(&r0));
            let tau_diag = eg * msb * f;
            let doa_diag = eg * h;
            let cross = e * g;
            // Schur-complement boundaries at the start point
            let w = xi * (tau_diag - cross * cross / doa_diag);
            let v = xi * (doa_diag - cross * cross / tau_diag) / c_l;
            omega0.push(w);
            nu0.push(v);
            // first family: [[ε_g F̄² f − ω/ξ, e g], [e g, ε_g h]]
            let (sa, sc) = (1.0 / tau_diag, 1.0 / doa_diag);
            let mut a = embed(&(&t.f * (eg * msb)));
            a[n + i] = -w / xi;
            lmis.push(Lmi2 {
                a: a * sa,
                b: embed(&(&t.g * e)) * (sa * sc).sqrt(),
                c: embed(&(&t.h * eg)) * sc,
            });
            // second family: [[ε_g h − c_l ν/ξ, e g], [e g, ε_g F̄² f]]
            let mut a = embed(&(&t.h * eg));
            a[n + l + i] = -c_l * v / xi;
            lmis.push(Lmi2 {
                a: a * sc,
                b: embed(&(&t.g * e)) * (sa * sc).sqrt(),
                c: embed(&(&t.f * (eg * msb))) * sa,
            });
        }
        let scale: f64 = omega0.iter().chain(&nu0).map(|v| 1.0 / v).sum();
        Self {
            cov,
            rate: gamma.map(|g| (RateModel::new(problem), g)),
            lmis,
            omega0,
            nu0,
            scale,
            devices: l,
        }
    }

    pub fn start_point(&self, r_start: &[f64]) -> DVector<f64> {
        let n = self.cov.coords();
        DVector::from_fn(n + 2 * self.devices, |k, _| if k < n { r_start[k] } else { 0.5 })
    }

    fn rate_slack(&self, x: &DVector<f64>) -> Option<f64> {
        match &self.rate {
            None => Some(f64::INFINITY),
            Some((model, gamma)) => {
                let s = model.value(&self.cov.matrix(x))? - gamma;
                (s > 0.0).then_some(s)
            }
        }
    }

    fn aux_ok(&self, x: &DVector<f64>) -> bool {
        let n = self.cov.coords();
        (n..n + 2 * self.devices).all(|k| x[k] > 0.0)
    }
}

impl BarrierProblem for CrbProblem {
    fn dim(&self) -> usize {
        self.cov.coords() + 2 * self.devices
    }

    fn barrier_parameter(&self) -> f64 {
        // 2 per 2x2 LMI, M_t + 1 for the covariance, 1 per scalar barrier
        let rate = if self.rate.is_some() { 1.0 } else { 0.0 };
        4.0 * self.devices as f64 + self.cov.barrier_parameter() + rate + 2.0 * self.devices as f64
    }

    fn objective(&self, x: &DVector<f64>) -> Quadratic {
        let n = self.cov.coords();
        let l = self.devices;
        let mut q = Quadratic::zeros(self.dim());
        for i in 0..l {
            for (k, w0) in [(n + i, self.omega0[i]), (n + l + i, self.nu0[i])] {
                let u = x[k];
                q.value += 1.0 / (w0 * u * self.scale);
                q.grad[k] = -1.0 / (w0 * u * u * self.scale);
                q.hess[(k, k)] = 2.0 / (w0 * u * u * u * self.scale);
            }
        }
        q
    }

    fn objective_value(&self, x: &DVector<f64>) -> f64 {
        let n = self.cov.coords();
        let l = self.devices;
        (0..l)
            .map(|i| {
                1.0 / (self.omega0[i] * x[n + i] * self.scale)
                    + 1.0 / (self.nu0[i] * x[n + l + i] * self.scale)
            })
            .sum()
    }

    fn barrier(&self, x: &DVector<f64>) -> Option<Quadratic> {
        if !self.aux_ok(x) {
            return None;
        }
        let mut q = Quadratic::zeros(self.dim());
        self.cov.accumulate(x, &mut q)?;
        for lmi in &self.lmis {
            lmi.accumulate(x, &mut q)?;
        }
        let n = self.cov.coords();
        for k in n..n + 2 * self.devices {
            q.value -= x[k].ln();
            q.grad[k] -= 1.0 / x[k];
            q.hess[(k, k)] += 1.0 / (x[k] * x[k]);
        }
        if let Some((model, gamma)) = &self.rate {
            let r = self.cov.matrix(x);
            let rq = model.quadratic(&r, &self.cov.basis)?;
            let s = rq.value - gamma;
            if !(s > 0.0) {
                return None;
            }
            q.value -= s.ln();
            let mut g = DVector::zeros(self.dim());
            g.rows_mut(0, n).copy_from(&rq.grad);
            q.grad -= &g / s;
            q.hess += &g * g.transpose() / (s * s);
            let mut h = DMatrix::zeros(self.dim(), self.dim());
            h.view_mut((0, 0), (n, n)).copy_from(&rq.hess);
            q.hess -= h / s;
        }
        Some(q)
    }

    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
        if !self.aux_ok(x) {
            return None;
        }
        let mut v = self.cov.value(x)?;
        for lmi in &self.lmis {
            v += lmi.value(x)?;
        }
        let n = self.cov.coords();
        for k in n..n + 2 * self.devices {
            v -= x[k].ln();
        }
        if self.rate.is_some() {
            v -= self.rate_slack(x)?.ln();
        }
        Some(v)
    }
}
