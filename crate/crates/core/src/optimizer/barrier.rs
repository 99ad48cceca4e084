//! Path-following log-barrier method for small dense convex problems.
//!
//! A problem supplies a convex objective `φ(x)` and a self-concordant-style
//! barrier `B(x)` that is finite exactly on the strict interior of the feasible
//! set. For increasing `t` the engine minimizes `t φ(x) + B(x)` with damped
//! Newton steps, so `θ / t` bounds the suboptimality, `θ` being the barrier
//! parameter.

use nalgebra::{DMatrix, DVector};

/// Value, gradient and Hessian of a twice-differentiable term.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Quadratic {
    pub fn zeros(n: usize) -> Self {
        Self {
            value: 0.0,
            grad: DVector::zeros(n),
            hess: DMatrix::zeros(n, n),
        }
    }
}

pub trait BarrierProblem {
    fn dim(&self) -> usize;
    /// Barrier parameter `θ`: `θ / t` bounds the objective gap on the central path.
    fn barrier_parameter(&self) -> f64;
    fn objective(&self, x: &DVector<f64>) -> Quadratic;
    fn objective_value(&self, x: &DVector<f64>) -> f64;
    /// `None` outside the strict interior.
    fn barrier(&self, x: &DVector<f64>) -> Option<Quadratic>;
    fn barrier_value(&self, x: &DVector<f64>) -> Option<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct BarrierSettings {
    pub t0: f64,
    pub growth: f64,
    /// Stop once `θ / t < tolerance · |φ(x)|`.
    pub tolerance: f64,
    /// Inner stop once `λ² / 2` falls below this.
    pub newton_tolerance: f64,
    pub max_stages: usize,
    pub max_newton: usize,
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub x: DVector<f64>,
    pub t: f64,
    pub stages: usize,
    pub newton_iterations: usize,
    pub converged: bool,
    /// `θ / t` at exit.
    pub gap_bound: f64,
    /// Last Newton decrement `λ² / 2`.
    pub last_decrement: f64,
}

const ARMIJO: f64 = 0.01;
/// Below this `λ²` the full Newton step is taken whenever it stays feasible.
const QUADRATIC_REGION: f64 = 0.25;
const MIN_STEP: f64 = 1e-16;
/// `λ² / 2` below which a step without measurable decrease of `t φ + B` is
/// treated as centering at working precision.
const STALL_DECREMENT: f64 = 1e-6;
/// A predicted decrease below this many ulps of `t φ + B` cannot be resolved.
const STALL_ULPS: f64 = 1e4;

/// Solves `H Δ = −g` after symmetric diagonal equilibration; adds a growing
/// ridge if the equilibrated Hessian is not numerically positive definite.
fn newton_direction(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Option<DVector<f64>> {
    let n = grad.len();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = hess[(i, i)];
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| hess[(i, j)] * d[i] * d[j]);
    let rhs = DVector::from_fn(n, |i, _| -grad[i] * d[i]);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = scaled.clone();
        for i in 0..n {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let y = ch.solve(&rhs);
            return Some(DVector::from_fn(n, |i, _| y[i] * d[i]));
        }
        ridge = if ridge == 0.0 { 1e-12 } else { ridge * 100.0 };
    }
    None
}

/// Runs the barrier method from a strictly feasible `x0`.
pub fn minimize<P: BarrierProblem>(
    problem: &P,
    x0: DVector<f64>,
    settings: &BarrierSettings,
) -> BarrierOutcome {
    let theta = problem.barrier_parameter();
    let mut x = x0;
    let mut t = settings.t0;
    let mut newton_iterations = 0;
    let mut last_decrement = f64::INFINITY;
    for stage in 1..=settings.max_stages {
        let mut stage_ok = false;
        for _ in 0..settings.max_newton {
            let obj = problem.objective(&x);
            let Some(bar) = problem.barrier(&x) else {
                log::debug!("barrier undefined at the iterate");
                break;
            };
            let grad = &obj.grad * t + &bar.grad;
            let hess = &obj.hess * t + &bar.hess;
            let Some(dir) = newton_direction(&hess, &grad) else {
                log::debug!("Newton system not positive definite");
                break;
            };
            let slope = grad.dot(&dir);
            let lambda2 = -slope;
            last_decrement = lambda2 / 2.0;
            log::trace!("t={t:e} lambda2={lambda2:e}");
            if !(lambda2 >= 0.0) || lambda2 / 2.0 < settings.newton_tolerance {
                stage_ok = true;
                break;
            }
            newton_iterations += 1;
            let f0 = t * obj.value + bar.value;
            let mut alpha = 1.0;
            let mut moved = false;
            let mut stalled = false;
            let unresolvable = lambda2 / 2.0 < STALL_DECREMENT
                || lambda2 / 2.0 < STALL_ULPS * f64::EPSILON * f0.abs();
            while alpha > MIN_STEP {
                let trial = &x + &dir * alpha;
                if let Some(b) = problem.barrier_value(&trial) {
                    let f = t * problem.objective_value(&trial) + b;
                    if unresolvable && !(f < f0 - 4.0 * f64::EPSILON * f0.abs()) {
                        stalled = true;
                        break;
                    }
                    if lambda2 < QUADRATIC_REGION || f <= f0 + ARMIJO * alpha * slope {
                        x = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if stalled {
                log::trace!("centering stalled at working precision, lambda2={lambda2:e}");
                stage_ok = true;
                break;
            }
            if !moved {
                // no representable progress along the Newton direction
                stage_ok = true;
                break;
            }
        }
        let gap = theta / t;
        let scale = problem.objective_value(&x).abs();
        if stage_ok && gap < settings.tolerance * scale {
            return BarrierOutcome {
                x,
                t,
                stages: stage,
                newton_iterations,
                converged: true,
                gap_bound: gap,
                last_decrement,
            };
        }
        if !stage_ok {
            return BarrierOutcome {
                x,
                t,
                stages: stage,
                newton_iterations,
                converged: false,
                gap_bound: gap,
                last_decrement,
            };
        }
        t *= settings.growth;
    }
    BarrierOutcome {
        gap_bound: theta / t,
        x,
        t,
        stages: settings.max_stages,
        newton_iterations,
        converged: false,
        last_decrement,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// minimize c·x subject to 0 < x_i < 1.
    struct BoxLp {
        c: Vec<f64>,
    }

    impl BarrierProblem for BoxLp {
        fn dim(&self) -> usize {
            self.c.len()
        }
        fn barrier_parameter(&self) -> f64 {
            2.0 * self.c.len() as f64
        }
        fn objective(&self, x: &DVector<f64>) -> Quadratic {
            let n = self.dim();
            Quadratic {
                value: self.objective_value(x),
                grad: DVector::from_vec(self.c.clone()),
                hess: DMatrix::zeros(n, n),
            }
        }
        fn objective_value(&self, x: &DVector<f64>) -> f64 {
            x.iter().zip(&self.c).map(|(a, b)| a * b).sum::<f64>() + 10.0
        }
        fn barrier(&self, x: &DVector<f64>) -> Option<Quadratic> {
            let n = self.dim();
            let mut q = Quadratic::zeros(n);
            q.value = self.barrier_value(x)?;
            for i in 0..n {
                q.grad[i] = -1.0 / x[i] + 1.0 / (1.0 - x[i]);
                q.hess[(i, i)] = 1.0 / (x[i] * x[i]) + 1.0 / ((1.0 - x[i]) * (1.0 - x[i]));
            }
            Some(q)
        }
        fn barrier_value(&self, x: &DVector<f64>) -> Option<f64> {
            let mut v = 0.0;
            for &xi in x.iter() {
                if !(xi > 0.0 && xi < 1.0) {
                    return None;
                }
                v -= xi.ln() + (1.0 - xi).ln();
            }
            Some(v)
        }
    }

    #[test]
    fn box_lp_reaches_vertex() {
        let p = BoxLp { c: vec![1.0, -2.0, 0.5] };
        let s = BarrierSettings {
            t0: 1.0,
            growth: 10.0,
            tolerance: 1e-10,
            newton_tolerance: 1e-12,
            max_stages: 40,
            max_newton: 100,
        };
        let out = minimize(&p, DVector::from_element(3, 0.5), &s);
        assert!(out.converged);
        assert!(out.x[0] < 1e-8 && out.x[1] > 1.0 - 1e-8 && out.x[2] < 1e-8);
        assert!((p.objective_value(&out.x) - 8.0).abs() < 1e-8);
    }
}
