//! Convergence bound for non-convex objectives under over-the-air
//! aggregation with γ-approximate sparsification:
//!
//! ```text
//! (1/T) Σ_t E‖∇f(θ^t)‖² ≤ 2(E f(θ⁰) − f*) / (η μ_h T) + B1/μ_h² + η L B2/μ_h
//! B1 = 2σ_h²(G² + σ_g²)/N + 2μ_h²(1 − γ)(G² + σ_g²)
//! B2 = (μ_h² + σ_h²)(G² + σ_g²) + k σ_z²
//! ```
//!
//! The last two terms form the error floor that remains as `T → ∞`.

use crate::error::{Error, Result};
use crate::model_state::{GradientVector, ModelParams};
use crate::task::{gradient_dissimilarity, mean_client_grad_norm_sq, ClientData, Task};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    /// Smoothness constant.
    pub l: f64,
    pub g_sq: f64,
    pub sigma_g_sq: f64,
    pub mu_h: f64,
    pub sigma_h_sq: f64,
    pub sigma_z_sq: f64,
    pub gamma: f64,
    pub k: usize,
    pub n: usize,
    pub eta: f64,
    pub f0: f64,
    pub f_star: f64,
}

impl BoundConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_h > 0.0) {
            return Err(Error::config(format!("bound needs mu_h > 0 (got {})", self.mu_h)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(format!("gamma must lie in (0, 1] (got {})", self.gamma)));
        }
        if !(self.l > 0.0) || !(self.eta > 0.0) || self.n == 0 {
            return Err(Error::config("bound needs L > 0, eta > 0 and N >= 1"));
        }
        let nonneg = [self.g_sq, self.sigma_g_sq, self.sigma_h_sq, self.sigma_z_sq];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::config("G², σ_g², σ_h² and σ_z² must be >= 0"));
        }
        Ok(())
    }

    fn spread(&self) -> f64 {
        self.g_sq + self.sigma_g_sq
    }

    /// Optimisation term `2(f0 − f*) / (η μ_h T)`.
    pub fn transient(&self, rounds: usize) -> f64 {
        2.0 * (self.f0 - self.f_star) / (self.eta * self.mu_h * rounds as f64)
    }

    /// `B1/μ_h² + η L B2/μ_h`.
    pub fn floor(&self) -> f64 {
        compute_b1(self) / (self.mu_h * self.mu_h) + self.eta * self.l * compute_b2(self) / self.mu_h
    }
}

pub fn compute_b1(c: &BoundConstants) -> f64 {
    2.0 * c.sigma_h_sq * c.spread() / c.n as f64 + 2.0 * c.mu_h * c.mu_h * (1.0 - c.gamma) * c.spread()
}

pub fn compute_b2(c: &BoundConstants) -> f64 {
    (c.mu_h * c.mu_h + c.sigma_h_sq) * c.spread() + c.k as f64 * c.sigma_z_sq
}

/// Right-hand side of the bound after `rounds` rounds.
pub fn bound_rhs(c: &BoundConstants, rounds: usize) -> Result<f64> {
    c.validate()?;
    if rounds == 0 {
        return Err(Error::config("bound needs T >= 1"));
    }
    Ok(c.transient(rounds) + c.floor())
}

/// Problem-dependent constants estimated from a task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConstants {
    pub l: f64,
    pub g_sq: f64,
    pub sigma_g_sq: f64,
    pub f_star: f64,
}

/// Knobs for the non-quadratic estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimateOptions {
    /// Power-iteration steps on finite-difference Hessian products.
    pub curvature_iters: usize,
    pub fd_step: f64,
    /// Noise-free gradient-descent steps used to approximate `f*`.
    pub descent_steps: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions { curvature_iters: 60, fd_step: 1e-4, descent_steps: 2000 }
    }
}

/// Estimates L, G², σ_g² and f* from the client objectives.
///
/// G² and σ_g² are maxima of their defining client averages over
/// `sample_thetas`. For the quadratic, L is the top eigenvalue of the
/// curvature matrix and f* is exact; otherwise L is the largest curvature
/// found by power iteration on finite-difference Hessian products at the
/// sample points and f* is the best loss seen during noise-free descent.
pub fn estimate_constants(
    task: &Task,
    clients: &[ClientData],
    sample_thetas: &[ModelParams],
    opts: EstimateOptions,
) -> Result<TaskConstants> {
    if sample_thetas.is_empty() {
        return Err(Error::config("estimate_constants needs at least one sample point"));
    }
    let mut g_sq: f64 = 0.0;
    let mut sigma_g_sq: f64 = 0.0;
    for theta in sample_thetas {
        g_sq = g_sq.max(mean_client_grad_norm_sq(task, theta, clients)?);
        sigma_g_sq = sigma_g_sq.max(gradient_dissimilarity(task, theta, clients)?);
    }

    let (l, f_star) = match task {
        Task::Quadratic(q) => {
            let centers: Vec<Vec<f64>> = clients
                .iter()
                .map(|c| match c {
                    ClientData::Center(b) => Ok(b.clone()),
                    ClientData::Samples(_) => Err(Error::config("quadratic task expects client centres")),
                })
                .collect::<Result<_>>()?;
            (q.largest_eigenvalue(), q.optimum(&centers)?.1)
        }
        _ => {
            let mut l: f64 = 0.0;
            for theta in sample_thetas {
                l = l.max(fd_curvature(task, clients, theta, opts)?);
            }
            let f_star = descend_for_minimum(task, clients, sample_thetas, l, opts.descent_steps)?;
            (l, f_star)
        }
    };
    Ok(TaskConstants { l, g_sq, sigma_g_sq, f_star })
}

fn fd_curvature(task: &Task, clients: &[ClientData], theta: &ModelParams, opts: EstimateOptions) -> Result<f64> {
    let d = task.dim();
    let mut v: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
    let mut lambda: f64 = 0.0;
    for _ in 0..opts.curvature_iters {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let shift = GradientVector::new(v.clone());
        let plus = theta.descend(&shift, -opts.fd_step)?;
        let minus = theta.descend(&shift, opts.fd_step)?;
        let gp = task.global_gradient(&plus, clients)?;
        let gm = task.global_gradient(&minus, clients)?;
        let hv: Vec<f64> = gp
            .as_slice()
            .iter()
            .zip(gm.as_slice())
            .map(|(a, b)| (a - b) / (2.0 * opts.fd_step))
            .collect();
        lambda = hv.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs();
        v = hv;
    }
    Ok(lambda)
}

fn descend_for_minimum(
    task: &Task,
    clients: &[ClientData],
    starts: &[ModelParams],
    l: f64,
    steps: usize,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let mut start = &starts[0];
    for theta in starts {
        let loss = task.global_loss(theta, clients)?;
        if loss < best {
            best = loss;
            start = theta;
        }
    }
    if !(l > 0.0) {
        return Ok(best);
    }
    let eta = 1.0 / l;
    let mut theta = start.clone();
    for _ in 0..steps {
        let g = task.global_gradient(&theta, clients)?;
        theta = theta.descend(&g, eta)?;
        let loss = task.global_loss(&theta, clients)?;
        if !loss.is_finite() {
            break;
        }
        best = best.min(loss);
    }
    Ok(best)
}
