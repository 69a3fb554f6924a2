//! First-order descent with heavy-ball momentum and Armijo backtracking.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::{Model, Objective};

/// Sufficient-decrease constant of the backtracking search.
pub const ARMIJO_C: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Initial trial step; adapted by doubling after accepted steps.
    pub step_size: f64,
    pub max_step: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm drops below this.
    pub tol: f64,
    pub momentum: f64,
    /// Record every `log_every`-th iteration (the final one is always kept).
    pub log_every: usize,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 1e-2,
            max_step: 1e6,
            max_iters: 100_000,
            tol: 1e-8,
            momentum: 0.9,
            log_every: 10,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) || !(self.max_step >= self.step_size) {
            return Err(Error::invalid("step size must be positive and at most max_step"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log_every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Minimized {
    pub theta: DVector<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

pub trait DifferentiableFn {
    fn value(&self, theta: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, DVector<f64>)>;
}

/// An [`Objective`] evaluated on parameter vectors laid out like `template`.
pub struct ModelObjective<'a> {
    pub objective: Objective<'a>,
    pub template: Model,
}

impl DifferentiableFn for ModelObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.objective.loss_at(&self.template, theta)
    }

    fn value_and_gradient(&self, theta: &[f64]) -> Result<(f64, DVector<f64>)> {
        self.objective.loss_and_gradient(&self.template.with_params(theta)?)
    }
}

pub fn minimize<F: DifferentiableFn + ?Sized>(f: &F, theta0: &DVector<f64>, cfg: &OptimizerConfig) -> Result<Minimized> {
    cfg.validate()?;
    let mut trace = Vec::new();
    let mut theta = theta0.clone();
    let mut velocity = DVector::zeros(theta.len());
    let mut step = cfg.step_size;

    let (mut loss, mut grad) = match f.value_and_gradient(theta.as_slice()) {
        Ok(v) => v,
        Err(Error::Numeric { .. }) => return Err(Error::Divergence { trace }),
        Err(e) => return Err(e),
    };

    for iter in 0..cfg.max_iters {
        let grad_norm = grad.norm();
        let done = grad_norm < cfg.tol;
        if iter % cfg.log_every == 0 || done {
            trace.push(TraceEntry { iter, loss, grad_norm });
        }
        if done {
            return Ok(Minimized {
                theta,
                loss,
                grad_norm,
                iterations: iter,
                converged: true,
                trace,
            });
        }

        let mut dir = &velocity * cfg.momentum - &grad;
        let mut slope = grad.dot(&dir);
        if slope >= 0.0 {
            dir = -grad.clone();
            slope = -grad_norm * grad_norm;
        }

        // Backtracking by halving until sufficient decrease.
        let mut t = step;
        let accepted = loop {
            let trial = &theta + &dir * t;
            match f.value(trial.as_slice()) {
                Ok(v) if v <= loss + ARMIJO_C * t * slope => break Some((trial, v)),
                Ok(_) | Err(Error::Numeric { .. }) => {}
                Err(e) => return Err(e),
            }
            t *= 0.5;
            if t < f64::MIN_POSITIVE * 1e10 || t * dir.amax() <= f64::EPSILON * theta.amax().max(1e-300) {
                break None;
            }
        };

        let Some((trial, _)) = accepted else {
            // No representable step decreases the loss: stalled at roundoff.
            trace.push(TraceEntry { iter, loss, grad_norm });
            return Ok(Minimized {
                theta,
                loss,
                grad_norm,
                iterations: iter,
                converged: false,
                trace,
            });
        };

        velocity = &trial - &theta;
        theta = trial;
        step = (t * 2.0).min(cfg.max_step);
        match f.value_and_gradient(theta.as_slice()) {
            Ok((l, g)) if l.is_finite() => {
                loss = l;
                grad = g;
            }
            Ok(_) | Err(Error::Numeric { .. }) => {
                trace.push(TraceEntry {
                    iter: iter + 1,
                    loss: f64::INFINITY,
                    grad_norm: f64::NAN,
                });
                return Err(Error::Divergence { trace });
            }
            Err(e) => return Err(e),
        }
    }

    let grad_norm = grad.norm();
    trace.push(TraceEntry {
        iter: cfg.max_iters,
        loss,
        grad_norm,
    });
    Ok(Minimized {
        theta,
        loss,
        grad_norm,
        iterations: cfg.max_iters,
        converged: grad_norm < cfg.tol,
        trace,
    })
}

/// Trains `model` on `objective`, returning the trained model and run record.
pub fn minimize_model(objective: Objective<'_>, model: &Model, cfg: &OptimizerConfig) -> Result<(Model, Minimized)> {
    let f = ModelObjective {
        objective,
        template: model.clone(),
    };
    let result = minimize(&f, &model.flatten(), cfg)?;
    Ok((model.with_params(result.theta.as_slice())?, result))
}
