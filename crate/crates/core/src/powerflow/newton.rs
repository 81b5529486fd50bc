use nalgebra::DVector;

use super::{FlowMap, InjectionVector, PowerFlowError, StateVector};
use crate::network::NetworkModel;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Step halvings tried when a full step increases the residual.
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 30,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub state: StateVector,
    pub iterations: usize,
    /// Final ‖F(X) - target‖∞.
    pub residual: f64,
}

/// Solves F(X) = target from `x0` with default options.
pub fn newton_solve(
    model: &NetworkModel,
    target: &InjectionVector,
    x0: &StateVector,
) -> Result<StateVector, PowerFlowError> {
    newton_solve_with(model, target, x0, NewtonOptions::default()).map(|r| r.state)
}

pub fn newton_solve_with(
    model: &NetworkModel,
    target: &InjectionVector,
    x0: &StateVector,
    opts: NewtonOptions,
) -> Result<NewtonReport, PowerFlowError> {
    super::check_dim(model, x0.len())?;
    super::check_dim(model, target.len())?;
    let goal = target.as_vector();
    let mismatch = |x: &DVector<f64>| model.evaluate(x) - goal;

    let mut x = x0.as_vector().clone();
    let mut r = mismatch(&x);
    let mut norm = r.amax();
    for iteration in 0..=opts.max_iter {
        if !norm.is_finite() {
            break;
        }
        if norm < opts.tol {
            return Ok(NewtonReport {
                state: x0.with_values(x),
                iterations: iteration,
                residual: norm,
            });
        }
        if iteration == opts.max_iter {
            break;
        }
        let step = model
            .jacobian(&x)
            .lu()
            .solve(&r)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(PowerFlowError::SingularJacobian { iteration })?;

        let mut scale = 1.0;
        let mut trial = &x - &step;
        let mut trial_r = mismatch(&trial);
        for _ in 0..opts.max_halvings {
            if trial_r.amax() < norm {
                break;
            }
            scale *= 0.5;
            trial = &x - &step * scale;
            trial_r = mismatch(&trial);
        }
        x = trial;
        r = trial_r;
        norm = r.amax();
    }
    Err(PowerFlowError::NonConvergence {
        iterations: opts.max_iter,
        residual: norm,
    })
}
