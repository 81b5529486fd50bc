//! The power-flow map F(V, θ) = (P, Q) and its derivatives.
//!
//! Ordering is fixed throughout the crate:
//! - state `s`: V at the PQ buses (internal order), then θ at buses 2..Nb;
//! - injections / residual rows: P at buses 2..Nb, then Q at the PQ buses.
//!
//! Voltage magnitudes at the slack and PV buses are held at their setpoints
//! and the slack angle is the zero reference, so none of them are stored.

mod hessian;
mod newton;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::{BusKind, NetworkModel};

pub use hessian::{HessianEntry, HessianTensor};
pub use newton::{newton_solve, newton_solve_with, NewtonOptions, NewtonReport};

pub type JacobianMatrix = DMatrix<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerFlowError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

/// Manifold coordinates: PQ voltage magnitudes followed by non-slack angles.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_pq: usize,
    values: DVector<f64>,
}

impl StateVector {
    pub fn new(n_pq: usize, values: DVector<f64>) -> Self {
        assert!(n_pq <= values.len(), "n_pq exceeds state length");
        Self { n_pq, values }
    }

    pub fn from_parts(v: &[f64], theta: &[f64]) -> Self {
        let values = DVector::from_iterator(v.len() + theta.len(), v.iter().chain(theta).copied());
        Self { n_pq: v.len(), values }
    }

    /// V = 1, θ = 0.
    pub fn flat(model: &NetworkModel) -> Self {
        let mut values = DVector::zeros(model.dim());
        values.rows_mut(0, model.n_pq()).fill(1.0);
        Self {
            n_pq: model.n_pq(),
            values,
        }
    }

    pub fn v(&self) -> &[f64] {
        &self.values.as_slice()[..self.n_pq]
    }

    pub fn theta(&self) -> &[f64] {
        &self.values.as_slice()[self.n_pq..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn n_pq(&self) -> usize {
        self.n_pq
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: DVector<f64>) -> Self {
        Self::new(self.n_pq, values)
    }
}

/// Nodal injections in residual order: P at buses 2..Nb, then Q at PQ buses.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionVector {
    n_p: usize,
    values: DVector<f64>,
}

impl InjectionVector {
    pub fn new(n_p: usize, values: DVector<f64>) -> Self {
        assert!(n_p <= values.len(), "n_p exceeds injection length");
        Self { n_p, values }
    }

    pub fn from_parts(p: &[f64], q: &[f64]) -> Self {
        let values = DVector::from_iterator(p.len() + q.len(), p.iter().chain(q).copied());
        Self { n_p: p.len(), values }
    }

    pub fn zeros(model: &NetworkModel) -> Self {
        Self {
            n_p: model.n_bus() - 1,
            values: DVector::zeros(model.dim()),
        }
    }

    /// Scheduled injections of the model.
    pub fn scheduled(model: &NetworkModel) -> Self {
        let buses = model.buses();
        let p = buses[1..].iter().map(|b| b.p_inj);
        let q = buses.iter().filter(|b| b.kind == BusKind::PQ).map(|b| b.q_inj);
        let values = DVector::from_iterator(model.dim(), p.chain(q));
        Self {
            n_p: model.n_bus() - 1,
            values,
        }
    }

    pub fn p(&self) -> &[f64] {
        &self.values.as_slice()[..self.n_p]
    }

    pub fn q(&self) -> &[f64] {
        &self.values.as_slice()[self.n_p..]
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn as_vector_mut(&mut self) -> &mut DVector<f64> {
        &mut self.values
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: DVector<f64>) -> Self {
        Self::new(self.n_p, values)
    }
}

/// A smooth map from manifold coordinates to injections with analytic first
/// and second derivatives. The geometry is built from any implementor.
pub trait FlowMap: Sync {
    fn dim(&self) -> usize;
    /// Number of leading state entries that are voltage magnitudes.
    fn n_voltage(&self) -> usize;
    fn evaluate(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn hessian(&self, x: &DVector<f64>) -> HessianTensor;
}

impl FlowMap for NetworkModel {
    fn dim(&self) -> usize {
        NetworkModel::dim(self)
    }

    fn n_voltage(&self) -> usize {
        self.n_pq()
    }

    fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        evaluate_raw(self, x)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        jacobian_raw(self, x)
    }

    fn hessian(&self, x: &DVector<f64>) -> HessianTensor {
        hessian::hessian_raw(self, x)
    }
}

fn check_dim(model: &NetworkModel, len: usize) -> Result<(), PowerFlowError> {
    if len == model.dim() {
        Ok(())
    } else {
        Err(PowerFlowError::DimensionMismatch {
            expected: model.dim(),
            found: len,
        })
    }
}

/// F(X): active injections at buses 2..Nb and reactive injections at PQ buses.
pub fn evaluate_f(model: &NetworkModel, x: &StateVector) -> Result<InjectionVector, PowerFlowError> {
    check_dim(model, x.len())?;
    Ok(InjectionVector::new(
        model.n_bus() - 1,
        evaluate_raw(model, x.as_vector()),
    ))
}

pub fn jacobian(model: &NetworkModel, x: &StateVector) -> Result<JacobianMatrix, PowerFlowError> {
    check_dim(model, x.len())?;
    Ok(jacobian_raw(model, x.as_vector()))
}

pub fn hessian(model: &NetworkModel, x: &StateVector) -> Result<HessianTensor, PowerFlowError> {
    check_dim(model, x.len())?;
    Ok(hessian::hessian_raw(model, x.as_vector()))
}

/// Smallest singular value of `j`; zero exactly when `j` is singular.
pub fn singularity_metric(j: &JacobianMatrix) -> f64 {
    if j.is_empty() {
        return f64::INFINITY;
    }
    j.singular_values().min()
}

/// Full-network view of a state: magnitude and angle at every bus plus the
/// state/row index of each bus quantity (if it is a variable).
pub(crate) struct BusFrame<'a> {
    pub model: &'a NetworkModel,
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
}

impl<'a> BusFrame<'a> {
    pub fn new(model: &'a NetworkModel, x: &DVector<f64>) -> Self {
        let ng = model.n_gen();
        let npq = model.n_pq();
        let vm = model
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| if i < ng { b.v_set.unwrap_or(1.0) } else { x[i - ng] })
            .collect();
        let va = (0..model.n_bus())
            .map(|i| if i == 0 { 0.0 } else { x[npq + i - 1] })
            .collect();
        Self { model, vm, va }
    }

    /// State index of the magnitude variable at bus `i`.
    pub fn v_var(&self, i: usize) -> Option<usize> {
        i.checked_sub(self.model.n_gen())
    }

    /// State index of the angle variable at bus `i`.
    pub fn theta_var(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| self.model.n_pq() + i - 1)
    }

    pub fn p_row(&self, i: usize) -> Option<usize> {
        (i > 0).then(|| i - 1)
    }

    pub fn q_row(&self, i: usize) -> Option<usize> {
        i.checked_sub(self.model.n_gen()).map(|k| self.model.n_bus() - 1 + k)
    }
}

/// Which power balance a term belongs to.
#[derive(Clone, Copy)]
pub(crate) enum Balance {
    Active,
    Reactive,
}

/// Angle factor c(φ) and its derivative for the coupling term
/// `V_i V_m c(θ_i - θ_m)`; the second derivative is `-c`.
pub(crate) fn coupling(kind: Balance, g: f64, b: f64, phi: f64) -> (f64, f64) {
    let (s, c) = phi.sin_cos();
    match kind {
        Balance::Active => (g * c + b * s, -g * s + b * c),
        Balance::Reactive => (g * s - b * c, g * c + b * s),
    }
}

/// Self term `k V_i²`: k = G_ii for P, -B_ii for Q.
pub(crate) fn self_coefficient(kind: Balance, g: f64, b: f64) -> f64 {
    match kind {
        Balance::Active => g,
        Balance::Reactive => -b,
    }
}

pub(crate) fn rows(frame: &BusFrame, i: usize) -> [(Balance, Option<usize>); 2] {
    [(Balance::Active, frame.p_row(i)), (Balance::Reactive, frame.q_row(i))]
}

fn evaluate_raw(model: &NetworkModel, x: &DVector<f64>) -> DVector<f64> {
    let frame = BusFrame::new(model, x);
    let (g, b) = (model.g(), model.b());
    let mut out = DVector::zeros(model.dim());
    for i in 0..model.n_bus() {
        for (kind, row) in rows(&frame, i) {
            let Some(row) = row else { continue };
            let vi = frame.vm[i];
            let mut acc = self_coefficient(kind, g[(i, i)], b[(i, i)]) * vi * vi;
            for &m in model.neighbors(i) {
                let (c, _) = coupling(kind, g[(i, m)], b[(i, m)], frame.va[i] - frame.va[m]);
                acc += vi * frame.vm[m] * c;
            }
            out[row] = acc;
        }
    }
    out
}

fn jacobian_raw(model: &NetworkModel, x: &DVector<f64>) -> DMatrix<f64> {
    let frame = BusFrame::new(model, x);
    let (g, b) = (model.g(), model.b());
    let n = model.dim();
    let mut jac = DMatrix::zeros(n, n);
    for i in 0..model.n_bus() {
        let vi = frame.vm[i];
        let (vi_var, ti_var) = (frame.v_var(i), frame.theta_var(i));
        for (kind, row) in rows(&frame, i) {
            let Some(row) = row else { continue };
            if let Some(col) = vi_var {
                jac[(row, col)] += 2.0 * self_coefficient(kind, g[(i, i)], b[(i, i)]) * vi;
            }
            for &m in model.neighbors(i) {
                let vm = frame.vm[m];
                let (c, dc) = coupling(kind, g[(i, m)], b[(i, m)], frame.va[i] - frame.va[m]);
                if let Some(col) = vi_var {
                    jac[(row, col)] += vm * c;
                }
                if let Some(col) = frame.v_var(m) {
                    jac[(row, col)] += vi * c;
                }
                if let Some(col) = ti_var {
                    jac[(row, col)] += vi * vm * dc;
                }
                if let Some(col) = frame.theta_var(m) {
                    jac[(row, col)] -= vi * vm * dc;
                }
            }
        }
    }
    jac
}
