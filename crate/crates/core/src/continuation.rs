//! Continuation power flow along a fixed injection direction.
//!
//! Solves `F(X) = base + λ d` for a curve `y(s) = (X(s), λ(s))` with a
//! pseudo-arc-length predictor-corrector. The curve passes smoothly through
//! the λ turning point (the nose, where `J` is singular), which is then
//! located precisely by a quadratic fit followed by bisection on the sign of
//! dλ/ds.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::network::NetworkModel;
use crate::powerflow::{newton_solve, singularity_metric, FlowMap, InjectionVector, PowerFlowError, StateVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContinuationError {
    #[error("continuation direction is zero")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("base case does not solve: {0}")]
    BaseUnsolvable(PowerFlowError),
    #[error("corrector failed at the minimum step on the first step")]
    CorrectorFailure,
    #[error("trace has no turning point")]
    NoTurningPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct CpfOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_step: f64,
    /// Step multiplier after an easy corrector solve.
    pub growth: f64,
    /// Corrector iterations that still count as easy.
    pub easy_iterations: usize,
    pub max_corrector_iterations: usize,
    pub tol: f64,
    pub max_steps: usize,
    /// Stop after λ has decreased on this many consecutive steps.
    pub decreasing_steps: usize,
}

impl Default for CpfOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            min_step: 1e-4,
            max_step: 0.2,
            growth: 1.3,
            easy_iterations: 3,
            max_corrector_iterations: 10,
            tol: 1e-8,
            max_steps: 500,
            decreasing_steps: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    NoseFound,
    MaxSteps,
    CorrectorFailure,
}

#[derive(Debug, Clone)]
pub struct TracePoint {
    pub lambda: f64,
    pub state: StateVector,
    pub sigma_min: f64,
    /// Accumulated chord length from the base point.
    pub arc: f64,
    /// Unit tangent `(dX/ds, dλ/ds)`.
    pub tangent: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct NosePoint {
    pub lambda: f64,
    pub state: StateVector,
    pub sigma_min: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuationTrace {
    pub base: InjectionVector,
    pub direction: InjectionVector,
    pub points: Vec<TracePoint>,
    pub nose: Option<NosePoint>,
    pub halt_reason: HaltReason,
}

/// Parameterized mismatch `F(X) - base - λ d` and its bordered Jacobian.
struct Homotopy<'a> {
    model: &'a NetworkModel,
    base: &'a DVector<f64>,
    direction: &'a DVector<f64>,
}

impl Homotopy<'_> {
    fn n(&self) -> usize {
        self.base.len()
    }

    fn split(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.n();
        (y.rows(0, n).into_owned(), y[n])
    }

    fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        let (x, lambda) = self.split(y);
        self.model.evaluate(&x) - self.base - self.direction * lambda
    }

    /// `[J, -d; rowᵀ]`.
    fn bordered(&self, y: &DVector<f64>, row: &DVector<f64>) -> DMatrix<f64> {
        let n = self.n();
        let (x, _) = self.split(y);
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n)).copy_from(&self.model.jacobian(&x));
        a.view_mut((0, n), (n, 1)).copy_from(&(-self.direction));
        a.row_mut(n).copy_from(&row.transpose());
        a
    }

    /// Unit null vector of `[J, -d]` oriented so that `reference · t > 0`.
    fn tangent(&self, y: &DVector<f64>, reference: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.n();
        let mut rhs = DVector::zeros(n + 1);
        rhs[n] = 1.0;
        let t = self.bordered(y, reference).lu().solve(&rhs)?;
        let norm = t.norm();
        (norm.is_finite() && norm > 0.0).then(|| t / norm)
    }

    /// Newton on `G(y) = 0`, `tᵀ(y - y_prev) = h`. Returns the point and the
    /// iteration count.
    fn correct(
        &self,
        y_prev: &DVector<f64>,
        t: &DVector<f64>,
        h: f64,
        opts: &CpfOptions,
    ) -> Option<(DVector<f64>, usize)> {
        let n = self.n();
        let mut y = y_prev + t * h;
        for iter in 0..=opts.max_corrector_iterations {
            let g = self.residual(&y);
            let arc = t.dot(&(&y - y_prev)) - h;
            let norm = g.amax();
            if !norm.is_finite() {
                return None;
            }
            if norm < opts.tol && arc.abs() < opts.tol {
                return Some((y, iter));
            }
            if iter == opts.max_corrector_iterations {
                break;
            }
            let mut r = DVector::zeros(n + 1);
            r.rows_mut(0, n).copy_from(&g);
            r[n] = arc;
            let dy = self.bordered(&y, t).lu().solve(&r)?;
            y -= dy;
        }
        None
    }
}

fn check_len(expected: usize, found: usize) -> Result<(), ContinuationError> {
    if expected == found {
        Ok(())
    } else {
        Err(ContinuationError::DimensionMismatch { expected, found })
    }
}

/// Traces the solution branch of `F(X) = base + λ d` from λ = 0 past the nose.
/// The base point is solved from a flat start.
pub fn cpf_trace(
    model: &NetworkModel,
    base: &InjectionVector,
    direction: &InjectionVector,
    opts: &CpfOptions,
) -> Result<ContinuationTrace, ContinuationError> {
    check_len(model.dim(), base.len())?;
    let x0 = newton_solve(model, base, &StateVector::flat(model)).map_err(ContinuationError::BaseUnsolvable)?;
    cpf_trace_from(model, base, &x0, direction, opts)
}

/// As [`cpf_trace`], starting from an already solved base state `x0`.
pub fn cpf_trace_from(
    model: &NetworkModel,
    base: &InjectionVector,
    x0: &StateVector,
    direction: &InjectionVector,
    opts: &CpfOptions,
) -> Result<ContinuationTrace, ContinuationError> {
    let n = model.dim();
    check_len(n, base.len())?;
    check_len(n, direction.len())?;
    check_len(n, x0.len())?;
    if direction.as_vector().iter().all(|v| *v == 0.0) {
        return Err(ContinuationError::ZeroDirection);
    }
    let mismatch = (model.evaluate(x0.as_vector()) - base.as_vector()).amax();
    if !(mismatch < opts.tol) {
        let x = newton_solve(model, base, x0).map_err(ContinuationError::BaseUnsolvable)?;
        return cpf_trace_from(model, base, &x, direction, opts);
    }

    let hom = Homotopy {
        model,
        base: base.as_vector(),
        direction: direction.as_vector(),
    };
    let mut y = DVector::zeros(n + 1);
    y.rows_mut(0, n).copy_from(x0.as_vector());
    let mut e_lambda = DVector::zeros(n + 1);
    e_lambda[n] = 1.0;
    let mut t = hom.tangent(&y, &e_lambda).ok_or(ContinuationError::CorrectorFailure)?;

    let point = |y: &DVector<f64>, t: &DVector<f64>, arc: f64| {
        let x = y.rows(0, n).into_owned();
        TracePoint {
            lambda: y[n],
            sigma_min: singularity_metric(&model.jacobian(&x)),
            state: x0.with_values(x),
            arc,
            tangent: t.clone(),
        }
    };

    let mut points = vec![point(&y, &t, 0.0)];
    let mut h = opts.initial_step.clamp(opts.min_step, opts.max_step);
    let mut arc = 0.0;
    let mut decreasing = 0;
    let mut halt_reason = HaltReason::MaxSteps;

    'steps: for _ in 0..opts.max_steps {
        let (y_new, iters) = loop {
            match hom.correct(&y, &t, h, opts) {
                Some(found) => break found,
                None => {
                    h *= 0.5;
                    if h < opts.min_step {
                        if points.len() == 1 {
                            return Err(ContinuationError::CorrectorFailure);
                        }
                        halt_reason = HaltReason::CorrectorFailure;
                        break 'steps;
                    }
                }
            }
        };
        let Some(t_new) = hom.tangent(&y_new, &t) else {
            halt_reason = HaltReason::CorrectorFailure;
            break;
        };
        arc += (&y_new - &y).norm();
        decreasing = if y_new[n] < y[n] { decreasing + 1 } else { 0 };
        y = y_new;
        t = t_new;
        points.push(point(&y, &t, arc));
        if decreasing >= opts.decreasing_steps {
            halt_reason = HaltReason::NoseFound;
            break;
        }
        if iters <= opts.easy_iterations {
            h = (h * opts.growth).min(opts.max_step);
        }
    }

    let mut trace = ContinuationTrace {
        base: base.clone(),
        direction: direction.clone(),
        points,
        nose: None,
        halt_reason,
    };
    trace.nose = nose_point(model, &trace, opts).ok();
    Ok(trace)
}

/// Vertex of the parabola through three `(s, λ)` samples, if it opens downward.
pub fn fit_turning_point(s: [f64; 3], lambda: [f64; 3]) -> Option<(f64, f64)> {
    // Newton divided differences
    let d01 = (lambda[1] - lambda[0]) / (s[1] - s[0]);
    let d12 = (lambda[2] - lambda[1]) / (s[2] - s[1]);
    let a = (d12 - d01) / (s[2] - s[0]);
    if !(a < 0.0) {
        return None;
    }
    let b = d01 - a * (s[0] + s[1]);
    let s_star = -b / (2.0 * a);
    let lambda_star = lambda[0] + (s_star - s[0]) * (d01 + a * (s_star - s[1]));
    Some((s_star, lambda_star))
}

/// Index of the λ maximum when it is an interior turning point.
fn turning_index(points: &[TracePoint]) -> Option<usize> {
    let (k, _) = points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))?;
    (k > 0 && k + 1 < points.len() && points[k + 1].lambda < points[k].lambda).then_some(k)
}

/// Locates the nose of a trace: quadratic fit over the three points
/// bracketing the λ maximum, then up to 20 bisection corrector solves on
/// the sign of dλ/ds until successive λ estimates agree to 1e-8.
pub fn nose_point(
    model: &NetworkModel,
    trace: &ContinuationTrace,
    opts: &CpfOptions,
) -> Result<NosePoint, ContinuationError> {
    let k = turning_index(&trace.points).ok_or(ContinuationError::NoTurningPoint)?;
    let (p0, p1, p2) = (&trace.points[k - 1], &trace.points[k], &trace.points[k + 1]);
    let n = model.dim();
    let hom = Homotopy {
        model,
        base: trace.base.as_vector(),
        direction: trace.direction.as_vector(),
    };
    let mut y0 = DVector::zeros(n + 1);
    y0.rows_mut(0, n).copy_from(p0.state.as_vector());
    y0[n] = p0.lambda;
    let t0 = &p0.tangent;

    let span = p2.arc - p0.arc;
    let first_probe = fit_turning_point([p0.arc, p1.arc, p2.arc], [p0.lambda, p1.lambda, p2.lambda])
        .map(|(s, _)| s - p0.arc)
        .filter(|h| *h > 0.0 && *h < span)
        .unwrap_or(p1.arc - p0.arc);

    let mut best = (p1.lambda, p1.state.as_vector().clone());
    let (mut lo, mut hi) = (0.0, span);
    let mut probe = first_probe;
    let mut previous: Option<f64> = None;
    for _ in 0..20 {
        let Some((y, _)) = hom.correct(&y0, t0, probe, opts) else {
            hi = probe;
            probe = 0.5 * (lo + hi);
            continue;
        };
        let Some(t) = hom.tangent(&y, t0) else { break };
        let lambda = y[n];
        if lambda > best.0 {
            best = (lambda, y.rows(0, n).into_owned());
        }
        if t[n] > 0.0 {
            lo = probe;
        } else {
            hi = probe;
        }
        if let Some(prev) = previous {
            if (lambda - prev).abs() < 1e-8 && hi - lo < 1e-3 * span {
                break;
            }
        }
        previous = Some(lambda);
        probe = 0.5 * (lo + hi);
    }

    let state = p1.state.with_values(best.1);
    Ok(NosePoint {
        lambda: best.0,
        sigma_min: singularity_metric(&model.jacobian(state.as_vector())),
        state,
    })
}
