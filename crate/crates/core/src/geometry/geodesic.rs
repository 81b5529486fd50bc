use nalgebra::{DMatrix, DVector};

use super::{covariant_metric, GeodesicSeed, GeometryError};
use crate::powerflow::{singularity_metric, FlowMap};

#[derive(Debug, Clone, Copy)]
pub struct GeodesicOptions {
    /// Stop when σ_min(J) drops below this.
    pub singular_tol: f64,
    /// Maximum relative change of the squared ambient speed.
    pub drift_tol: f64,
}

impl Default for GeodesicOptions {
    fn default() -> Self {
        Self {
            singular_tol: 1e-6,
            drift_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicPoint {
    pub tau: f64,
    pub state: DVector<f64>,
    pub velocity: DVector<f64>,
    /// ṡᵀ g(s) ṡ.
    pub speed2: f64,
    pub sigma_min: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeodesicHalt {
    Completed,
    NearSingular { tau: f64, sigma_min: f64 },
}

#[derive(Debug, Clone)]
pub struct GeodesicTrajectory {
    pub points: Vec<GeodesicPoint>,
    pub halt: GeodesicHalt,
}

impl GeodesicTrajectory {
    pub fn last(&self) -> &GeodesicPoint {
        self.points.last().expect("trajectory holds its start point")
    }
}

/// s̈^k = -Γ^k_ij ṡ^i ṡ^j evaluated as -g⁻¹ Jᵀ H(ṡ, ṡ), with J, H and g
/// taken fresh at `s`.
fn acceleration<M: FlowMap + ?Sized>(
    map: &M,
    s: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>, GeometryError> {
    let j = map.jacobian(s);
    let h = map.hessian(s);
    let g = covariant_metric(&j);
    let rhs = j.tr_mul(&h.bilinear(v, v));
    let chol = g.cholesky().ok_or(GeometryError::Factorization)?;
    Ok(-chol.solve(&rhs))
}

fn speed2<M: FlowMap + ?Sized>(map: &M, s: &DVector<f64>, v: &DVector<f64>) -> (f64, DMatrix<f64>) {
    let j = map.jacobian(s);
    let jv = &j * v;
    (jv.norm_squared() + v.norm_squared(), j)
}

/// Integrates the geodesic equation from `seed` up to `tau_max` with the
/// classic fourth-order Runge-Kutta scheme.
///
/// The step is shrunk so that an integer number of steps lands exactly on
/// `tau_max`.
pub fn geodesic_integrate<M: FlowMap + ?Sized>(
    map: &M,
    seed: &GeodesicSeed,
    tau_max: f64,
    step: f64,
) -> Result<GeodesicTrajectory, GeometryError> {
    geodesic_integrate_with(map, seed, tau_max, step, GeodesicOptions::default())
}

pub fn geodesic_integrate_with<M: FlowMap + ?Sized>(
    map: &M,
    seed: &GeodesicSeed,
    tau_max: f64,
    step: f64,
    opts: GeodesicOptions,
) -> Result<GeodesicTrajectory, GeometryError> {
    if !(step > 0.0) || !step.is_finite() || !(tau_max >= 0.0) {
        return Err(GeometryError::InvalidStep(step));
    }
    let n = map.dim();
    if seed.xdot0.len() != n || seed.x0.len() != n {
        return Err(GeometryError::DimensionMismatch {
            expected: n,
            found: seed.xdot0.len(),
        });
    }
    let n_steps = (tau_max / step).ceil().max(1.0) as usize;
    let h = tau_max / n_steps as f64;

    let mut s = seed.x0.as_vector().clone();
    let mut v = seed.xdot0.clone();
    let (e0, j0) = speed2(map, &s, &v);
    let mut points = vec![GeodesicPoint {
        tau: 0.0,
        state: s.clone(),
        velocity: v.clone(),
        speed2: e0,
        sigma_min: singularity_metric(&j0),
    }];

    for step_idx in 1..=n_steps {
        let k1s = v.clone();
        let k1v = acceleration(map, &s, &v)?;
        let s2 = &s + &k1s * (0.5 * h);
        let v2 = &v + &k1v * (0.5 * h);
        let k2v = acceleration(map, &s2, &v2)?;
        let s3 = &s + &v2 * (0.5 * h);
        let v3 = &v + &k2v * (0.5 * h);
        let k3v = acceleration(map, &s3, &v3)?;
        let s4 = &s + &v3 * h;
        let v4 = &v + &k3v * h;
        let k4v = acceleration(map, &s4, &v4)?;

        s += (&k1s + &v2 * 2.0 + &v3 * 2.0 + &v4) * (h / 6.0);
        v += (&k1v + &k2v * 2.0 + &k3v * 2.0 + &k4v) * (h / 6.0);

        let tau = h * step_idx as f64;
        let (e, j) = speed2(map, &s, &v);
        let drift = (e / e0 - 1.0).abs();
        if !(drift <= opts.drift_tol) {
            return Err(GeometryError::StepTooLarge { tau, drift });
        }
        let sigma_min = singularity_metric(&j);
        points.push(GeodesicPoint {
            tau,
            state: s.clone(),
            velocity: v.clone(),
            speed2: e,
            sigma_min,
        });
        if sigma_min < opts.singular_tol {
            return Ok(GeodesicTrajectory {
                points,
                halt: GeodesicHalt::NearSingular { tau, sigma_min },
            });
        }
    }
    Ok(GeodesicTrajectory {
        points,
        halt: GeodesicHalt::Completed,
    })
}
