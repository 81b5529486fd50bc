//! Riemannian geometry of the power-flow manifold at an operating point.
//!
//! The manifold is embedded in power-voltage space by `r(s) = (F(s), s)`,
//! so the tangent vector `r_i` stacks column `i` of the Jacobian on top of
//! the unit vector `e_i`. Everything below follows from that:
//!
//! - covariant metric `g = JᵀJ + I`;
//! - contravariant metric `g⁻¹` (the dual basis itself is never formed);
//! - Christoffel symbols of the first kind `Γ_{ij,k} = Σ_m H[m][i][j] J[m][k]`;
//! - Christoffel symbols of the second kind `Γ^k_ij = Σ_l g^{kl} Γ_{ij,l}`.
//!
//! The projection of `r_ij` onto the tangent space is `Σ_k Γ^k_ij r_k`;
//! it has no runtime representation here.

mod boundary;
mod christoffel;
mod geodesic;

use nalgebra::{DMatrix, Dyn, LU};
use thiserror::Error;

use crate::powerflow::{singularity_metric, FlowMap, HessianTensor, StateVector};

pub use boundary::{
    boundary_estimate, geodesic_quadratic, initial_velocity, BoundaryEstimate, BusEstimate, EstimateStatus,
    GeodesicSeed, QuadraticCoefficients, DEGENERATE_CURVATURE_EPS, FLAT_SLOPE_EPS,
};
pub use christoffel::{christoffel_first, christoffel_second, SymTensor3, DENSE_THRESHOLD};
pub use geodesic::{geodesic_integrate, GeodesicHalt, GeodesicOptions, GeodesicPoint, GeodesicTrajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("metric factorization failed (matrix not positive definite)")]
    Factorization,
    #[error("Jacobian is singular at the operating point")]
    SingularJacobian,
    #[error("power direction is zero")]
    ZeroDirection,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid integration step {0}")]
    InvalidStep(f64),
    #[error("geodesic speed drifted by {drift:e} at tau = {tau}; step too large")]
    StepTooLarge { tau: f64, drift: f64 },
}

/// Covariant metric `g_ij = ⟨r_i, r_j⟩ = Σ_m J_mi J_mj + δ_ij`.
pub fn covariant_metric(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    j.tr_mul(j) + DMatrix::identity(n, n)
}

/// Contravariant metric `g^{ij}`, the inverse of `g`, via Cholesky with one
/// step of residual correction.
pub fn contravariant_metric(g: &DMatrix<f64>) -> Result<DMatrix<f64>, GeometryError> {
    let n = g.nrows();
    let chol = g.clone().cholesky().ok_or(GeometryError::Factorization)?;
    let mut inv = chol.inverse();
    // X <- X + X (I - g X) sharpens the inverse for ill-conditioned g.
    let residual = DMatrix::identity(n, n) - g * &inv;
    inv += &inv * residual;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(GeometryError::Factorization)
    }
}

/// All geometric quantities at one operating point.
#[derive(Debug, Clone)]
pub struct GeometryBundle {
    pub x0: StateVector,
    pub jacobian: DMatrix<f64>,
    pub hessian: HessianTensor,
    pub g: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    pub gamma_first: SymTensor3,
    pub gamma2: SymTensor3,
    pub sigma_min: f64,
    n_voltage: usize,
    lu: LU<f64, Dyn, Dyn>,
}

impl GeometryBundle {
    /// Steps 1-4 of the boundary procedure: metric, inverse metric and both
    /// kinds of Christoffel symbols at `x0`.
    pub fn at<M: FlowMap + ?Sized>(map: &M, x0: &StateVector) -> Result<Self, GeometryError> {
        if x0.len() != map.dim() {
            return Err(GeometryError::DimensionMismatch {
                expected: map.dim(),
                found: x0.len(),
            });
        }
        let x = x0.as_vector();
        let jacobian = map.jacobian(x);
        let hessian = map.hessian(x);
        let g = covariant_metric(&jacobian);
        let g_inv = contravariant_metric(&g)?;
        let gamma_first = christoffel_first(&hessian, &jacobian);
        let gamma2 = christoffel_second(&g_inv, &gamma_first);
        let sigma_min = singularity_metric(&jacobian);
        let lu = jacobian.clone().lu();
        Ok(Self {
            x0: x0.clone(),
            jacobian,
            hessian,
            g,
            g_inv,
            gamma_first,
            gamma2,
            sigma_min,
            n_voltage: map.n_voltage(),
            lu,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// Leading state entries that are voltage magnitudes.
    pub fn n_voltage(&self) -> usize {
        self.n_voltage
    }

    pub(crate) fn jacobian_lu(&self) -> &LU<f64, Dyn, Dyn> {
        &self.lu
    }

    /// max |g g⁻¹ - I|.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.dim();
        (&self.g * &self.g_inv - DMatrix::identity(n, n)).amax()
    }
}
