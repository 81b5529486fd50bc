use nalgebra::DVector;
use serde::Serialize;

use super::{GeometryBundle, GeometryError};
use crate::powerflow::StateVector;

/// Below this slope a bus is treated as stationary along the direction.
pub const FLAT_SLOPE_EPS: f64 = 1e-9;
/// Below this curvature the quadratic has no usable extremum.
pub const DEGENERATE_CURVATURE_EPS: f64 = 1e-12;

/// Start of a geodesic: origin and unit-speed initial velocity.
#[derive(Debug, Clone)]
pub struct GeodesicSeed {
    pub x0: StateVector,
    /// Ẋ(0), normalized so that Ẋᵀ g Ẋ = 1 (unit speed in the ambient space).
    pub xdot0: DVector<f64>,
    pub label: String,
}

/// Initial velocity whose power-space image points along `direction`.
///
/// Solves `J w = d`; `w` is the coordinate velocity whose image under the
/// projection onto power space is `d`. It is then scaled to unit ambient
/// speed, `‖dr/dτ‖² = wᵀ g w = 1`, so τ is arc length along the geodesic.
pub fn initial_velocity(
    bundle: &GeometryBundle,
    direction: &DVector<f64>,
    label: impl Into<String>,
) -> Result<GeodesicSeed, GeometryError> {
    let n = bundle.dim();
    if direction.len() != n {
        return Err(GeometryError::DimensionMismatch {
            expected: n,
            found: direction.len(),
        });
    }
    if direction.iter().all(|v| *v == 0.0) {
        return Err(GeometryError::ZeroDirection);
    }
    let w = bundle
        .jacobian_lu()
        .solve(direction)
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or(GeometryError::SingularJacobian)?;
    let speed2 = w.dot(&(&bundle.g * &w));
    if !(speed2 > 0.0) || !speed2.is_finite() {
        return Err(GeometryError::SingularJacobian);
    }
    Ok(GeodesicSeed {
        x0: bundle.x0.clone(),
        xdot0: w / speed2.sqrt(),
        label: label.into(),
    })
}

/// Per-PQ-bus coefficients of `V^k(τ) ≈ a_k + b_k τ - (τ²/2) c_k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadraticCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl QuadraticCoefficients {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Value of the truncated expansion at `tau` for bus `k`.
    pub fn eval(&self, k: usize, tau: f64) -> f64 {
        self.a[k] + self.b[k] * tau - 0.5 * tau * tau * self.c[k]
    }
}

/// Second-order geodesic expansion of each PQ voltage magnitude.
pub fn geodesic_quadratic(bundle: &GeometryBundle, seed: &GeodesicSeed) -> QuadraticCoefficients {
    let nv = bundle.n_voltage();
    let curvature = bundle.gamma2.contract(&seed.xdot0);
    QuadraticCoefficients {
        a: seed.x0.as_vector().as_slice()[..nv].to_vec(),
        b: seed.xdot0.as_slice()[..nv].to_vec(),
        c: curvature.as_slice()[..nv].to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EstimateStatus {
    #[serde(rename = "OK")]
    Ok,
    /// |b| below [`FLAT_SLOPE_EPS`]: the bus does not move to first order.
    FlatDirection,
    /// |c| below [`DEGENERATE_CURVATURE_EPS`]: no extremum.
    DegenerateQuadratic,
    /// The signed offset moves the voltage against its slope (c < 0).
    NonConservativeSign,
}

impl EstimateStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateStatus::Ok => "OK",
            EstimateStatus::FlatDirection => "FlatDirection",
            EstimateStatus::DegenerateQuadratic => "DegenerateQuadratic",
            EstimateStatus::NonConservativeSign => "NonConservativeSign",
        }
    }
}

impl std::fmt::Display for EstimateStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusEstimate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub alpha: f64,
    pub tau_star: Option<f64>,
    pub v_appx: Option<f64>,
    pub status: EstimateStatus,
}

impl BusEstimate {
    /// Offset from `a` at unit scaling, `b³/|b| / (2c)`, when defined.
    pub fn unit_offset(&self) -> Option<f64> {
        match self.status {
            EstimateStatus::Ok | EstimateStatus::NonConservativeSign => Some(signed_offset(self.b, self.c)),
            EstimateStatus::FlatDirection => Some(0.0),
            EstimateStatus::DegenerateQuadratic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryEstimate {
    pub buses: Vec<BusEstimate>,
}

fn signed_offset(b: f64, c: f64) -> f64 {
    (b * b * b / b.abs()) / (2.0 * c)
}

/// Estimated collapse voltage for one bus with scaling `alpha`.
pub fn estimate_bus(a: f64, b: f64, c: f64, alpha: f64) -> BusEstimate {
    let tau_star = (c.abs() >= DEGENERATE_CURVATURE_EPS).then(|| b / c);
    let (v_appx, status) = if b.abs() < FLAT_SLOPE_EPS {
        (Some(a), EstimateStatus::FlatDirection)
    } else if c.abs() < DEGENERATE_CURVATURE_EPS {
        (None, EstimateStatus::DegenerateQuadratic)
    } else {
        let v = a + alpha * signed_offset(b, c);
        // offset sign is sign(b) * sign(c); it agrees with the slope iff c > 0
        let status = if c > 0.0 {
            EstimateStatus::Ok
        } else {
            EstimateStatus::NonConservativeSign
        };
        (Some(v), status)
    };
    BusEstimate {
        a,
        b,
        c,
        alpha,
        tau_star,
        v_appx,
        status,
    }
}

/// Per-bus collapse voltage `V_appx = a + α b³/|b| / (2c)` at the extremum
/// `τ* = b / c` of the truncated expansion, with the slope's sign imposed.
pub fn boundary_estimate(coeffs: &QuadraticCoefficients, alpha: &[f64]) -> BoundaryEstimate {
    assert_eq!(alpha.len(), coeffs.len(), "one alpha per PQ bus");
    let buses = (0..coeffs.len())
        .map(|k| estimate_bus(coeffs.a[k], coeffs.b[k], coeffs.c[k], alpha[k]))
        .collect();
    BoundaryEstimate { buses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn falling_bus_with_positive_curvature() {
        let e = estimate_bus(1.0, -0.1, 0.02, 1.0);
        assert_eq!(e.status, EstimateStatus::Ok);
        assert_relative_eq!(e.tau_star.unwrap(), -5.0, epsilon = 1e-12);
        // 1 + (-0.001 / 0.1) / 0.04
        assert_relative_eq!(e.v_appx.unwrap(), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn falling_bus_with_negative_curvature_is_flagged() {
        let e = estimate_bus(1.0, -0.1, -0.02, 1.0);
        assert_relative_eq!(e.tau_star.unwrap(), 5.0, epsilon = 1e-12);
        // (-0.1)^3 / 0.1 = -0.01, divided by 2(-0.02) = +0.25
        assert_relative_eq!(e.v_appx.unwrap(), 1.25, epsilon = 1e-12);
        assert_eq!(e.status, EstimateStatus::NonConservativeSign);
    }

    #[test]
    fn flat_and_degenerate() {
        let flat = estimate_bus(0.98, 0.0, 0.3, 1.0);
        assert_eq!(flat.status, EstimateStatus::FlatDirection);
        assert_eq!(flat.v_appx, Some(0.98));
        let degenerate = estimate_bus(0.98, 0.2, 1e-14, 1.0);
        assert_eq!(degenerate.status, EstimateStatus::DegenerateQuadratic);
        assert_eq!(degenerate.v_appx, None);
        assert_eq!(degenerate.tau_star, None);
    }

    #[test]
    fn alpha_scales_offset() {
        let coeffs = QuadraticCoefficients {
            a: vec![1.0, 0.95],
            b: vec![-0.1, 0.05],
            c: vec![0.02, 0.4],
        };
        let unit = boundary_estimate(&coeffs, &[1.0, 1.0]);
        let scaled = boundary_estimate(&coeffs, &[3.4, 3.4]);
        for (u, s) in unit.buses.iter().zip(&scaled.buses) {
            let du = u.v_appx.unwrap() - u.a;
            let ds = s.v_appx.unwrap() - s.a;
            assert_relative_eq!(ds, 3.4 * du, max_relative = 1e-12);
        }
    }

    #[test]
    fn quadratic_eval() {
        let q = QuadraticCoefficients {
            a: vec![1.0],
            b: vec![-0.1],
            c: vec![0.02],
        };
        assert_relative_eq!(q.eval(0, 2.0), 1.0 - 0.2 - 0.04, epsilon = 1e-15);
    }
}
