//! Families of power-varying directions and the boundary sweep over them.
//!
//! A sweep direction is a unit vector `u` on a circle (`β`) or sphere
//! (`β`, `δ`). Its components drive the load buses of a [`VaryingSpec`] in
//! order; renewable bus `r` follows component `r mod D`, scaled by its rate
//! multiplier, so renewable swings ride on top of the load changes.
//!
//! Sign convention: a positive component means growing load, i.e. a
//! *decreasing* net injection at a load bus, and growing output (increasing
//! injection) at a renewable bus.

mod run;

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::continuation::ContinuationError;
use crate::geometry::GeometryError;
use crate::network::{BusKind, NetworkModel};
use crate::powerflow::InjectionVector;

pub use run::{
    calibrate_alpha, estimate_directions, gap_statistics, sweep_boundary, BusGapStats, DirectionEstimate, GapKind,
    GapStatistics, RowStatus, SweepOptions, SweepResult, SweepRow, SweepTimings,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SweepError {
    #[error("bus {0} is not in the model")]
    UnknownBus(u32),
    #[error("bus {0} is the slack bus and cannot vary")]
    SlackBus(u32),
    #[error("power factor {0} outside (0, 1]")]
    InvalidPowerFactor(f64),
    #[error("rate multiplier {0} must be positive")]
    InvalidRate(f64),
    #[error("spec has no varying buses")]
    EmptySpec,
    #[error("unit vector has {found} components, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("alpha has {found} entries, expected {expected}")]
    AlphaLength { expected: usize, found: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
    #[error("calibration direction produced no nose point")]
    NoCalibrationNose,
    #[error("sweep result carries no continuation data")]
    NoCpfData,
}

/// Buses whose injections vary along a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VaryingSpec {
    /// `(bus id, power factor)`.
    pub load_buses: Vec<(u32, f64)>,
    /// `(bus id, rate multiplier)`.
    pub renewable_buses: Vec<(u32, f64)>,
}

impl VaryingSpec {
    pub fn new(load_buses: Vec<(u32, f64)>, renewable_buses: Vec<(u32, f64)>) -> Result<Self, SweepError> {
        for &(_, pf) in &load_buses {
            if !(pf > 0.0 && pf <= 1.0) {
                return Err(SweepError::InvalidPowerFactor(pf));
            }
        }
        for &(_, rate) in &renewable_buses {
            if !(rate > 0.0) || !rate.is_finite() {
                return Err(SweepError::InvalidRate(rate));
            }
        }
        if load_buses.is_empty() && renewable_buses.is_empty() {
            return Err(SweepError::EmptySpec);
        }
        Ok(Self {
            load_buses,
            renewable_buses,
        })
    }

    /// Loads at buses 5 and 7 (pf 0.95), renewables at generator buses 2 and
    /// 3 (4x).
    pub fn ieee9() -> Self {
        Self::new(vec![(5, 0.95), (7, 0.95)], vec![(2, 4.0), (3, 4.0)]).expect("valid")
    }

    /// Loads at buses 4 and 9 (pf 0.95), renewables at generator buses 3
    /// and 6 changing 4x faster.
    pub fn ieee14() -> Self {
        Self::new(vec![(4, 0.95), (9, 0.95)], vec![(3, 4.0), (6, 4.0)]).expect("valid")
    }

    /// Loads at buses 4 and 8 (pf 0.95), renewables at buses 33 and 36 (4x).
    pub fn ieee39() -> Self {
        Self::new(vec![(4, 0.95), (8, 0.95)], vec![(33, 4.0), (36, 4.0)]).expect("valid")
    }

    /// Number of varying buses (length of a full unit vector).
    pub fn n_varying(&self) -> usize {
        self.load_buses.len() + self.renewable_buses.len()
    }

    /// Dimension of the angular sweep.
    pub fn sweep_dim(&self) -> usize {
        if self.load_buses.is_empty() {
            self.renewable_buses.len()
        } else {
            self.load_buses.len()
        }
    }

    /// Spreads a sweep vector of length [`sweep_dim`](Self::sweep_dim) over all
    /// varying buses (load components first, then renewable components).
    pub fn expand(&self, u: &[f64]) -> Result<Vec<f64>, SweepError> {
        let d = self.sweep_dim();
        if u.len() != d {
            return Err(SweepError::DimensionMismatch {
                expected: d,
                found: u.len(),
            });
        }
        if self.load_buses.is_empty() {
            return Ok(u.to_vec());
        }
        let renewable = (0..self.renewable_buses.len()).map(|r| u[r % d]);
        Ok(u.iter().copied().chain(renewable).collect())
    }

    pub fn check(&self, model: &NetworkModel) -> Result<(), SweepError> {
        for id in self.load_buses.iter().chain(&self.renewable_buses).map(|b| b.0) {
            let pos = model.position(id).ok_or(SweepError::UnknownBus(id))?;
            if model.buses()[pos].kind == BusKind::Slack {
                return Err(SweepError::SlackBus(id));
            }
        }
        Ok(())
    }
}

/// One sweep direction on the circle or sphere.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Direction {
    pub id: usize,
    pub beta: f64,
    /// Elevation; `None` for planar sweeps.
    pub delta: Option<f64>,
    pub unit: Vec<f64>,
}

/// `n` directions `β_i = 2πi/n` with unit vectors `(cos β, sin β)`.
pub fn directions_2d(n: usize) -> Vec<Direction> {
    (0..n)
        .map(|i| {
            let beta = 2.0 * PI * i as f64 / n as f64;
            Direction {
                id: i,
                beta,
                delta: None,
                unit: vec![beta.cos(), beta.sin()],
            }
        })
        .collect()
}

/// Elevation grid over [-π/2, π/2]; the middle node is exactly zero when
/// `n` is odd.
fn delta_grid(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0];
    }
    let m = (n - 1) as f64;
    (0..n).map(|j| PI * (2.0 * j as f64 - m) / (2.0 * m)).collect()
}

/// Product grid of `n_beta` azimuths and `n_delta` elevations with unit
/// vectors `(cos β cos δ, sin β cos δ, sin δ)`, elevation-major.
pub fn directions_3d(n_beta: usize, n_delta: usize) -> Vec<Direction> {
    let betas: Vec<f64> = (0..n_beta).map(|i| 2.0 * PI * i as f64 / n_beta as f64).collect();
    let mut out = Vec::with_capacity(n_beta * n_delta);
    for delta in delta_grid(n_delta) {
        for &beta in &betas {
            let (cd, sd) = (delta.cos(), delta.sin());
            out.push(Direction {
                id: out.len(),
                beta,
                delta: Some(delta),
                unit: vec![beta.cos() * cd, beta.sin() * cd, sd],
            });
        }
    }
    out
}

/// Injection-space direction for a full per-bus unit vector (load buses
/// first, then renewable buses, in spec order).
///
/// Load bus with component `u`: `ΔP = -u`, `ΔQ = -u tan(acos pf)` (Q only if
/// the bus is PQ). Renewable bus: `ΔP = rate * u`, no reactive change.
pub fn build_direction(
    model: &NetworkModel,
    spec: &VaryingSpec,
    unit_vector: &[f64],
) -> Result<InjectionVector, SweepError> {
    if unit_vector.len() != spec.n_varying() {
        return Err(SweepError::DimensionMismatch {
            expected: spec.n_varying(),
            found: unit_vector.len(),
        });
    }
    spec.check(model)?;
    let mut d = InjectionVector::zeros(model);
    let n_p = d.n_p();
    let ng = model.n_gen();
    let values = d.as_vector_mut();
    let (loads, renewables) = unit_vector.split_at(spec.load_buses.len());

    for (&(id, pf), &u) in spec.load_buses.iter().zip(loads) {
        let pos = model.position(id).ok_or(SweepError::UnknownBus(id))?;
        values[pos - 1] += -u;
        if pos >= ng {
            values[n_p + pos - ng] += -u * pf.acos().tan();
        }
    }
    for (&(id, rate), &u) in spec.renewable_buses.iter().zip(renewables) {
        let pos = model.position(id).ok_or(SweepError::UnknownBus(id))?;
        values[pos - 1] += rate * u;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::network::parse_case;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn four_directions() {
        let dirs = directions_2d(4);
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (d, (c, s)) in dirs.iter().zip(expected) {
            assert_abs_diff_eq!(d.unit[0], c, epsilon = 1e-15);
            assert_abs_diff_eq!(d.unit[1], s, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(dirs[3].beta, 1.5 * PI, epsilon = 1e-15);
        assert_eq!(directions_2d(1)[0].beta, 0.0);
        let dirs = directions_2d(180);
        assert_eq!(dirs.len(), 180);
        for w in dirs.windows(2) {
            assert_abs_diff_eq!(w[1].beta - w[0].beta, PI / 90.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn sphere_grid() {
        let dirs = directions_3d(4, 3);
        assert_eq!(dirs.len(), 12);
        for d in &dirs {
            let norm: f64 = d.unit.iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-15);
        }
        let poles: Vec<_> = dirs.iter().filter(|d| d.unit[2].abs() > 1.0 - 1e-15).collect();
        assert_eq!(poles.len(), 8);
        for p in poles {
            assert!(p.unit[0].abs() < 1e-15 && p.unit[1].abs() < 1e-15);
        }
    }

    #[test]
    fn equator_matches_circle() {
        let flat = directions_2d(36);
        let sphere = directions_3d(36, 5);
        let equator: Vec<_> = sphere.iter().filter(|d| d.delta == Some(0.0)).collect();
        assert_eq!(equator.len(), 36);
        for (a, b) in flat.iter().zip(equator) {
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.unit[0], b.unit[0]);
            assert_eq!(a.unit[1], b.unit[1]);
            assert_eq!(b.unit[2], 0.0);
        }
    }

    #[test]
    fn full_grid_sums_to_zero() {
        let sum = directions_2d(180)
            .iter()
            .fold([0.0; 2], |acc, d| [acc[0] + d.unit[0], acc[1] + d.unit[1]]);
        assert!(sum[0].abs() < 1e-12 && sum[1].abs() < 1e-12);
    }

    #[test]
    fn ieee14_direction_power_factor() {
        let model = parse_case(cases::IEEE14).unwrap();
        let spec = VaryingSpec::ieee14();
        let beta = 0.3f64;
        let full = spec.expand(&[beta.cos(), beta.sin()]).unwrap();
        let d = build_direction(&model, &spec, &full).unwrap();
        let ratio = 0.95f64.acos().tan();
        assert_abs_diff_eq!(ratio, 0.32868, epsilon = 1e-5);
        for id in [4u32, 9] {
            let pos = model.position(id).unwrap();
            let p = d.p()[pos - 1];
            let q = d.q()[pos - model.n_gen()];
            assert_abs_diff_eq!(q, ratio * p, epsilon = 1e-15);
            assert!(p < 0.0, "load growth lowers injection");
        }
        // bus 3 follows the first component at 4x
        let p3 = d.p()[model.position(3).unwrap() - 1];
        assert_abs_diff_eq!(p3, 4.0 * beta.cos(), epsilon = 1e-15);
    }

    #[test]
    fn unity_pf_and_renewable_only() {
        let model = parse_case(cases::IEEE14).unwrap();
        let spec = VaryingSpec::new(vec![(4, 1.0)], vec![(3, 4.0)]).unwrap();
        let d = build_direction(&model, &spec, &[0.5, 0.25]).unwrap();
        assert!(d.q().iter().all(|q| *q == 0.0));
        assert_eq!(d.p()[model.position(3).unwrap() - 1], 1.0);
    }

    #[test]
    fn spec_validation() {
        assert_eq!(
            VaryingSpec::new(vec![(4, 1.2)], vec![]).unwrap_err(),
            SweepError::InvalidPowerFactor(1.2)
        );
        assert_eq!(
            VaryingSpec::new(vec![], vec![(3, 0.0)]).unwrap_err(),
            SweepError::InvalidRate(0.0)
        );
        assert_eq!(VaryingSpec::new(vec![], vec![]).unwrap_err(), SweepError::EmptySpec);
        let model = parse_case(cases::IEEE14).unwrap();
        let unknown = VaryingSpec::new(vec![(99, 0.9)], vec![]).unwrap();
        assert_eq!(
            build_direction(&model, &unknown, &[1.0]).unwrap_err(),
            SweepError::UnknownBus(99)
        );
        let slack = VaryingSpec::new(vec![(1, 0.9)], vec![]).unwrap();
        assert_eq!(
            build_direction(&model, &slack, &[1.0]).unwrap_err(),
            SweepError::SlackBus(1)
        );
    }

    proptest! {
        #[test]
        fn build_direction_is_linear(u in prop::collection::vec(-2.0f64..2.0, 4), w in prop::collection::vec(-2.0f64..2.0, 4)) {
            let model = parse_case(cases::IEEE14).unwrap();
            let spec = VaryingSpec::ieee14();
            let sum: Vec<f64> = u.iter().zip(&w).map(|(a, b)| a + b).collect();
            let lhs = build_direction(&model, &spec, &sum).unwrap();
            let rhs = build_direction(&model, &spec, &u).unwrap().as_vector()
                + build_direction(&model, &spec, &w).unwrap().as_vector();
            prop_assert!((lhs.as_vector() - rhs).amax() < 1e-14);
        }

        #[test]
        fn sphere_directions_unit_norm(nb in 1usize..40, nd in 1usize..12) {
            for d in directions_3d(nb, nd) {
                let norm: f64 = d.unit.iter().map(|x| x * x).sum();
                prop_assert!((norm - 1.0).abs() < 1e-15);
            }
        }
    }
}
