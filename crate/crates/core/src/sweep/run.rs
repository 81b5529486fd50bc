use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{build_direction, Direction, SweepError, VaryingSpec};
use crate::continuation::{cpf_trace_from, CpfOptions};
use crate::geometry::{
    boundary_estimate, geodesic_quadratic, initial_velocity, BoundaryEstimate, EstimateStatus, GeometryBundle,
    GeometryError, QuadraticCoefficients,
};
use crate::network::NetworkModel;
use crate::powerflow::{FlowMap, InjectionVector, StateVector};

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Also trace every direction with continuation to get the true nose.
    pub with_cpf: bool,
    pub cpf: CpfOptions,
}

/// Geodesic estimate for one direction at unit and calibrated scaling.
#[derive(Debug, Clone)]
pub struct DirectionEstimate {
    pub coefficients: QuadraticCoefficients,
    pub raw: BoundaryEstimate,
    pub calibrated: BoundaryEstimate,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct SweepTimings {
    /// Building the geometry bundle (once per sweep).
    pub geometry: Duration,
    /// All per-direction estimates.
    pub estimates: Duration,
    /// All continuation traces, when requested.
    pub cpf: Option<Duration>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RowStatus {
    Estimate(EstimateStatus),
    /// The direction itself could not be evaluated.
    Failed,
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowStatus::Estimate(s) => s.fmt(f),
            RowStatus::Failed => f.write_str("Failed"),
        }
    }
}

/// One `(direction, PQ bus)` record.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub direction_id: usize,
    pub beta: f64,
    pub delta: Option<f64>,
    pub bus: u32,
    pub v0: f64,
    pub v_appx_raw: Option<f64>,
    pub v_appx_cal: Option<f64>,
    pub v_nose: Option<f64>,
    pub status: RowStatus,
}

impl SweepRow {
    pub fn gap_raw(&self) -> Option<f64> {
        Some(self.v_appx_raw? - self.v_nose?)
    }

    pub fn gap_cal(&self) -> Option<f64> {
        Some(self.v_appx_cal? - self.v_nose?)
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    /// PQ bus ids in state order.
    pub buses: Vec<u32>,
    pub alpha: Vec<f64>,
    pub directions: Vec<Direction>,
    /// Per-direction geodesic estimate, or why it failed.
    pub estimates: Vec<Result<DirectionEstimate, GeometryError>>,
    /// Per-direction nose voltages (PQ buses), when continuation ran.
    pub noses: Option<Vec<Result<Vec<f64>, String>>>,
    pub timings: SweepTimings,
}

impl SweepResult {
    /// Flattened rows, direction-major then bus order.
    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows = Vec::with_capacity(self.directions.len() * self.buses.len());
        for (d, dir) in self.directions.iter().enumerate() {
            let nose = self.noses.as_ref().and_then(|n| n[d].as_ref().ok());
            for (k, &bus) in self.buses.iter().enumerate() {
                let (v0, raw, cal, status) = match &self.estimates[d] {
                    Ok(e) => (
                        e.coefficients.a[k],
                        e.raw.buses[k].v_appx,
                        e.calibrated.buses[k].v_appx,
                        RowStatus::Estimate(e.raw.buses[k].status),
                    ),
                    Err(_) => (f64::NAN, None, None, RowStatus::Failed),
                };
                rows.push(SweepRow {
                    direction_id: dir.id,
                    beta: dir.beta,
                    delta: dir.delta,
                    bus,
                    v0,
                    v_appx_raw: raw,
                    v_appx_cal: cal,
                    v_nose: nose.map(|v| v[k]),
                    status,
                });
            }
        }
        rows
    }

    /// Directions whose estimate or continuation failed.
    pub fn failures(&self) -> usize {
        (0..self.directions.len())
            .filter(|&d| self.estimates[d].is_err() || self.noses.as_ref().is_some_and(|n| n[d].is_err()))
            .count()
    }
}

fn estimate_one(
    bundle: &GeometryBundle,
    direction: &DVector<f64>,
    alpha: &[f64],
    label: String,
) -> Result<DirectionEstimate, GeometryError> {
    let seed = initial_velocity(bundle, direction, label)?;
    let coefficients = geodesic_quadratic(bundle, &seed);
    let ones = vec![1.0; coefficients.len()];
    Ok(DirectionEstimate {
        raw: boundary_estimate(&coefficients, &ones),
        calibrated: boundary_estimate(&coefficients, alpha),
        coefficients,
    })
}

/// Geodesic estimates for many injection directions, sharing one geometry
/// bundle. Results keep the input order regardless of the thread count.
pub fn estimate_directions(
    bundle: &GeometryBundle,
    directions: &[DVector<f64>],
    alpha: &[f64],
) -> Vec<Result<DirectionEstimate, GeometryError>> {
    directions
        .par_iter()
        .enumerate()
        .map(|(i, d)| estimate_one(bundle, d, alpha, format!("direction {i}")))
        .collect()
}

fn check_alpha(model: &NetworkModel, alpha: &[f64]) -> Result<(), SweepError> {
    if alpha.len() != model.n_pq() {
        return Err(SweepError::AlphaLength {
            expected: model.n_pq(),
            found: alpha.len(),
        });
    }
    Ok(())
}

/// Boundary estimates (and optionally continuation noses) for every
/// direction, all measured from the solved operating point `x0`.
pub fn sweep_boundary(
    model: &NetworkModel,
    x0: &StateVector,
    spec: &VaryingSpec,
    directions: &[Direction],
    alpha: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, SweepError> {
    sweep_with_map(model, model, x0, spec, directions, alpha, opts)
}

fn sweep_with_map<M: FlowMap + ?Sized>(
    map: &M,
    model: &NetworkModel,
    x0: &StateVector,
    spec: &VaryingSpec,
    directions: &[Direction],
    alpha: &[f64],
    opts: &SweepOptions,
) -> Result<SweepResult, SweepError> {
    spec.check(model)?;
    check_alpha(model, alpha)?;
    let injections = directions
        .iter()
        .map(|dir| build_direction(model, spec, &spec.expand(&dir.unit)?))
        .collect::<Result<Vec<_>, _>>()?;
    let vectors: Vec<DVector<f64>> = injections.iter().map(|d| d.as_vector().clone()).collect();

    let start = Instant::now();
    let bundle = GeometryBundle::at(map, x0)?;
    let geometry = start.elapsed();

    let start = Instant::now();
    let estimates = estimate_directions(&bundle, &vectors, alpha);
    let estimates_time = start.elapsed();

    let (noses, cpf) = if opts.with_cpf {
        let start = Instant::now();
        let base = InjectionVector::new(x0.len() - x0.n_pq(), model.evaluate(x0.as_vector()));
        let noses = injections
            .par_iter()
            .map(|d| {
                let trace = cpf_trace_from(model, &base, x0, d, &opts.cpf).map_err(|e| e.to_string())?;
                let nose = trace.nose.ok_or_else(|| format!("no nose ({:?})", trace.halt_reason))?;
                Ok(nose.state.v().to_vec())
            })
            .collect();
        (Some(noses), Some(start.elapsed()))
    } else {
        (None, None)
    };

    Ok(SweepResult {
        buses: model.pq_ids(),
        alpha: alpha.to_vec(),
        directions: directions.to_vec(),
        estimates,
        noses,
        timings: SweepTimings {
            geometry,
            estimates: estimates_time,
            cpf,
        },
    })
}

/// Per-bus scaling that makes the raw estimate hit the continuation nose
/// along one calibration direction:
/// `α_k = (V_nose,k - a_k) / (V_appx,k(α=1) - a_k)`.
///
/// Buses whose estimate is not `OK`, or whose ratio is not a finite positive
/// number, keep `α_k = 1`.
pub fn calibrate_alpha(
    model: &NetworkModel,
    x0: &StateVector,
    spec: &VaryingSpec,
    calibration: &Direction,
    cpf: &CpfOptions,
) -> Result<Vec<f64>, SweepError> {
    let d = build_direction(model, spec, &spec.expand(&calibration.unit)?)?;
    let bundle = GeometryBundle::at(model, x0)?;
    let estimate = estimate_one(&bundle, d.as_vector(), &vec![1.0; model.n_pq()], "calibration".into())?;
    let base = InjectionVector::new(x0.len() - x0.n_pq(), model.evaluate(x0.as_vector()));
    let trace = cpf_trace_from(model, &base, x0, &d, cpf)?;
    let nose = trace.nose.ok_or(SweepError::NoCalibrationNose)?;
    Ok(estimate
        .raw
        .buses
        .iter()
        .zip(nose.state.v())
        .map(|(e, &v_nose)| calibrated_alpha(e.a, e.v_appx, e.status, v_nose))
        .collect())
}

fn calibrated_alpha(a: f64, v_appx: Option<f64>, status: EstimateStatus, v_nose: f64) -> f64 {
    match (status, v_appx) {
        (EstimateStatus::Ok, Some(v)) => {
            let alpha = (v_nose - a) / (v - a);
            if alpha.is_finite() && alpha > 0.0 {
                alpha
            } else {
                1.0
            }
        }
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum GapKind {
    Raw,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusGapStats {
    pub bus: u32,
    /// `OK` rows with a defined gap.
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Share of rows whose gap has the majority sign.
    pub sign_consistency: f64,
    /// +1 when most gaps are positive (estimate above the nose), -1 otherwise.
    pub majority_sign: i8,
    pub max_abs: f64,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapStatistics {
    pub kind: GapKind,
    pub buses: Vec<BusGapStats>,
    pub status_counts: BTreeMap<String, usize>,
}

/// Summary of `V_appx - V_nose` per PQ bus over the directions whose
/// estimate is `OK`; status counts cover every row.
pub fn gap_statistics(result: &SweepResult, kind: GapKind) -> Result<GapStatistics, SweepError> {
    if result.noses.is_none() {
        return Err(SweepError::NoCpfData);
    }
    let rows = result.rows();
    let mut status_counts = BTreeMap::new();
    for row in &rows {
        *status_counts.entry(row.status.to_string()).or_insert(0) += 1;
    }
    let buses = result
        .buses
        .iter()
        .map(|&bus| {
            let gaps: Vec<f64> = rows
                .iter()
                .filter(|r| r.bus == bus && r.status == RowStatus::Estimate(EstimateStatus::Ok))
                .filter_map(|r| match kind {
                    GapKind::Raw => r.gap_raw(),
                    GapKind::Calibrated => r.gap_cal(),
                })
                .collect();
            bus_stats(bus, &gaps)
        })
        .collect();
    Ok(GapStatistics {
        kind,
        buses,
        status_counts,
    })
}

fn bus_stats(bus: u32, gaps: &[f64]) -> BusGapStats {
    let n = gaps.len();
    if n == 0 {
        return BusGapStats {
            bus,
            count: 0,
            mean: f64::NAN,
            std: f64::NAN,
            sign_consistency: f64::NAN,
            majority_sign: 0,
            max_abs: f64::NAN,
            mean_abs: f64::NAN,
        };
    }
    let nf = n as f64;
    let mean = gaps.iter().sum::<f64>() / nf;
    let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / nf;
    let positive = gaps.iter().filter(|g| **g > 0.0).count();
    let negative = gaps.iter().filter(|g| **g < 0.0).count();
    let (majority, majority_sign) = if positive >= negative {
        (positive, 1)
    } else {
        (negative, -1)
    };
    BusGapStats {
        bus,
        count: n,
        mean,
        std: var.sqrt(),
        sign_consistency: majority as f64 / nf,
        majority_sign,
        max_abs: gaps.iter().fold(0.0, |m, g| m.max(g.abs())),
        mean_abs: gaps.iter().map(|g| g.abs()).sum::<f64>() / nf,
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};

    use super::*;
    use crate::cases;
    use crate::network::parse_case;
    use crate::powerflow::{newton_solve, HessianTensor};
    use crate::sweep::directions_2d;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn ieee14() -> (NetworkModel, StateVector) {
        let model = parse_case(cases::IEEE14).unwrap();
        let x0 = newton_solve(&model, &InjectionVector::scheduled(&model), &StateVector::flat(&model)).unwrap();
        (model, x0)
    }

    struct Counting<'a> {
        inner: &'a NetworkModel,
        hessians: AtomicUsize,
    }

    impl FlowMap for Counting<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn n_voltage(&self) -> usize {
            self.inner.n_voltage()
        }
        fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
            self.inner.evaluate(x)
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            self.inner.jacobian(x)
        }
        fn hessian(&self, x: &DVector<f64>) -> HessianTensor {
            self.hessians.fetch_add(1, Ordering::SeqCst);
            self.inner.hessian(x)
        }
    }

    #[test]
    fn geometry_built_once_per_sweep() {
        let (model, x0) = ieee14();
        let counting = Counting {
            inner: &model,
            hessians: AtomicUsize::new(0),
        };
        let dirs = directions_2d(24);
        let alpha = vec![1.0; model.n_pq()];
        let result = sweep_with_map(
            &counting,
            &model,
            &x0,
            &VaryingSpec::ieee14(),
            &dirs,
            &alpha,
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(counting.hessians.load(Ordering::SeqCst), 1);
        assert_eq!(result.rows().len(), 24 * model.n_pq());
        assert_eq!(result.failures(), 0);
    }

    #[test]
    fn rows_keep_direction_order() {
        let (model, x0) = ieee14();
        let dirs = directions_2d(12);
        let alpha = vec![1.0; model.n_pq()];
        let result = sweep_boundary(
            &model,
            &x0,
            &VaryingSpec::ieee14(),
            &dirs,
            &alpha,
            &SweepOptions::default(),
        )
        .unwrap();
        let rows = result.rows();
        for (i, chunk) in rows.chunks(model.n_pq()).enumerate() {
            assert!(chunk.iter().all(|r| r.direction_id == i));
            let ids: Vec<u32> = chunk.iter().map(|r| r.bus).collect();
            assert_eq!(ids, model.pq_ids());
        }
        assert!(rows.iter().all(|r| r.v_appx_raw == r.v_appx_cal));
        assert_eq!(
            gap_statistics(&result, GapKind::Raw).unwrap_err(),
            SweepError::NoCpfData
        );
    }

    #[test]
    fn alpha_length_checked() {
        let (model, x0) = ieee14();
        let err = sweep_boundary(
            &model,
            &x0,
            &VaryingSpec::ieee14(),
            &directions_2d(2),
            &[1.0],
            &SweepOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, SweepError::AlphaLength { expected: 9, found: 1 });
    }

    #[test]
    fn calibration_fallbacks() {
        assert!((calibrated_alpha(1.0, Some(0.9), EstimateStatus::Ok, 0.7) - 3.0).abs() < 1e-12);
        assert_eq!(
            calibrated_alpha(1.0, Some(0.9), EstimateStatus::NonConservativeSign, 0.7),
            1.0
        );
        assert_eq!(calibrated_alpha(1.0, Some(1.0), EstimateStatus::Ok, 0.7), 1.0);
        assert_eq!(calibrated_alpha(1.0, Some(0.9), EstimateStatus::Ok, 1.1), 1.0);
        assert_eq!(
            calibrated_alpha(1.0, None, EstimateStatus::DegenerateQuadratic, 0.7),
            1.0
        );
    }

    #[test]
    fn no_directions_no_rows() {
        let (model, x0) = ieee14();
        let alpha = vec![1.0; model.n_pq()];
        let opts = SweepOptions {
            with_cpf: true,
            ..Default::default()
        };
        let result = sweep_boundary(&model, &x0, &VaryingSpec::ieee14(), &[], &alpha, &opts).unwrap();
        assert!(result.rows().is_empty());
        assert_eq!(result.failures(), 0);
    }

    #[test]
    fn uniform_and_split_gaps() {
        let s = bus_stats(1, &[0.05; 6]);
        assert!((s.mean - 0.05).abs() < 1e-15);
        assert!(s.std < 1e-15);
        assert_eq!(s.sign_consistency, 1.0);
        let s = bus_stats(1, &[0.1, -0.1]);
        assert_eq!(s.sign_consistency, 0.5);
        assert_eq!(s.mean, 0.0);
    }

    #[test]
    fn stats_of_known_gaps() {
        let s = bus_stats(7, &[0.1, 0.3, -0.2, 0.2]);
        assert!((s.mean - 0.1).abs() < 1e-15);
        assert!((s.std - (0.035f64).sqrt()).abs() < 1e-15);
        assert_eq!(s.sign_consistency, 0.75);
        assert_eq!(s.majority_sign, 1);
        assert_eq!(s.max_abs, 0.3);
    }

    proptest! {
        // scaling every α by t scales every offset V_appx - a by t
        #[test]
        fn alpha_scaling_composes(t in 0.1f64..10.0, beta in 0.0f64..std::f64::consts::TAU) {
            let (model, x0) = ieee14();
            let spec = VaryingSpec::ieee14();
            let dir = Direction { id: 0, beta, delta: None, unit: vec![beta.cos(), beta.sin()] };
            let base = vec![1.7; model.n_pq()];
            let scaled: Vec<f64> = base.iter().map(|a| a * t).collect();
            let opts = SweepOptions::default();
            let r1 = sweep_boundary(&model, &x0, &spec, std::slice::from_ref(&dir), &base, &opts).unwrap();
            let r2 = sweep_boundary(&model, &x0, &spec, std::slice::from_ref(&dir), &scaled, &opts).unwrap();
            for (a, b) in r1.rows().iter().zip(r2.rows()) {
                if let (Some(va), Some(vb)) = (a.v_appx_cal, b.v_appx_cal) {
                    let da = va - a.v0;
                    let db = vb - b.v0;
                    prop_assert!((db - t * da).abs() <= 1e-12 * (1.0 + db.abs()));
                }
            }
        }
    }
}
