use std::env;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use geoflow::continuation::{cpf_trace_from, CpfOptions};
use geoflow::geometry::GeometryBundle;
use geoflow::network::BusKind;
use geoflow::powerflow::{newton_solve_with, singularity_metric, FlowMap, InjectionVector, NewtonOptions, StateVector};
use geoflow::sweep::{
    calibrate_alpha, directions_2d, directions_3d, gap_statistics, sweep_boundary, Direction, GapKind, GapStatistics,
    SweepOptions, SweepResult, VaryingSpec,
};
use geoflow::{cases, parse_case, NetworkModel};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::args::{AlphaMode, CommonArgs, DirectionGrid, Format, SweepArgs};
use crate::error::CliError;
use crate::output::{emit, matrix_rows, num, sweep_csv, sweep_row_json, to_json};

/// Whether every direction of a sweep succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Complete,
    Partial,
}

pub const DATA_ENV: &str = "GEOFLOW_DATA";

fn default_data_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))
}

/// Case text and display name. Looks for an existing path first, then in
/// `$GEOFLOW_DATA` (or the repository data directory), then among the
/// bundled cases.
fn read_case(case: &str) -> Result<(String, String), CliError> {
    let stem = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let path = Path::new(case);
    if path.is_file() {
        return Ok((stem(path), fs::read_to_string(path)?));
    }
    let dir = env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(default_data_dir);
    for candidate in [dir.join(case), dir.join(format!("{case}.txt"))] {
        if candidate.is_file() {
            return Ok((stem(&candidate), fs::read_to_string(&candidate)?));
        }
    }
    if !case.contains(['/', '\\']) {
        if let Some(text) = cases::by_name(case) {
            return Ok((case.to_string(), text.to_string()));
        }
    }
    Err(CliError::Input(format!("case `{case}` not found")))
}

struct Loaded {
    name: String,
    model: NetworkModel,
}

fn load(common: &CommonArgs) -> Result<Loaded, CliError> {
    if !common.load_scale.is_finite() || common.load_scale < 0.0 {
        return Err(CliError::Input(format!("invalid --load-scale {}", common.load_scale)));
    }
    let (name, text) = read_case(&common.case)?;
    let model = parse_case(&text)?.scaled(common.load_scale);
    Ok(Loaded { name, model })
}

fn solve_base(model: &NetworkModel) -> Result<geoflow::powerflow::NewtonReport, CliError> {
    let target = InjectionVector::scheduled(model);
    Ok(newton_solve_with(
        model,
        &target,
        &StateVector::flat(model),
        NewtonOptions::default(),
    )?)
}

fn kind_label(kind: BusKind) -> &'static str {
    match kind {
        BusKind::Slack => "slack",
        BusKind::PV => "PV",
        BusKind::PQ => "PQ",
    }
}

/// Magnitudes and angles for every bus, in internal order.
fn bus_voltages(model: &NetworkModel, x: &StateVector) -> Vec<(u32, BusKind, f64, f64)> {
    let ng = model.n_gen();
    model
        .buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            let v = if i < ng {
                bus.v_set.unwrap_or(1.0)
            } else {
                x.v()[i - ng]
            };
            let theta = if i == 0 { 0.0 } else { x.theta()[i - 1] };
            (bus.id, bus.kind, v, theta)
        })
        .collect()
}

pub fn solve(args: &CommonArgs) -> Result<Outcome, CliError> {
    let Loaded { name, model } = load(args)?;
    let report = solve_base(&model)?;
    let sigma_min = singularity_metric(&model.jacobian(report.state.as_vector()));
    let buses = bus_voltages(&model, &report.state);
    eprintln!(
        "{name}: converged in {} iterations, residual {:.3e}, sigma_min {:.6e}",
        report.iterations, report.residual, sigma_min
    );
    let content = match args.format {
        Format::Csv => {
            let mut out = String::from("bus,kind,V,theta\n");
            for (id, kind, v, theta) in &buses {
                let _ = writeln!(out, "{id},{},{},{}", kind_label(*kind), num(*v), num(*theta));
            }
            out
        }
        Format::Json => to_json(&json!({
            "case": name,
            "load_scale": args.load_scale,
            "iterations": report.iterations,
            "residual": report.residual,
            "sigma_min": sigma_min,
            "buses": buses.iter().map(|(id, kind, v, theta)| json!({
                "bus": id, "kind": kind_label(*kind), "V": v, "theta": theta,
            })).collect::<Vec<_>>(),
        })),
    };
    emit(args.out.as_deref(), &content)?;
    Ok(Outcome::Complete)
}

pub fn tensors(args: &CommonArgs) -> Result<Outcome, CliError> {
    if args.format == Format::Csv && args.out.is_some() {
        eprintln!("note: the tensor dump is always JSON");
    }
    let Loaded { name, model } = load(args)?;
    let x0 = solve_base(&model)?.state;
    let bundle = GeometryBundle::at(&model, &x0)?;
    let inverse_residual = bundle.inverse_residual();
    let gamma2: Vec<Value> = bundle
        .gamma2
        .triples()
        .into_iter()
        .map(|(k, i, j, value)| json!({ "k": k, "i": i, "j": j, "value": value }))
        .collect();
    let content = to_json(&json!({
        "n": bundle.dim(),
        "g": matrix_rows(&bundle.g),
        "g_inv": matrix_rows(&bundle.g_inv),
        "gamma2": gamma2,
        "metadata": {
            "case": name,
            "load_scale": args.load_scale,
            "n_pq": model.n_pq(),
            "pq_buses": model.pq_ids(),
            "state_order": "V at PQ buses, then theta at non-slack buses",
            "sigma_min": bundle.sigma_min,
            "identity_residual": inverse_residual,
            "identity_check_passed": inverse_residual < 1e-10,
            "gamma2_nonzero": gamma2.len(),
            "gamma2_stored": bundle.gamma2.stored(),
            "gamma2_dense": bundle.gamma2.is_dense(),
        },
    }));
    emit(args.out.as_deref(), &content)?;
    Ok(Outcome::Complete)
}

/// Spec from the flags, or the bundled preset for the 9/14/39-bus cases.
fn varying_spec(args: &SweepArgs, case_name: &str) -> Result<VaryingSpec, CliError> {
    if args.load_buses.is_empty() && args.renewable_buses.is_empty() {
        let digits: String = case_name.chars().filter(|c| c.is_ascii_digit()).collect();
        return match digits.as_str() {
            "9" => Ok(VaryingSpec::ieee9()),
            "14" => Ok(VaryingSpec::ieee14()),
            "39" => Ok(VaryingSpec::ieee39()),
            _ => Err(CliError::Input(
                "no varying buses: pass --load-buses and/or --renewable-buses".into(),
            )),
        };
    }
    let spread = |values: &[f64], n: usize, flag: &str| -> Result<Vec<f64>, CliError> {
        match values.len() {
            1 => Ok(vec![values[0]; n]),
            len if len == n => Ok(values.to_vec()),
            len => Err(CliError::Input(format!("--{flag} has {len} values for {n} buses"))),
        }
    };
    let pf = spread(&args.pf, args.load_buses.len(), "pf")?;
    let rate = spread(&args.rate, args.renewable_buses.len(), "rate")?;
    Ok(VaryingSpec::new(
        args.load_buses.iter().copied().zip(pf).collect(),
        args.renewable_buses.iter().copied().zip(rate).collect(),
    )?)
}

fn direction_family(grid: DirectionGrid, spec: &VaryingSpec) -> Result<Vec<Direction>, CliError> {
    let (dirs, dim) = match grid {
        DirectionGrid::Circle(n) => (directions_2d(n), 2),
        DirectionGrid::Sphere(nb, nd) => (directions_3d(nb, nd), 3),
    };
    if spec.sweep_dim() != dim {
        return Err(CliError::Input(format!(
            "a {dim}-D direction grid needs {dim} sweep components, the varying-bus set provides {}",
            spec.sweep_dim()
        )));
    }
    Ok(dirs)
}

fn calibration_direction(spec: &VaryingSpec, beta: f64) -> Direction {
    let mut unit = vec![0.0; spec.sweep_dim()];
    unit[0] = beta.cos();
    if unit.len() > 1 {
        unit[1] = beta.sin();
    }
    Direction {
        id: 0,
        beta,
        delta: None,
        unit,
    }
}

struct Prepared {
    name: String,
    model: NetworkModel,
    x0: StateVector,
    spec: VaryingSpec,
    directions: Vec<Direction>,
}

fn prepare(args: &SweepArgs) -> Result<Prepared, CliError> {
    let Loaded { name, model } = load(&args.common)?;
    let spec = varying_spec(args, &name)?;
    spec.check(&model)?;
    let directions = direction_family(args.directions, &spec)?;
    let x0 = solve_base(&model)?.state;
    Ok(Prepared {
        name,
        model,
        x0,
        spec,
        directions,
    })
}

fn alpha_vector(args: &SweepArgs, p: &Prepared, mode: &AlphaMode) -> Result<Vec<f64>, CliError> {
    let n = p.model.n_pq();
    match mode {
        AlphaMode::Unit => Ok(vec![1.0; n]),
        AlphaMode::Fixed(values) if values.len() == n => Ok(values.clone()),
        AlphaMode::Fixed(values) => Err(CliError::Input(format!(
            "--alpha has {} values, the case has {n} PQ buses",
            values.len()
        ))),
        AlphaMode::Calibrated => {
            let dir = calibration_direction(&p.spec, args.calibration_beta);
            Ok(calibrate_alpha(&p.model, &p.x0, &p.spec, &dir, &CpfOptions::default())?)
        }
    }
}

fn metadata(args: &SweepArgs, p: &Prepared, alpha: &[f64], alpha_mode: &AlphaMode) -> Value {
    json!({
        "case": p.name,
        "load_scale": args.common.load_scale,
        "spec": p.spec,
        "alpha_mode": alpha_mode.label(),
        "alpha": alpha,
        "pq_buses": p.model.pq_ids(),
        "directions": p.directions.len(),
        "with_cpf": args.with_cpf,
    })
}

fn report_timings(result: &SweepResult) {
    let t = &result.timings;
    eprint!(
        "timings: geometry {:.6} s, estimates {:.6} s",
        t.geometry.as_secs_f64(),
        t.estimates.as_secs_f64()
    );
    match t.cpf {
        Some(cpf) => eprintln!(", continuation {:.6} s", cpf.as_secs_f64()),
        None => eprintln!(),
    }
}

fn outcome_of(result: &SweepResult) -> Outcome {
    let failed = result.failures();
    if failed > 0 {
        eprintln!("{failed} of {} directions failed", result.directions.len());
        Outcome::Partial
    } else {
        Outcome::Complete
    }
}

pub fn boundary(args: &SweepArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let alpha = alpha_vector(args, &p, &args.alpha)?;
    let opts = SweepOptions {
        with_cpf: args.with_cpf,
        cpf: CpfOptions::default(),
    };
    let result = sweep_boundary(&p.model, &p.x0, &p.spec, &p.directions, &alpha, &opts)?;
    report_timings(&result);
    let rows = result.rows();
    let content = match args.common.format {
        Format::Csv => sweep_csv(&rows),
        Format::Json => to_json(&json!({
            "metadata": metadata(args, &p, &alpha, &args.alpha),
            "rows": rows.iter().map(sweep_row_json).collect::<Vec<_>>(),
        })),
    };
    emit(args.common.out.as_deref(), &content)?;
    Ok(outcome_of(&result))
}

pub fn cpf(args: &SweepArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let base = InjectionVector::new(p.model.n_bus() - 1, p.model.evaluate(p.x0.as_vector()));
    let opts = CpfOptions::default();
    let injections = p
        .directions
        .iter()
        .map(|dir| geoflow::sweep::build_direction(&p.model, &p.spec, &p.spec.expand(&dir.unit)?))
        .collect::<Result<Vec<_>, _>>()?;
    let traces: Vec<_> = injections
        .par_iter()
        .map(|d| cpf_trace_from(&p.model, &base, &p.x0, d, &opts))
        .collect();

    let pq = p.model.pq_ids();
    let mut failed = 0;
    let content = match args.common.format {
        Format::Csv => {
            let mut out = String::from("direction_id,step,lambda,sigma_min");
            for id in &pq {
                let _ = write!(out, ",V_{id}");
            }
            out.push('\n');
            for (dir, trace) in p.directions.iter().zip(&traces) {
                let Ok(trace) = trace else {
                    failed += 1;
                    continue;
                };
                for (step, point) in trace.points.iter().enumerate() {
                    let _ = write!(out, "{},{step},{},{}", dir.id, num(point.lambda), num(point.sigma_min));
                    for v in point.state.v() {
                        let _ = write!(out, ",{}", num(*v));
                    }
                    out.push('\n');
                }
            }
            out
        }
        Format::Json => {
            let entries: Vec<Value> = p
                .directions
                .iter()
                .zip(&traces)
                .map(|(dir, trace)| match trace {
                    Ok(t) => json!({
                        "direction_id": dir.id,
                        "beta": dir.beta,
                        "delta": dir.delta,
                        "halt_reason": format!("{:?}", t.halt_reason),
                        "points": t.points.iter().map(|pt| json!({
                            "lambda": pt.lambda, "sigma_min": pt.sigma_min, "V": pt.state.v(),
                        })).collect::<Vec<_>>(),
                        "nose": t.nose.as_ref().map(|n| json!({
                            "lambda": n.lambda, "sigma_min": n.sigma_min, "V": n.state.v(),
                        })),
                    }),
                    Err(e) => {
                        failed += 1;
                        json!({ "direction_id": dir.id, "error": e.to_string() })
                    }
                })
                .collect();
            to_json(&json!({
                "metadata": { "case": p.name, "load_scale": args.common.load_scale, "spec": p.spec, "pq_buses": pq },
                "traces": entries,
            }))
        }
    };
    for (dir, trace) in p.directions.iter().zip(&traces) {
        match trace {
            Ok(t) => match &t.nose {
                Some(n) => eprintln!("direction {}: nose at lambda {:.10}", dir.id, n.lambda),
                None => eprintln!("direction {}: no nose ({:?})", dir.id, t.halt_reason),
            },
            Err(e) => eprintln!("direction {}: {e}", dir.id),
        }
    }
    emit(args.common.out.as_deref(), &content)?;
    if failed == traces.len() && failed > 0 {
        return Err(CliError::Numerical("continuation failed along every direction".into()));
    }
    Ok(if failed > 0 {
        Outcome::Partial
    } else {
        Outcome::Complete
    })
}

/// Published reference timings: (case digits, CPF s, proposed s, speedup).
const REFERENCE_TIMES: [(&str, f64, f64, f64); 3] = [
    ("9", 10.4, 0.0141, 739.0),
    ("14", 17.5, 0.0191, 916.0),
    ("39", 42.5, 0.0441, 964.0),
];

fn stats_json(stats: &GapStatistics) -> Value {
    json!({
        "kind": stats.kind,
        "buses": stats.buses,
        "status_counts": stats.status_counts,
    })
}

pub fn compare(args: &SweepArgs) -> Result<Outcome, CliError> {
    let p = prepare(args)?;
    let mode = match &args.alpha {
        AlphaMode::Unit => AlphaMode::Calibrated,
        other => other.clone(),
    };
    let calibration_start = Instant::now();
    let alpha = alpha_vector(args, &p, &mode)?;
    let calibration = calibration_start.elapsed();
    let opts = SweepOptions {
        with_cpf: true,
        cpf: CpfOptions::default(),
    };
    let result = sweep_boundary(&p.model, &p.x0, &p.spec, &p.directions, &alpha, &opts)?;
    report_timings(&result);
    let raw = gap_statistics(&result, GapKind::Raw)?;
    let cal = gap_statistics(&result, GapKind::Calibrated)?;

    let cpf_s = result.timings.cpf.unwrap_or_default().as_secs_f64();
    let proposed_s = result.timings.estimates.as_secs_f64();
    let speedup = cpf_s / proposed_s;
    let digits: String = p.name.chars().filter(|c| c.is_ascii_digit()).collect();
    let reference = REFERENCE_TIMES.iter().find(|r| r.0 == digits);

    let improved = raw
        .buses
        .iter()
        .zip(&cal.buses)
        .filter(|(r, c)| c.mean_abs < r.mean_abs)
        .count();
    let change: Vec<f64> = raw
        .buses
        .iter()
        .zip(&cal.buses)
        .filter(|(r, _)| r.mean_abs > 0.0)
        .map(|(r, c)| (c.mean_abs - r.mean_abs) / r.mean_abs)
        .collect();
    let mean_change = 100.0 * change.iter().sum::<f64>() / change.len().max(1) as f64;

    let content = match args.common.format {
        Format::Json => to_json(&json!({
            "metadata": metadata(args, &p, &alpha, &mode),
            "timing": {
                "directions": p.directions.len(),
                "cpf_seconds": cpf_s,
                "proposed_seconds": proposed_s,
                "geometry_seconds": result.timings.geometry.as_secs_f64(),
                "calibration_seconds": calibration.as_secs_f64(),
                "speedup": speedup,
                "reference": reference.map(|r| json!({ "cpf_seconds": r.1, "proposed_seconds": r.2, "speedup": r.3 })),
            },
            "gap_raw": stats_json(&raw),
            "gap_calibrated": stats_json(&cal),
            "calibration": { "improved_buses": improved, "pq_buses": raw.buses.len(), "mean_abs_gap_change_percent": mean_change },
        })),
        Format::Csv => {
            let mut out = String::new();
            let _ = writeln!(out, "# Execution time, {} directions, {}", p.directions.len(), p.name);
            let _ = writeln!(out, "{:<16}{:>14}{:>14}", "", "this run", "reference");
            let refs = |i: usize| reference.map(|r| [r.1, r.2, r.3][i]);
            let cell = |v: Option<f64>| v.map(|x| format!("{x:>14}")).unwrap_or_else(|| format!("{:>14}", "-"));
            let _ = writeln!(out, "{:<16}{:>14.4}{}", "CPF (sec)", cpf_s, cell(refs(0)));
            let _ = writeln!(out, "{:<16}{:>14.6}{}", "Proposed (sec)", proposed_s, cell(refs(1)));
            let _ = writeln!(out, "{:<16}{:>14.0}{}", "Speedup", speedup, cell(refs(2)));
            let _ = writeln!(
                out,
                "# geometry setup {:.6} s, calibration {:.6} s (not included above)",
                result.timings.geometry.as_secs_f64(),
                calibration.as_secs_f64()
            );
            let _ = writeln!(out, "#");
            let _ = writeln!(
                out,
                "bus,alpha,n_raw,mean_gap_raw,std_gap_raw,sign_consistency_raw,max_abs_gap_raw,mean_abs_gap_raw,\
                 n_cal,mean_gap_cal,std_gap_cal,sign_consistency_cal,max_abs_gap_cal,mean_abs_gap_cal"
            );
            for ((r, c), a) in raw.buses.iter().zip(&cal.buses).zip(&alpha) {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.bus,
                    num(*a),
                    r.count,
                    num(r.mean),
                    num(r.std),
                    num(r.sign_consistency),
                    num(r.max_abs),
                    num(r.mean_abs),
                    c.count,
                    num(c.mean),
                    num(c.std),
                    num(c.sign_consistency),
                    num(c.max_abs),
                    num(c.mean_abs)
                );
            }
            let counts: Vec<String> = raw.status_counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(out, "# statuses: {}", counts.join(" "));
            let _ = writeln!(
                out,
                "# calibrated alpha lowers mean |gap| on {improved} of {} PQ buses; mean change {mean_change:+.1}%",
                raw.buses.len()
            );
            out
        }
    };
    emit(args.common.out.as_deref(), &content)?;
    Ok(outcome_of(&result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn bundled_names_resolve() {
        for name in ["case9", "case14", "case39"] {
            let (stem, text) = read_case(name).unwrap();
            assert_eq!(stem, name);
            assert!(parse_case(&text).is_ok());
        }
        assert!(matches!(read_case("nope/case77.txt"), Err(CliError::Input(_))));
    }

    #[test]
    fn calibration_direction_is_unit() {
        let spec = VaryingSpec::ieee14();
        let d = calibration_direction(&spec, PI / 3.0);
        let norm: f64 = d.unit.iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-15);
        assert_eq!(calibration_direction(&spec, 0.0).unit, vec![1.0, 0.0]);
    }
}
