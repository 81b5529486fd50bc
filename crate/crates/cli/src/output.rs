use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use geoflow::sweep::SweepRow;
use serde_json::{json, Value};

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Writes `content` to `path`, or standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, content: &str) -> io::Result<()> {
    match path {
        Some(p) => fs::write(p, content),
        None => io::stdout().lock().write_all(content.as_bytes()),
    }
}

pub const SWEEP_HEADER: &str = "direction_id,beta,delta,bus,V0,V_appx_raw,V_appx_cal,V_nose,gap_raw,gap_cal,status";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 200);
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.direction_id,
            num(r.beta),
            opt(r.delta),
            r.bus,
            num(r.v0),
            opt(r.v_appx_raw),
            opt(r.v_appx_cal),
            opt(r.v_nose),
            opt(r.gap_raw()),
            opt(r.gap_cal()),
            r.status
        );
    }
    out
}

fn finite(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn sweep_row_json(r: &SweepRow) -> Value {
    json!({
        "direction_id": r.direction_id,
        "beta": r.beta,
        "delta": r.delta,
        "bus": r.bus,
        "V0": finite(r.v0),
        "V_appx_raw": r.v_appx_raw,
        "V_appx_cal": r.v_appx_cal,
        "V_nose": r.v_nose,
        "gap_raw": r.gap_raw(),
        "gap_cal": r.gap_cal(),
        "status": r.status.to_string(),
    })
}

pub fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Value {
    Value::Array(
        m.row_iter()
            .map(|row| json!(row.iter().copied().collect::<Vec<_>>()))
            .collect(),
    )
}

pub fn to_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values are serializable");
    s.push('\n');
    s
}
