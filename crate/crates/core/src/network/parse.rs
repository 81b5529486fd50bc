//! Reader and writer for the plain-text case format.
//!
//! ```text
//! # comment
//! baseMVA 100
//! bus
//! # id type Pd Qd Gs Bs Vm       type: 1 = PQ, 2 = PV, 3 = slack
//! 1 3 0 0 0 0 1.06
//! gen
//! # bus Pg Vset
//! 1 232.4 1.06
//! branch
//! # from to r x b [tap [shift]]  tap 0 means 1, shift in degrees
//! 1 2 0.01938 0.05917 0.0528 0 0
//! ```
//!
//! Powers are in MW / MVAr and shunts in MW / MVAr at 1 p.u.; they are
//! converted to per-unit on `baseMVA`. Impedances are already per-unit.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{Branch, Bus, BusKind, NetworkError, NetworkModel};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Bus,
    Gen,
    Branch,
}

struct BusRow {
    id: u32,
    kind: BusKind,
    pd: f64,
    qd: f64,
    gs: f64,
    bs: f64,
    vm: f64,
}

struct GenRow {
    bus: u32,
    pg: f64,
    vset: f64,
    line: usize,
}

fn syntax(line: usize, message: impl Into<String>) -> NetworkError {
    NetworkError::Syntax {
        line,
        message: message.into(),
    }
}

fn numbers(line: usize, fields: &[&str]) -> Result<Vec<f64>, NetworkError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| syntax(line, format!("invalid number '{f}'")))
        })
        .collect()
}

fn bus_id(line: usize, v: f64) -> Result<u32, NetworkError> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u32)
    } else {
        Err(syntax(line, format!("bus id must be a positive integer, got {v}")))
    }
}

/// Parses case-file text into a validated [`NetworkModel`].
pub fn parse_case(text: &str) -> Result<NetworkModel, NetworkError> {
    let mut base_mva: Option<f64> = None;
    let mut section = Section::None;
    let mut bus_rows: Vec<BusRow> = Vec::new();
    let mut gen_rows: Vec<GenRow> = Vec::new();
    let mut branches: Vec<Branch> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        match fields[0] {
            "baseMVA" => {
                if fields.len() != 2 {
                    return Err(syntax(line, "expected 'baseMVA <number>'"));
                }
                let v = numbers(line, &fields[1..])?[0];
                if v <= 0.0 {
                    return Err(syntax(line, "baseMVA must be positive"));
                }
                base_mva = Some(v);
                section = Section::None;
                continue;
            }
            "bus" => {
                section = Section::Bus;
                continue;
            }
            "gen" => {
                section = Section::Gen;
                continue;
            }
            "branch" => {
                section = Section::Branch;
                continue;
            }
            "end" => {
                section = Section::None;
                continue;
            }
            _ => {}
        }
        let v = numbers(line, &fields)?;
        match section {
            Section::None => return Err(syntax(line, "data row outside of a table")),
            Section::Bus => {
                if v.len() != 7 {
                    return Err(syntax(line, format!("bus row needs 7 columns, found {}", v.len())));
                }
                let kind = match v[1] {
                    1.0 => BusKind::PQ,
                    2.0 => BusKind::PV,
                    3.0 => BusKind::Slack,
                    t => return Err(syntax(line, format!("unknown bus type {t}"))),
                };
                bus_rows.push(BusRow {
                    id: bus_id(line, v[0])?,
                    kind,
                    pd: v[2],
                    qd: v[3],
                    gs: v[4],
                    bs: v[5],
                    vm: v[6],
                });
            }
            Section::Gen => {
                if v.len() != 3 {
                    return Err(syntax(line, format!("gen row needs 3 columns, found {}", v.len())));
                }
                gen_rows.push(GenRow {
                    bus: bus_id(line, v[0])?,
                    pg: v[1],
                    vset: v[2],
                    line,
                });
            }
            Section::Branch => {
                if !(5..=7).contains(&v.len()) {
                    return Err(syntax(
                        line,
                        format!("branch row needs 5 to 7 columns, found {}", v.len()),
                    ));
                }
                let from = bus_id(line, v[0])?;
                let to = bus_id(line, v[1])?;
                if from == to {
                    return Err(syntax(line, format!("branch connects bus {from} to itself")));
                }
                let tap = match v.get(5).copied().unwrap_or(0.0) {
                    0.0 => 1.0,
                    t if t < 0.0 => return Err(NetworkError::NonPositiveTap { from, to, tap: t }),
                    t => t,
                };
                let shift = v.get(6).copied().unwrap_or(0.0).to_radians();
                branches.push(Branch {
                    from,
                    to,
                    r: v[2],
                    x: v[3],
                    b: v[4],
                    tap,
                    shift,
                });
            }
        }
    }

    let base = base_mva.ok_or_else(|| syntax(text.lines().count().max(1), "missing baseMVA"))?;

    let mut dispatch: BTreeMap<u32, (f64, Option<f64>)> = BTreeMap::new();
    for g in &gen_rows {
        if !bus_rows.iter().any(|b| b.id == g.bus) {
            return Err(syntax(g.line, format!("generator at undefined bus {}", g.bus)));
        }
        let entry = dispatch.entry(g.bus).or_insert((0.0, None));
        entry.0 += g.pg;
        entry.1.get_or_insert(g.vset);
    }

    let buses = bus_rows
        .into_iter()
        .map(|row| {
            let (pg, vset) = dispatch.get(&row.id).copied().unwrap_or((0.0, None));
            let v_set = match row.kind {
                BusKind::PQ => None,
                _ => Some(vset.unwrap_or(row.vm)),
            };
            Bus {
                id: row.id,
                kind: row.kind,
                v_set,
                p_inj: (pg - row.pd) / base,
                q_inj: -row.qd / base,
                gs: row.gs / base,
                bs: row.bs / base,
            }
        })
        .collect();

    NetworkModel::new(base, buses, branches)
}

/// Writes a model back to the case format. Buses appear in internal order;
/// net injections are emitted as loads (PQ) or dispatch (slack/PV).
pub fn write_case(model: &NetworkModel) -> String {
    let base = model.base_mva();
    let mut out = String::new();
    let _ = writeln!(out, "baseMVA {base}");
    let _ = writeln!(out, "\nbus");
    for bus in model.buses() {
        let (code, pd) = match bus.kind {
            BusKind::PQ => (1, -bus.p_inj * base),
            BusKind::PV => (2, 0.0),
            BusKind::Slack => (3, 0.0),
        };
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            bus.id,
            code,
            pd,
            -bus.q_inj * base,
            bus.gs * base,
            bus.bs * base,
            bus.v_set.unwrap_or(1.0)
        );
    }
    let _ = writeln!(out, "\ngen");
    for bus in model.buses().iter().filter(|b| b.kind != BusKind::PQ) {
        let _ = writeln!(out, "{} {} {}", bus.id, bus.p_inj * base, bus.v_set.unwrap_or(1.0));
    }
    let _ = writeln!(out, "\nbranch");
    for br in model.branches() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            br.from,
            br.to,
            br.r,
            br.x,
            br.b,
            br.tap,
            br.shift.to_degrees()
        );
    }
    out
}
