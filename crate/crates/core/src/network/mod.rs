//! Grid description: buses, branches and the bus admittance matrix.
//!
//! Buses are stored in the internal order used by every other module:
//! the slack bus first, then all PV buses, then all PQ buses, each group
//! keeping the relative order of the source file. The original bus ids are
//! retained on every [`Bus`] so output can be labelled with them.

mod admittance;
mod parse;

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

pub use admittance::build_admittance;
pub use parse::{parse_case, write_case};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("no slack bus")]
    NoSlack,
    #[error("more than one slack bus ({0} and {1})")]
    MultipleSlack(u32, u32),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("bus {0} is not defined")]
    UnknownBus(u32),
    #[error("bus {0} has a nonpositive voltage setpoint")]
    BadSetpoint(u32),
    #[error("PQ bus {0} carries a voltage setpoint")]
    SetpointOnPq(u32),
    #[error("branch {from}-{to} connects a bus to itself")]
    SelfLoop { from: u32, to: u32 },
    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedance { from: u32, to: u32 },
    #[error("branch {from}-{to} has nonpositive tap ratio {tap}")]
    NonPositiveTap { from: u32, to: u32, tap: f64 },
    #[error("network is disconnected: bus {0} is unreachable from the slack bus")]
    Disconnected(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

/// A bus with per-unit net injections (generation minus load).
///
/// `q_inj` is only scheduled at PQ buses; at PV and slack buses it is carried
/// along for round-tripping but plays no role in the power-flow map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub v_set: Option<f64>,
    pub p_inj: f64,
    pub q_inj: f64,
    pub gs: f64,
    pub bs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance.
    pub b: f64,
    /// Off-nominal turns ratio on the from side.
    pub tap: f64,
    /// Phase shift in radians.
    pub shift: f64,
}

impl Branch {
    pub fn line(from: u32, to: u32, r: f64, x: f64, b: f64) -> Self {
        Self {
            from,
            to,
            r,
            x,
            b,
            tap: 1.0,
            shift: 0.0,
        }
    }
}

/// Immutable, validated network in internal bus order.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    base_mva: f64,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    g: DMatrix<f64>,
    b: DMatrix<f64>,
    n_gen: usize,
    index: BTreeMap<u32, usize>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkModel {
    /// Validates the buses and branches, reorders the buses (slack, PV, PQ)
    /// and assembles the admittance matrices.
    pub fn new(base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self, NetworkError> {
        validate(&buses, &branches)?;

        let mut ordered = Vec::with_capacity(buses.len());
        for kind in [BusKind::Slack, BusKind::PV, BusKind::PQ] {
            ordered.extend(buses.iter().filter(|b| b.kind == kind).cloned());
        }
        let n_gen = ordered.iter().filter(|b| b.kind != BusKind::PQ).count();
        let index: BTreeMap<u32, usize> = ordered.iter().enumerate().map(|(i, b)| (b.id, i)).collect();

        check_connected(&ordered, &branches, &index)?;

        let (g, b) = build_admittance(&ordered, &branches)?;
        let nb = ordered.len();
        let neighbors = (0..nb)
            .map(|i| {
                (0..nb)
                    .filter(|&m| m != i && (g[(i, m)] != 0.0 || b[(i, m)] != 0.0))
                    .collect()
            })
            .collect();

        Ok(Self {
            base_mva,
            buses: ordered,
            branches,
            g,
            b,
            n_gen,
            index,
            neighbors,
        })
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Bus conductance matrix in internal order.
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Bus susceptance matrix in internal order.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Number of buses, Nb.
    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    /// Number of voltage-controlled buses including the slack, Ng.
    pub fn n_gen(&self) -> usize {
        self.n_gen
    }

    pub fn n_pq(&self) -> usize {
        self.n_bus() - self.n_gen
    }

    /// Manifold dimension N = 2 Nb - Ng - 1.
    pub fn dim(&self) -> usize {
        2 * self.n_bus() - self.n_gen - 1
    }

    /// Internal position of an original bus id.
    pub fn position(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Ids of the PQ buses, in state order.
    pub fn pq_ids(&self) -> Vec<u32> {
        self.buses[self.n_gen..].iter().map(|b| b.id).collect()
    }

    /// Buses with a nonzero off-diagonal admittance entry in row `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Copy of the model with every scheduled non-slack injection scaled by
    /// `factor` (loads and dispatch alike).
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for bus in out.buses.iter_mut().filter(|b| b.kind != BusKind::Slack) {
            bus.p_inj *= factor;
            bus.q_inj *= factor;
        }
        out
    }
}

fn validate(buses: &[Bus], branches: &[Branch]) -> Result<(), NetworkError> {
    let mut seen = BTreeMap::new();
    let mut slack: Option<u32> = None;
    for bus in buses {
        if seen.insert(bus.id, ()).is_some() {
            return Err(NetworkError::DuplicateBus(bus.id));
        }
        match bus.kind {
            BusKind::Slack | BusKind::PV => {
                if !matches!(bus.v_set, Some(v) if v > 0.0) {
                    return Err(NetworkError::BadSetpoint(bus.id));
                }
                if bus.kind == BusKind::Slack {
                    if let Some(other) = slack {
                        return Err(NetworkError::MultipleSlack(other, bus.id));
                    }
                    slack = Some(bus.id);
                }
            }
            BusKind::PQ => {
                if bus.v_set.is_some() {
                    return Err(NetworkError::SetpointOnPq(bus.id));
                }
            }
        }
    }
    if slack.is_none() {
        return Err(NetworkError::NoSlack);
    }
    for br in branches {
        for id in [br.from, br.to] {
            if !seen.contains_key(&id) {
                return Err(NetworkError::UnknownBus(id));
            }
        }
        if br.from == br.to {
            return Err(NetworkError::SelfLoop {
                from: br.from,
                to: br.to,
            });
        }
        if br.r * br.r + br.x * br.x == 0.0 {
            return Err(NetworkError::ZeroImpedance {
                from: br.from,
                to: br.to,
            });
        }
        if !(br.tap > 0.0) {
            return Err(NetworkError::NonPositiveTap {
                from: br.from,
                to: br.to,
                tap: br.tap,
            });
        }
    }
    Ok(())
}

fn check_connected(buses: &[Bus], branches: &[Branch], index: &BTreeMap<u32, usize>) -> Result<(), NetworkError> {
    let mut adj = vec![Vec::new(); buses.len()];
    for br in branches {
        let (f, t) = (index[&br.from], index[&br.to]);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut reached = vec![false; buses.len()];
    let mut queue = VecDeque::from([0usize]);
    reached[0] = true;
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if !reached[j] {
                reached[j] = true;
                queue.push_back(j);
            }
        }
    }
    match reached.iter().position(|r| !r) {
        Some(i) => Err(NetworkError::Disconnected(buses[i].id)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: u32, kind: BusKind, v_set: Option<f64>) -> Bus {
        Bus {
            id,
            kind,
            v_set,
            p_inj: 0.0,
            q_inj: 0.0,
            gs: 0.0,
            bs: 0.0,
        }
    }

    #[test]
    fn reorders_slack_pv_pq() {
        let buses = vec![
            bus(7, BusKind::PQ, None),
            bus(3, BusKind::PV, Some(1.02)),
            bus(5, BusKind::Slack, Some(1.0)),
            bus(1, BusKind::PQ, None),
        ];
        let branches = vec![
            Branch::line(5, 7, 0.0, 0.1, 0.0),
            Branch::line(7, 3, 0.0, 0.1, 0.0),
            Branch::line(3, 1, 0.0, 0.1, 0.0),
        ];
        let model = NetworkModel::new(100.0, buses, branches).unwrap();
        let ids: Vec<u32> = model.buses().iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![5, 3, 7, 1]);
        assert_eq!(model.n_gen(), 2);
        assert_eq!(model.dim(), 2 * 4 - 2 - 1);
        assert_eq!(model.position(7), Some(2));
        assert_eq!(model.pq_ids(), vec![7, 1]);
    }

    #[test]
    fn rejects_missing_slack() {
        let buses = vec![bus(1, BusKind::PV, Some(1.0)), bus(2, BusKind::PQ, None)];
        let err = NetworkModel::new(100.0, buses, vec![Branch::line(1, 2, 0.0, 0.1, 0.0)]).unwrap_err();
        assert_eq!(err, NetworkError::NoSlack);
    }

    #[test]
    fn rejects_disconnected() {
        let buses = vec![
            bus(1, BusKind::Slack, Some(1.0)),
            bus(2, BusKind::PQ, None),
            bus(3, BusKind::PQ, None),
        ];
        let err = NetworkModel::new(100.0, buses, vec![Branch::line(1, 2, 0.0, 0.1, 0.0)]).unwrap_err();
        assert_eq!(err, NetworkError::Disconnected(3));
    }

    #[test]
    fn rejects_bad_branches() {
        let buses = || vec![bus(1, BusKind::Slack, Some(1.0)), bus(2, BusKind::PQ, None)];
        let zero = NetworkModel::new(100.0, buses(), vec![Branch::line(1, 2, 0.0, 0.0, 0.0)]);
        assert!(matches!(zero, Err(NetworkError::ZeroImpedance { .. })));
        let mut tapped = Branch::line(1, 2, 0.0, 0.1, 0.0);
        tapped.tap = -1.0;
        let tap = NetworkModel::new(100.0, buses(), vec![tapped]);
        assert!(matches!(tap, Err(NetworkError::NonPositiveTap { .. })));
        let self_loop = NetworkModel::new(100.0, buses(), vec![Branch::line(2, 2, 0.0, 0.1, 0.0)]);
        assert!(matches!(self_loop, Err(NetworkError::SelfLoop { .. })));
    }

    #[test]
    fn rejects_setpoint_problems() {
        let buses = vec![bus(1, BusKind::Slack, Some(0.0)), bus(2, BusKind::PQ, None)];
        let err = NetworkModel::new(100.0, buses, vec![Branch::line(1, 2, 0.0, 0.1, 0.0)]).unwrap_err();
        assert_eq!(err, NetworkError::BadSetpoint(1));
        let buses = vec![bus(1, BusKind::Slack, Some(1.0)), bus(2, BusKind::PQ, Some(1.0))];
        let err = NetworkModel::new(100.0, buses, vec![Branch::line(1, 2, 0.0, 0.1, 0.0)]).unwrap_err();
        assert_eq!(err, NetworkError::SetpointOnPq(2));
    }
}
