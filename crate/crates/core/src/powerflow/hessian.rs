use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::Serialize;

use super::{coupling, rows, self_coefficient, BusFrame};
use crate::network::NetworkModel;

/// One stored second derivative ∂²F^m / ∂s^i ∂s^j with `i <= j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HessianEntry {
    pub m: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Sparse second-derivative tensor of the power-flow map, symmetric in its
/// last two indices. Only the upper triangle (`i <= j`) is stored, sorted
/// by `(m, i, j)`, so symmetry holds by construction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HessianTensor {
    n: usize,
    entries: Vec<HessianEntry>,
}

impl HessianTensor {
    pub fn zeros(n: usize) -> Self {
        Self { n, entries: Vec::new() }
    }

    /// Builds from arbitrary `(m, i, j, value)` contributions; duplicate
    /// coordinates (in either `i, j` order) are summed.
    pub fn from_triples(n: usize, triples: impl IntoIterator<Item = (usize, usize, usize, f64)>) -> Self {
        let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for (m, i, j, v) in triples {
            assert!(m < n && i < n && j < n, "hessian index out of range");
            *acc.entry((m, i.min(j), i.max(j))).or_insert(0.0) += v;
        }
        let entries = acc
            .into_iter()
            .filter(|(_, v)| *v != 0.0)
            .map(|((m, i, j), value)| HessianEntry { m, i, j, value })
            .collect();
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[HessianEntry] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, m: usize, i: usize, j: usize) -> f64 {
        let key = (m, i.min(j), i.max(j));
        self.entries
            .binary_search_by(|e| (e.m, e.i, e.j).cmp(&key))
            .map(|p| self.entries[p].value)
            .unwrap_or(0.0)
    }

    /// `out[m] = Σ_ij H[m][i][j] u^i w^j`.
    pub fn bilinear(&self, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for e in &self.entries {
            let mut t = u[e.i] * w[e.j];
            if e.i != e.j {
                t += u[e.j] * w[e.i];
            }
            out[e.m] += e.value * t;
        }
        out
    }

    /// Dense `n x n` slice for residual row `m`.
    pub fn slice(&self, m: usize) -> nalgebra::DMatrix<f64> {
        let mut out = nalgebra::DMatrix::zeros(self.n, self.n);
        for e in self.entries.iter().filter(|e| e.m == m) {
            out[(e.i, e.j)] = e.value;
            out[(e.j, e.i)] = e.value;
        }
        out
    }
}

pub(super) fn hessian_raw(model: &NetworkModel, x: &DVector<f64>) -> HessianTensor {
    let frame = BusFrame::new(model, x);
    let (g, b) = (model.g(), model.b());
    let mut triples = Vec::new();

    for i in 0..model.n_bus() {
        let vi = frame.vm[i];
        for (kind, row) in rows(&frame, i) {
            let Some(row) = row else { continue };
            if let Some(p) = frame.v_var(i) {
                triples.push((row, p, p, 2.0 * self_coefficient(kind, g[(i, i)], b[(i, i)])));
            }
            for &m in model.neighbors(i) {
                let vm = frame.vm[m];
                let (c, dc) = coupling(kind, g[(i, m)], b[(i, m)], frame.va[i] - frame.va[m]);
                let ddc = -c;
                // local variables: V_i, V_m, θ_i, θ_m
                let vars = [frame.v_var(i), frame.v_var(m), frame.theta_var(i), frame.theta_var(m)];
                let local = [
                    [0.0, c, vm * dc, -vm * dc],
                    [c, 0.0, vi * dc, -vi * dc],
                    [vm * dc, vi * dc, vi * vm * ddc, -vi * vm * ddc],
                    [-vm * dc, -vi * dc, -vi * vm * ddc, vi * vm * ddc],
                ];
                for a in 0..4 {
                    for bb in a..4 {
                        if let (Some(p), Some(q)) = (vars[a], vars[bb]) {
                            if local[a][bb] != 0.0 {
                                triples.push((row, p, q, local[a][bb]));
                            }
                        }
                    }
                }
            }
        }
    }
    HessianTensor::from_triples(model.dim(), triples)
}
