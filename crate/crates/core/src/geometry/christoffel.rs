use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::powerflow::HessianTensor;

/// Below this dimension Christoffel tensors are stored for every `(i, j)`
/// pair; at or above it only pairs that appear in the Hessian are kept.
pub const DENSE_THRESHOLD: usize = 50;

/// A 3-index array `T^k_ij` (or `T_{ij,k}`) symmetric in `i, j`.
///
/// Storage is one dense column over `k` for each stored pair `i <= j`.
/// Pairs outside `pairs` are structurally zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    n: usize,
    pairs: Vec<(usize, usize)>,
    values: DMatrix<f64>,
}

impl SymTensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            pairs: Vec::new(),
            values: DMatrix::zeros(n, 0),
        }
    }

    fn with_pairs(n: usize, pairs: Vec<(usize, usize)>) -> Self {
        let values = DMatrix::zeros(n, pairs.len());
        Self { n, pairs, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored `(i, j)` pairs, `i <= j`, sorted.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Number of stored scalars (pairs times `n`).
    pub fn stored(&self) -> usize {
        self.values.len()
    }

    pub fn is_dense(&self) -> bool {
        self.pairs.len() == self.n * (self.n + 1) / 2
    }

    fn column(&self, i: usize, j: usize) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.pairs.binary_search(&key).ok()
    }

    /// Value at upper index `k`, lower pair `(i, j)`.
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.column(i, j).map_or(0.0, |p| self.values[(k, p)])
    }

    /// Column-per-pair matrix (`n x pairs`).
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// `out[k] = Σ_ij T^k_ij u^i u^j`.
    pub fn contract(&self, u: &DVector<f64>) -> DVector<f64> {
        let weights = DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(i, j)| {
                let w = u[i] * u[j];
                if i == j {
                    w
                } else {
                    2.0 * w
                }
            }),
        );
        &self.values * weights
    }

    /// Nonzero entries as `(k, i, j, value)` with `i <= j`, sorted by `(k, i, j)`.
    pub fn triples(&self) -> Vec<(usize, usize, usize, f64)> {
        let mut out = Vec::new();
        for k in 0..self.n {
            for (p, &(i, j)) in self.pairs.iter().enumerate() {
                let v = self.values[(k, p)];
                if v != 0.0 {
                    out.push((k, i, j, v));
                }
            }
        }
        out
    }

    /// Lowers or raises the free index: `out^k_ij = Σ_l M_kl T^l_ij`.
    pub fn transform(&self, m: &DMatrix<f64>) -> Self {
        Self {
            n: self.n,
            pairs: self.pairs.clone(),
            values: m * &self.values,
        }
    }
}

fn pair_layout(h: &HessianTensor) -> Vec<(usize, usize)> {
    let n = h.dim();
    if n < DENSE_THRESHOLD {
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect()
    } else {
        let set: BTreeSet<(usize, usize)> = h.entries().iter().map(|e| (e.i, e.j)).collect();
        set.into_iter().collect()
    }
}

/// Christoffel symbols of the first kind, `Γ_{ij,k} = ⟨r_ij, r_k⟩`.
///
/// With `r = (F, s)` the second derivatives of the identity block vanish,
/// so `r_ij = (H[·][i][j], 0)` and the inner product with `r_k = (J[·][k], e_k)`
/// reduces to `Σ_m H[m][i][j] J[m][k]`.
pub fn christoffel_first(h: &HessianTensor, j: &DMatrix<f64>) -> SymTensor3 {
    let n = h.dim();
    assert_eq!(j.shape(), (n, n), "jacobian/hessian dimension mismatch");
    let mut out = SymTensor3::with_pairs(n, pair_layout(h));
    for e in h.entries() {
        let p = out.column(e.i, e.j).expect("hessian pair missing from layout");
        let mut col = out.values.column_mut(p);
        col.axpy(e.value, &j.row(e.m).transpose(), 1.0);
    }
    out
}

/// Christoffel symbols of the second kind, `Γ^k_ij = Σ_l g^{kl} Γ_{ij,l}`.
pub fn christoffel_second(g_inv: &DMatrix<f64>, first: &SymTensor3) -> SymTensor3 {
    first.transform(g_inv)
}
