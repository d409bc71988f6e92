//! Collective spin operators in the maximal-spin (Dicke) sector.
//!
//! Basis ordering is fixed: index 0 is m = +S, index N is m = -S.
//! Ensemble 1 acts as `A ⊗ I`, ensemble 2 as `I ⊗ B`, so the pair
//! index is `i1 * (N+1) + i2`.

use crate::error::{Error, Result};
use faer::{c64, Mat};

/// Square complex sparse matrix stored by columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOp {
    n: usize,
    cols: Vec<Vec<(usize, c64)>>,
}

impl SparseOp {
    pub fn zeros(n: usize) -> Self {
        SparseOp { n, cols: vec![Vec::new(); n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, c64::new(1.0, 0.0))))
    }

    /// Duplicates are summed, exact zeros dropped.
    pub fn from_triplets(n: usize, t: impl IntoIterator<Item = (usize, usize, c64)>) -> Self {
        let mut cols: Vec<Vec<(usize, c64)>> = vec![Vec::new(); n];
        for (i, j, v) in t {
            assert!(i < n && j < n, "triplet out of range");
            cols[j].push((i, v));
        }
        for c in cols.iter_mut() {
            c.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, c64)> = Vec::with_capacity(c.len());
            for &(i, v) in c.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == i => last.1 += v,
                    _ => merged.push((i, v)),
                }
            }
            merged.retain(|e| e.1 != c64::new(0.0, 0.0));
            *c = merged;
        }
        SparseOp { n, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn col(&self, j: usize) -> &[(usize, c64)] {
        &self.cols[j]
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, c64)> + '_ {
        self.cols
            .iter()
            .enumerate()
            .flat_map(|(j, c)| c.iter().map(move |&(i, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> c64 {
        self.cols[j]
            .binary_search_by_key(&i, |e| e.0)
            .map(|k| self.cols[j][k].1)
            .unwrap_or(c64::new(0.0, 0.0))
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.n, self.triplets().map(|(i, j, v)| (j, i, v.conj())))
    }

    pub fn scale(&self, s: c64) -> Self {
        Self::from_triplets(self.n, self.triplets().map(|(i, j, v)| (i, j, v * s)))
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self::from_triplets(self.n, self.triplets().chain(other.triplets()))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(c64::new(-1.0, 0.0)))
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        let mut t = Vec::new();
        for (j, c) in other.cols.iter().enumerate() {
            for &(k, b) in c {
                for &(i, a) in &self.cols[k] {
                    t.push((i, j, a * b));
                }
            }
        }
        Self::from_triplets(self.n, t)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Self) -> Self {
        let m = other.n;
        let mut t = Vec::with_capacity(self.nnz() * other.nnz());
        for (i, j, a) in self.triplets() {
            for (k, l, b) in other.triplets() {
                t.push((i * m + k, j * m + l, a * b));
            }
        }
        Self::from_triplets(self.n * m, t)
    }

    pub fn to_dense(&self) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(self.n, self.n);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    /// Elementwise max norm.
    pub fn max_abs(&self) -> f64 {
        self.triplets().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    /// `Tr[rho · self]` for a dense `rho`.
    pub fn expect(&self, rho: &Mat<c64>) -> c64 {
        let mut acc = c64::new(0.0, 0.0);
        for (i, j, v) in self.triplets() {
            acc += v * rho[(j, i)];
        }
        acc
    }
}

/// Spin-S = N/2 Dicke ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpinBasis {
    pub n: usize,
}

impl SpinBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("N must be >= 1"));
        }
        Ok(SpinBasis { n })
    }

    pub fn s(&self) -> f64 {
        self.n as f64 / 2.0
    }

    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// Magnetic quantum number of basis index `i`.
    pub fn m(&self, i: usize) -> f64 {
        self.s() - i as f64
    }

    /// Number of excitations above m = -S.
    pub fn excitations(&self, i: usize) -> usize {
        self.n - i
    }
}

#[derive(Debug, Clone)]
pub struct SingleOps {
    pub basis: SpinBasis,
    pub s_plus: SparseOp,
    pub s_minus: SparseOp,
    pub s_z: SparseOp,
}

pub fn build_single_ensemble_ops(n: usize) -> Result<SingleOps> {
    let basis = SpinBasis::new(n)?;
    let s = basis.s();
    let d = basis.dim();
    // S+ maps index i+1 (m) to i (m+1)
    let plus = (0..n).map(|i| {
        let m = basis.m(i + 1);
        (i, i + 1, c64::new((s * (s + 1.0) - m * (m + 1.0)).sqrt(), 0.0))
    });
    let s_plus = SparseOp::from_triplets(d, plus);
    let s_minus = s_plus.adjoint();
    let s_z = SparseOp::from_triplets(d, (0..d).map(|i| (i, i, c64::new(basis.m(i), 0.0))));
    Ok(SingleOps { basis, s_plus, s_minus, s_z })
}

/// Operators of both ensembles embedded in the pair space.
#[derive(Debug, Clone)]
pub struct CollectiveOps {
    pub basis: SpinBasis,
    pub s_plus: [SparseOp; 2],
    pub s_minus: [SparseOp; 2],
    pub s_z: [SparseOp; 2],
}

impl CollectiveOps {
    pub fn dim(&self) -> usize {
        self.basis.dim() * self.basis.dim()
    }

    /// Total excitation number of pair index `a`.
    pub fn excitations(&self, a: usize) -> usize {
        let d = self.basis.dim();
        self.basis.excitations(a / d) + self.basis.excitations(a % d)
    }
}

pub fn embed_pair(ops1: &SingleOps, ops2: &SingleOps) -> Result<CollectiveOps> {
    if ops1.basis != ops2.basis {
        return Err(Error::invalid(format!(
            "ensembles built for different N ({} vs {})",
            ops1.basis.n, ops2.basis.n
        )));
    }
    let id = SparseOp::identity(ops1.basis.dim());
    Ok(CollectiveOps {
        basis: ops1.basis,
        s_plus: [ops1.s_plus.kron(&id), id.kron(&ops2.s_plus)],
        s_minus: [ops1.s_minus.kron(&id), id.kron(&ops2.s_minus)],
        s_z: [ops1.s_z.kron(&id), id.kron(&ops2.s_z)],
    })
}

pub fn pair_ops(n: usize) -> Result<CollectiveOps> {
    let o = build_single_ensemble_ops(n)?;
    embed_pair(&o, &o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comm(a: &SparseOp, b: &SparseOp) -> SparseOp {
        a.matmul(b).sub(&b.matmul(a))
    }

    #[test]
    fn spin_half() {
        let o = build_single_ensemble_ops(1).unwrap();
        assert_eq!(o.s_z.get(0, 0).re, 0.5);
        assert_eq!(o.s_z.get(1, 1).re, -0.5);
        assert_eq!(o.s_plus.nnz(), 1);
        assert_eq!(o.s_plus.get(0, 1).re, 1.0);
    }

    #[test]
    fn ladder_elements() {
        let o = build_single_ensemble_ops(2).unwrap();
        let r2 = 2f64.sqrt();
        assert!((o.s_plus.get(0, 1).re - r2).abs() < 1e-15);
        assert!((o.s_plus.get(1, 2).re - r2).abs() < 1e-15);
        let o = build_single_ensemble_ops(3).unwrap();
        let v: Vec<f64> = (0..3).map(|i| o.s_plus.get(i, i + 1).re).collect();
        assert!((v[0] - 3f64.sqrt()).abs() < 1e-15);
        assert!((v[1] - 2.0).abs() < 1e-15);
        assert!((v[2] - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zero_n_rejected() {
        assert!(matches!(build_single_ensemble_ops(0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn algebra_and_casimir() {
        for n in 1..=8 {
            let o = build_single_ensemble_ops(n).unwrap();
            let s = o.basis.s();
            assert!(comm(&o.s_z, &o.s_plus).sub(&o.s_plus).max_abs() < 1e-12);
            assert!(comm(&o.s_z, &o.s_minus).add(&o.s_minus).max_abs() < 1e-12);
            let two_z = o.s_z.scale(c64::new(2.0, 0.0));
            assert!(comm(&o.s_plus, &o.s_minus).sub(&two_z).max_abs() < 1e-12);
            let cas = o
                .s_plus
                .matmul(&o.s_minus)
                .add(&o.s_z.matmul(&o.s_z))
                .sub(&o.s_z)
                .sub(&SparseOp::identity(n + 1).scale(c64::new(s * (s + 1.0), 0.0)));
            assert!(cas.max_abs() < 1e-12);
        }
    }

    #[test]
    fn embedding() {
        let p = pair_ops(1).unwrap();
        assert_eq!(p.dim(), 4);
        assert_eq!(pair_ops(2).unwrap().dim(), 9);
        for n in 1..=4 {
            let p = pair_ops(n).unwrap();
            assert_eq!(comm(&p.s_plus[0], &p.s_minus[1]).max_abs(), 0.0);
            assert_eq!(comm(&p.s_z[0], &p.s_plus[1]).max_abs(), 0.0);
        }
        let a = build_single_ensemble_ops(1).unwrap();
        let b = build_single_ensemble_ops(2).unwrap();
        assert!(embed_pair(&a, &b).is_err());
    }
}
