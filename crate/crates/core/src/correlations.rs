//! Two-spin tomography from macroscopic moments, mutual information and
//! concurrence.
//!
//! One spin is taken from each ensemble. By permutation symmetry its Bloch
//! vector is `⟨m^α⟩` and the two-spin correlations are `⟨m1^α m2^β⟩`.
//! Qubit basis order is `|↑⟩, |↓⟩`; entropies are in nats.

use crate::error::{Error, Result};
use crate::macrocumulant::MomentState;
use faer::{c64, Mat, Side};

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };

#[derive(Debug, Clone)]
pub struct TwoSpinState {
    pub rho12: Mat<c64>,
    pub clip_applied: bool,
    pub min_eigenvalue: f64,
}

/// Pauli matrices `[1, σx, σy, σz]`.
pub fn paulis() -> [Mat<c64>; 4] {
    let r = |a: f64| c64::new(a, 0.0);
    let i = |a: f64| c64::new(0.0, a);
    [
        Mat::from_fn(2, 2, |a, b| if a == b { r(1.0) } else { ZERO }),
        Mat::from_fn(2, 2, |a, b| if a != b { r(1.0) } else { ZERO }),
        Mat::from_fn(2, 2, |a, b| match (a, b) {
            (0, 1) => i(-1.0),
            (1, 0) => i(1.0),
            _ => ZERO,
        }),
        Mat::from_fn(2, 2, |a, b| match (a, b) {
            (0, 0) => r(1.0),
            (1, 1) => r(-1.0),
            _ => ZERO,
        }),
    ]
}

fn kron2(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    Mat::from_fn(4, 4, |r, c| a[(r / 2, c / 2)] * b[(r % 2, c % 2)])
}

/// `c[α][β] = Tr[ρ σ^α⊗σ^β]` from the moments (index 0 = identity).
pub fn pauli_coefficients(s: &MomentState) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    c[0][0] = 1.0;
    for a in 0..3 {
        c[a + 1][0] = s.first(0, a);
        c[0][a + 1] = s.first(1, a);
        for b in 0..3 {
            c[a + 1][b + 1] = s.cross(a, b);
        }
    }
    c
}

pub fn from_pauli_coefficients(c: &[[f64; 4]; 4]) -> Mat<c64> {
    let p = paulis();
    let mut rho = Mat::<c64>::zeros(4, 4);
    for a in 0..4 {
        for b in 0..4 {
            if c[a][b] != 0.0 {
                let k = kron2(&p[a], &p[b]);
                let w = c64::new(c[a][b] / 4.0, 0.0);
                for i in 0..4 {
                    for j in 0..4 {
                        rho[(i, j)] += k[(i, j)] * w;
                    }
                }
            }
        }
    }
    rho
}

/// `Tr[ρ σ^α⊗σ^β]` for a 4×4 state.
pub fn measure(rho: &Mat<c64>) -> [[f64; 4]; 4] {
    let p = paulis();
    let mut c = [[0.0; 4]; 4];
    for a in 0..4 {
        for b in 0..4 {
            let k = kron2(&p[a], &p[b]);
            let mut t = ZERO;
            for i in 0..4 {
                for j in 0..4 {
                    t += rho[(i, j)] * k[(j, i)];
                }
            }
            c[a][b] = t.re;
        }
    }
    c
}

fn hermitian_eigen(m: &Mat<c64>) -> Result<(Vec<f64>, Mat<c64>)> {
    let e = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Convergence { what: format!("Hermitian eigensolver: {e:?}"), residual: f64::NAN })?;
    let s = e.S().column_vector();
    let vals = (0..m.nrows()).map(|i| s[i].re).collect();
    Ok((vals, e.U().to_owned()))
}

pub const CLIP_TOLERANCE: f64 = 1e-6;

/// Wraps a 4×4 matrix, repairing eigenvalues in `[−1e−6, 0)`.
pub fn two_spin_state(rho: Mat<c64>) -> Result<TwoSpinState> {
    if rho.nrows() != 4 || rho.ncols() != 4 {
        return Err(Error::invalid("two-spin state must be 4x4"));
    }
    let (vals, u) = hermitian_eigen(&rho)?;
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -CLIP_TOLERANCE {
        return Err(Error::Tomography(min));
    }
    if min >= 0.0 {
        return Ok(TwoSpinState { rho12: rho, clip_applied: false, min_eigenvalue: min });
    }
    let kept: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let t: f64 = kept.iter().sum();
    let r = Mat::<c64>::from_fn(4, 4, |i, j| {
        (0..4).map(|k| u[(i, k)] * u[(j, k)].conj() * (kept[k] / t)).sum()
    });
    Ok(TwoSpinState { rho12: r, clip_applied: true, min_eigenvalue: min })
}

pub fn reduced_two_spin_state(s: &MomentState) -> Result<TwoSpinState> {
    two_spin_state(from_pauli_coefficients(&pauli_coefficients(s)))
}

/// Partial traces `(ρ₁, ρ₂)`.
pub fn marginals(rho: &Mat<c64>) -> (Mat<c64>, Mat<c64>) {
    let r1 = Mat::from_fn(2, 2, |a, b| (0..2).map(|k| rho[(2 * a + k, 2 * b + k)]).sum());
    let r2 = Mat::from_fn(2, 2, |a, b| (0..2).map(|k| rho[(2 * k + a, 2 * k + b)]).sum());
    (r1, r2)
}

pub fn von_neumann_entropy(rho: &Mat<c64>) -> Result<f64> {
    let (vals, _) = hermitian_eigen(rho)?;
    Ok(vals.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum())
}

pub fn mutual_information(state: &TwoSpinState) -> Result<f64> {
    let (r1, r2) = marginals(&state.rho12);
    let i = von_neumann_entropy(&r1)? + von_neumann_entropy(&r2)? - von_neumann_entropy(&state.rho12)?;
    Ok(i)
}

/// Wootters concurrence.
pub fn concurrence(state: &TwoSpinState) -> Result<f64> {
    let p = paulis();
    let yy = kron2(&p[2], &p[2]);
    let rho = &state.rho12;
    let conj = Mat::<c64>::from_fn(4, 4, |i, j| rho[(i, j)].conj());
    let tilde = &yy * &conj * &yy;
    let r = rho * &tilde;
    let ev = r
        .eigenvalues()
        .map_err(|e| Error::Convergence { what: format!("eigensolver: {e:?}"), residual: f64::NAN })?;
    let mut l: Vec<f64> = ev.iter().map(|z| z.re.max(0.0).sqrt()).collect();
    l.sort_by(|a, b| b.total_cmp(a));
    Ok((l[0] - l[1] - l[2] - l[3]).max(0.0))
}
