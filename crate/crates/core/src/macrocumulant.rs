//! Macroscopic limit via third-cumulant closure.
//!
//! Observables are `m^α = S^α/S`. The engine state holds 27 real moments:
//!
//! | index   | content                                        |
//! |---------|------------------------------------------------|
//! | 0..6    | `x1 y1 z1 x2 y2 z2`                            |
//! | 6..12   | ensemble 1: `xx xy xz yy yz zz` (symmetrized)  |
//! | 12..18  | ensemble 2: same order                         |
//! | 18..27  | cross `⟨m1^α m2^β⟩` at `18 + 3α + β`           |

use crate::error::{Error, Result};
use crate::liouville::{self, EngineParams, Scaling, SteadyMethod};
use crate::ode::{Dopri5, Tolerances};
use faer::{c64, Mat};
use serde::{Deserialize, Serialize};

pub const X: usize = 0;
pub const Y: usize = 1;
pub const Z: usize = 2;

const SAME: [[usize; 3]; 3] = [[0, 1, 2], [1, 3, 4], [2, 4, 5]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState(pub [f64; 27]);

impl MomentState {
    pub fn first_index(l: usize, a: usize) -> usize {
        3 * l + a
    }

    pub fn same_index(l: usize, a: usize, b: usize) -> usize {
        6 + 6 * l + SAME[a][b]
    }

    pub fn cross_index(a: usize, b: usize) -> usize {
        18 + 3 * a + b
    }

    pub fn first(&self, l: usize, a: usize) -> f64 {
        self.0[Self::first_index(l, a)]
    }

    pub fn same(&self, l: usize, a: usize, b: usize) -> f64 {
        self.0[Self::same_index(l, a, b)]
    }

    /// `⟨m1^a m2^b⟩`.
    pub fn cross(&self, a: usize, b: usize) -> f64 {
        self.0[Self::cross_index(a, b)]
    }

    /// Both ensembles fully polarized down, product second moments.
    pub fn polarized_down() -> Self {
        let mut v = [0.0; 27];
        for l in 0..2 {
            v[Self::first_index(l, Z)] = -1.0;
            v[Self::same_index(l, Z, Z)] = 1.0;
        }
        v[Self::cross_index(Z, Z)] = 1.0;
        MomentState(v)
    }

    /// Maximally mixed, uncorrelated ensembles (`⟨(m^α)²⟩ = 1/3`).
    pub fn isotropic() -> Self {
        let mut v = [0.0; 27];
        for l in 0..2 {
            for a in 0..3 {
                v[Self::same_index(l, a, a)] = 1.0 / 3.0;
            }
        }
        MomentState(v)
    }

    /// `⟨(m^x)²⟩ + ⟨(m^y)²⟩ + ⟨(m^z)²⟩` of ensemble `l`.
    pub fn casimir(&self, l: usize) -> f64 {
        (0..3).map(|a| self.same(l, a, a)).sum()
    }

    pub fn first_moments(&self) -> &[f64] {
        &self.0[0..6]
    }

    pub fn second_same(&self) -> &[f64] {
        &self.0[6..18]
    }

    pub fn second_cross(&self) -> &[f64] {
        &self.0[18..27]
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Column labels of the 27 moments, in storage order.
pub fn moment_names() -> Vec<String> {
    let ax = ["x", "y", "z"];
    let mut n = Vec::with_capacity(27);
    for l in 1..=2 {
        for a in ax {
            n.push(format!("{a}{l}"));
        }
    }
    for l in 1..=2 {
        for (a, b) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
            n.push(format!("{}{l}{}{l}", ax[a], ax[b]));
        }
    }
    for a in ax {
        for b in ax {
            n.push(format!("{a}1{b}2"));
        }
    }
    n
}

/// Macroscopic parameters. `beta1e1`, `beta2e2` are the bath `βE`
/// products that enter the closed equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroParams {
    pub e1: f64,
    pub e2: f64,
    pub omega0: f64,
    pub gamma0: f64,
    pub beta1e1: f64,
    pub beta2e2: f64,
}

impl MacroParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.e1 > 0.0 && self.e1.is_finite()) {
            v.push("E1 must be > 0".into());
        }
        if !(self.e2 >= self.e1 && self.e2.is_finite()) {
            v.push("E2 must be ≥ E1".into());
        }
        if !(self.omega0 >= 0.0 && self.omega0.is_finite()) {
            v.push("omega0 must be ≥ 0".into());
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            v.push("gamma0 must be > 0".into());
        }
        if !(self.beta1e1 > 0.0) {
            v.push("beta1*E1 must be > 0".into());
        }
        if !(self.beta2e2 > 0.0) {
            v.push("beta2*E2 must be > 0".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    /// Macroscopic counterpart of a finite-N configuration. The unscaled
    /// constants enter the closed equations directly.
    pub fn from_engine(p: &EngineParams) -> Self {
        MacroParams {
            e1: p.e1,
            e2: p.e2,
            omega0: p.omega0,
            gamma0: p.gamma0,
            beta1e1: p.beta1 * p.e1,
            beta2e2: p.beta2 * p.e2,
        }
    }

    pub fn delta_e(&self) -> f64 {
        self.e2 - self.e1
    }

    pub fn t1(&self) -> f64 {
        self.e1 / self.beta1e1
    }

    pub fn t2(&self) -> f64 {
        self.e2 / self.beta2e2
    }

    /// Slowest dissipative time scale, used to size integration windows.
    pub fn time_scale(&self) -> f64 {
        let rate = self.gamma0 * (1.0 / self.beta1e1).min(1.0 / self.beta2e2).min(1.0);
        1.0 / rate
    }
}

fn coth_minus_inv(x: f64) -> f64 {
    // coth x − 1/x, series near zero to avoid cancellation
    if x.abs() < 1e-2 {
        let x2 = x * x;
        x / 3.0 - x * x2 / 45.0 + 2.0 * x * x2 * x2 / 945.0
    } else {
        1.0 / x.tanh() - 1.0 / x
    }
}

fn coth(x: f64) -> f64 {
    1.0 / x.tanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipativeMoments {
    pub mz: f64,
    pub mz2: f64,
    pub mx2: f64,
}

fn check_beta_e(beta_e: f64) -> Result<()> {
    if !(beta_e > 0.0) {
        return Err(Error::invalid(format!("βE must be > 0, got {beta_e}")));
    }
    Ok(())
}

/// Closed-form steady state of one ensemble coupled to one bath.
pub fn dissipative_ss_analytic(beta_e: f64) -> Result<DissipativeMoments> {
    check_beta_e(beta_e)?;
    let g = coth_minus_inv(beta_e / 2.0);
    let mz = -g;
    let mz2 = 1.0 - 4.0 * g / beta_e;
    let mx2 = 2.0 * g / beta_e;
    Ok(DissipativeMoments { mz, mz2, mx2 })
}

/// Closed `(⟨m^z⟩, ⟨(m^z)²⟩)` equations with `⟨(m^z)³⟩` eliminated.
pub fn dissipative_rhs(mz: f64, mz2: f64, beta_e: f64, gamma0: f64) -> (f64, f64) {
    let d1 = gamma0 / 2.0 * (-(1.0 - mz2) - 4.0 / beta_e * mz);
    let d2 = gamma0 * (mz * (-1.0 + 3.0 * mz2 - 2.0 * mz * mz) + 2.0 / beta_e * (1.0 - 3.0 * mz2));
    (d1, d2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipativeJacobian {
    pub matrix: [[f64; 2]; 2],
    /// Eigenvalues of `matrix` from a general eigensolver.
    pub eigenvalues: [c64; 2],
    /// `λ±` from the closed form.
    pub lambda_plus: c64,
    pub lambda_minus: c64,
    pub gap: f64,
}

/// Jacobian of the closed dissipative equations at the analytic steady
/// state, plus the closed-form eigenvalues as an independent check.
pub fn jacobian_dissipative(beta_e: f64, gamma0: f64) -> Result<DissipativeJacobian> {
    let ss = dissipative_ss_analytic(beta_e)?;
    let g = gamma0;
    let matrix = [
        [-2.0 * g / beta_e, g / 2.0],
        [g * (-1.0 + 3.0 * ss.mz2 - 6.0 * ss.mz * ss.mz), 3.0 * g * (ss.mz - 2.0 / beta_e)],
    ];
    let m = Mat::<f64>::from_fn(2, 2, |i, j| matrix[i][j]);
    let ev = m
        .eigenvalues()
        .map_err(|e| Error::Convergence { what: format!("eigensolver: {e:?}"), residual: f64::NAN })?;
    let mut eigenvalues = [ev[0], ev[1]];
    eigenvalues.sort_by(|a, b| b.re.total_cmp(&a.re));
    let c = coth(beta_e / 2.0);
    let a = 4.0 + 4.0 / (beta_e * beta_e) + 12.0 * c / beta_e - 3.0 * c * c;
    let sq = c64::new(a, 0.0).sqrt();
    let base = c64::new(-2.0 / beta_e - 3.0 * c, 0.0);
    let lambda_plus = (base + sq) * (g / 2.0);
    let lambda_minus = (base - sq) * (g / 2.0);
    let gap = -eigenvalues[0].re;
    Ok(DissipativeJacobian { matrix, eigenvalues, lambda_plus, lambda_minus, gap })
}

/// Fixed point of [`dissipative_rhs`] reached by integrating from the
/// polarized state and polishing with Newton's method.
pub fn dissipative_ode_steady_state(beta_e: f64, gamma0: f64) -> Result<DissipativeMoments> {
    check_beta_e(beta_e)?;
    let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (a, b) = dissipative_rhs(y[0], y[1], beta_e, gamma0);
        dy[0] = a;
        dy[1] = b;
    };
    let tau = 1.0 / (gamma0 * (1.0 / beta_e).min(1.0));
    let mut y = [-1.0 + 1e-3, 1.0 - 1e-3];
    let mut solver = Dopri5::new(Tolerances { rtol: 1e-11, atol: 1e-13 }, 1e-3 * tau);
    solver.integrate(&f, 0.0, 60.0 * tau, &mut y)?;
    for _ in 0..50 {
        let (r1, r2) = dissipative_rhs(y[0], y[1], beta_e, gamma0);
        let j = [
            [-2.0 * gamma0 / beta_e, gamma0 / 2.0],
            [
                gamma0 * (-1.0 + 3.0 * y[1] - 6.0 * y[0] * y[0]),
                gamma0 * (3.0 * y[0] - 6.0 / beta_e),
            ],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det == 0.0 {
            break;
        }
        let dx = (r1 * j[1][1] - r2 * j[0][1]) / det;
        let dy = (j[0][0] * r2 - j[1][0] * r1) / det;
        y[0] -= dx;
        y[1] -= dy;
        if dx.abs().max(dy.abs()) < 1e-16 {
            break;
        }
    }
    let (r1, r2) = dissipative_rhs(y[0], y[1], beta_e, gamma0);
    let res = r1.abs().max(r2.abs());
    if res > 1e-12 * gamma0 {
        return Err(Error::Convergence { what: "dissipative fixed point".into(), residual: res });
    }
    Ok(DissipativeMoments { mz: y[0], mz2: y[1], mx2: (1.0 - y[1]) / 2.0 })
}

/// Right-hand side of the 27 closed moment equations.
pub fn engine_rhs(s: &MomentState, p: &MacroParams) -> [f64; 27] {
    let mut out = [0.0; 27];
    engine_rhs_into(&s.0, p, &mut out);
    out
}

pub(crate) fn engine_rhs_into(st: &[f64], p: &MacroParams, out: &mut [f64]) {
    let w = p.omega0;
    let gg = p.gamma0;
    let bs = [p.beta1e1, p.beta2e2];
    let (a_, b_, c_) = (X, Y, Z);
    for l in 0..2 {
        let lb = 1 - l;
        let b = bs[l];
        let bb = bs[lb];
        let f = |a: usize| st[3 * l + a];
        let fb = |a: usize| st[3 * lb + a];
        let s2 = |a: usize, c: usize| st[6 + 6 * l + SAME[a][c]];
        let sb = |a: usize, c: usize| st[6 + 6 * lb + SAME[a][c]];
        // ⟨a_ℓ b_ℓ̄⟩
        let c = |a: usize, d: usize| if l == 0 { st[18 + 3 * a + d] } else { st[18 + 3 * d + a] };
        let (x, y, z) = (f(X), f(Y), f(Z));
        let (xx_, yy_, zz_) = (fb(X), fb(Y), fb(Z));
        let (xx, xy, xz, yy, yz, zz) = (s2(0, 0), s2(0, 1), s2(0, 2), s2(1, 1), s2(1, 2), s2(2, 2));
        let (bxx, bxy, bxz, byy, byz) = (sb(0, 0), sb(0, 1), sb(0, 2), sb(1, 1), sb(1, 2));

        out[3 * l + X] = w / 2.0 * c(c_, b_) + gg / 2.0 * xz - gg / b * x;
        out[3 * l + Y] = -w / 2.0 * c(c_, a_) + gg / 2.0 * yz - gg / b * y;
        out[3 * l + Z] = w / 2.0 * (c(b_, a_) - c(a_, b_)) - gg / 2.0 * (xx + yy) - 2.0 * gg / b * z;

        let o = 6 + 6 * l;
        out[o] = w * (xz * yy_ + (c(c_, b_) - z * yy_) * x + (c(a_, b_) - x * yy_) * z)
            + gg * (xx * z + 2.0 * (xz - x * z) * x)
            + 2.0 * gg / b * (zz - xx);
        out[o + 1] = w / 2.0
            * (yz * yy_ + c(b_, b_) * z + c(c_, b_) * y - 2.0 * y * z * yy_
                - (xz * xx_ + c(a_, a_) * z + c(c_, a_) * x - 2.0 * x * z * xx_))
            + gg / 2.0 * ((yz + yz) * x + (xz + xz) * y + 2.0 * xy * z - 4.0 * x * y * z)
            - 2.0 * gg / b * xy;
        out[o + 2] = w / 2.0
            * ((zz - xx) * yy_ + 2.0 * (c(c_, b_) - z * yy_) * z - 2.0 * (c(a_, b_) - x * yy_) * x
                + xy * xx_
                + c(a_, a_) * y
                + c(b_, a_) * x
                - 2.0 * y * x * xx_)
            - gg / 2.0 * ((1.0 - 2.0 * zz) * x - 4.0 * (xz - x * z) * z)
            - gg / b * (4.0 * xz + xz);
        out[o + 3] = -w * (yz * xx_ + (c(c_, a_) - z * xx_) * y + (c(b_, a_) - y * xx_) * z)
            + gg * (yy * z + 2.0 * (yz - y * z) * y)
            + 2.0 * gg / b * (zz - yy);
        out[o + 4] = -w / 2.0
            * ((zz - yy) * xx_ + 2.0 * (c(c_, a_) - z * xx_) * z - 2.0 * (c(b_, a_) - y * xx_) * y
                + xy * yy_
                + c(b_, b_) * x
                + c(a_, b_) * y
                - 2.0 * x * y * yy_)
            - gg / 2.0 * ((1.0 - 2.0 * zz) * y - 4.0 * (yz - y * z) * z)
            - gg / b * (4.0 * yz + yz);
        out[o + 5] = w
            * (yz * xx_ + (c(c_, a_) - z * xx_) * y + (c(b_, a_) - y * xx_) * z
                - xz * yy_
                - (c(c_, b_) - z * yy_) * x
                - (c(a_, b_) - x * yy_) * z)
            - gg * ((xx + yy) * z + 2.0 * (xz - x * z) * x + 2.0 * (yz - y * z) * y)
            - 2.0 * gg / b * (3.0 * zz - 1.0);

        let g = gg * (1.0 / b + 1.0 / bb);
        let cross_aa = w / 2.0
            * (xy * zz_ + c(b_, c_) * x + c(a_, c_) * y - 2.0 * y * x * zz_ + bxy * z + c(c_, b_) * xx_
                + c(c_, a_) * yy_
                - 2.0 * z * xx_ * yy_)
            + gg / 2.0
                * (xz * xx_ + c(a_, a_) * z + c(c_, a_) * x - 2.0 * x * z * xx_ + bxz * x + c(a_, a_) * zz_
                    + c(a_, c_) * xx_
                    - 2.0 * x * zz_ * xx_)
            - g * c(a_, a_);
        let cross_ab = w / 2.0
            * (byy * z - xx * zz_ + 2.0 * (c(c_, b_) - z * yy_) * yy_ - 2.0 * (c(a_, c_) - x * zz_) * x)
            + gg / 2.0
                * (xz * yy_ + c(a_, b_) * z + c(c_, b_) * x - 2.0 * x * z * yy_ + byz * x + c(a_, b_) * zz_
                    + c(a_, c_) * yy_
                    - 2.0 * x * yy_ * zz_)
            - g * c(a_, b_);
        let cross_ac = w / 2.0
            * ((xx - 2.0 * x * x) * yy_ + (byz - 2.0 * yy_ * zz_) * z - (xy - 2.0 * x * y) * xx_
                + c(c_, b_) * zz_
                + c(c_, c_) * yy_
                - c(a_, a_) * y
                - c(b_, a_) * x
                + 2.0 * c(a_, b_) * x)
            + gg / 2.0
                * (xz * zz_ + c(a_, c_) * z + c(c_, c_) * x - 2.0 * x * z * zz_ - (bxx + byy) * x
                    - 2.0 * (c(a_, a_) - x * xx_) * xx_
                    - 2.0 * (c(a_, b_) - x * yy_) * yy_)
            - gg * (1.0 / b + 2.0 / bb) * c(a_, c_);
        let cross_bb = -w / 2.0
            * (xy * zz_ + c(a_, c_) * y + c(b_, c_) * x - 2.0 * x * y * zz_ + bxy * z + c(c_, a_) * yy_
                + c(c_, b_) * xx_
                - 2.0 * z * xx_ * yy_)
            + gg / 2.0
                * (yz * yy_ + c(b_, b_) * z + c(c_, b_) * y - 2.0 * y * z * yy_ + byz * y + c(b_, b_) * zz_
                    + c(b_, c_) * yy_
                    - 2.0 * y * yy_ * zz_)
            - g * c(b_, b_);
        let cross_bc = -w / 2.0
            * ((yy - 2.0 * y * y) * xx_ + (bxz - 2.0 * zz_ * xx_) * z - (xy - 2.0 * x * y) * yy_
                + c(c_, a_) * zz_
                + c(c_, c_) * xx_
                - c(b_, b_) * x
                - c(a_, b_) * y
                + 2.0 * c(b_, a_) * y)
            + gg / 2.0
                * (yz * zz_ + c(b_, c_) * z + c(c_, c_) * y - 2.0 * y * z * zz_ - (bxx + byy) * y
                    - 2.0 * (c(b_, a_) - y * xx_) * xx_
                    - 2.0 * (c(b_, b_) - y * yy_) * yy_)
            - gg * (1.0 / b + 2.0 / bb) * c(b_, c_);
        let cross_cc = w / 2.0
            * ((xz - c(a_, c_)) * yy_ + (bxz - c(c_, a_)) * y + (c(b_, c_) - yz) * xx_ + (c(c_, b_) - byz) * x
                + (c(a_, b_) - c(b_, a_) - 2.0 * x * yy_ + 2.0 * y * xx_) * (z - zz_))
            - gg / 2.0
                * ((xx + yy) * zz_ + 2.0 * (c(a_, c_) - x * zz_) * x + 2.0 * (c(b_, c_) - y * zz_) * y
                    + (bxx + byy) * z
                    + 2.0 * (c(c_, a_) - z * xx_) * xx_
                    + 2.0 * (c(c_, b_) - z * yy_) * yy_)
            - 2.0 * g * c(c_, c_);

        // ensemble 1 supplies the symmetric cross equations, ensemble 2 the
        // three transposed ones
        if l == 0 {
            out[18] = cross_aa;
            out[19] = cross_ab;
            out[20] = cross_ac;
            out[22] = cross_bb;
            out[23] = cross_bc;
            out[26] = cross_cc;
        } else {
            out[21] = cross_ab;
            out[24] = cross_ac;
            out[25] = cross_bc;
        }
    }
}

/// `P_N/N = (ω₀ΔE/4)(⟨m1^y m2^x⟩ − ⟨m1^x m2^y⟩)`.
pub fn macro_power(s: &MomentState, p: &MacroParams) -> f64 {
    p.omega0 * p.delta_e() / 4.0 * (s.cross(Y, X) - s.cross(X, Y))
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Central finite-difference Jacobian of [`engine_rhs`].
pub fn engine_jacobian(s: &MomentState, p: &MacroParams, h: f64) -> Mat<f64> {
    let mut j = Mat::<f64>::zeros(27, 27);
    let mut fp = [0.0; 27];
    let mut fm = [0.0; 27];
    for k in 0..27 {
        let mut a = s.0;
        let mut b = s.0;
        a[k] += h;
        b[k] -= h;
        engine_rhs_into(&a, p, &mut fp);
        engine_rhs_into(&b, p, &mut fm);
        for i in 0..27 {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    /// Total integration window in units of [`MacroParams::time_scale`].
    pub t_max: f64,
    /// Target `‖rhs‖∞`.
    pub tol: f64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions { t_max: 400.0, tol: 1e-13 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MacroSteady {
    pub state: MomentState,
    pub residual: f64,
    pub t_final: f64,
    pub newton_steps: usize,
}

fn newton(s: &MomentState, p: &MacroParams, tol: f64) -> Option<(MomentState, f64, usize)> {
    let mut y = *s;
    let mut r = engine_rhs(&y, p);
    let mut res = inf_norm(&r);
    for step in 1..=30 {
        let j = engine_jacobian(&y, p, 1e-6);
        let lu = j.partial_piv_lu();
        let rhs = Mat::<f64>::from_fn(27, 1, |i, _| -r[i]);
        let dx = {
            use faer::linalg::solvers::Solve;
            lu.solve(&rhs)
        };
        let mut cand = y;
        for i in 0..27 {
            cand.0[i] += dx[(i, 0)];
        }
        let rc = engine_rhs(&cand, p);
        let resc = inf_norm(&rc);
        if !resc.is_finite() || resc >= res {
            return (res < tol).then_some((y, res, step - 1));
        }
        y = cand;
        r = rc;
        res = resc;
        if res < tol * 1e-3 {
            return Some((y, res, step));
        }
    }
    (res < tol).then_some((y, res, 30))
}

/// Integrates the closed equations until the residual plateaus, then
/// polishes the fixed point with Newton's method.
pub fn macro_steady_state(p: &MacroParams, init: &MomentState, opts: SteadyOptions) -> Result<MacroSteady> {
    p.validate()?;
    let tau = p.time_scale();
    let f = |_t: f64, y: &[f64], dy: &mut [f64]| engine_rhs_into(y, p, dy);
    let mut solver = Dopri5::new(Tolerances { rtol: 1e-10, atol: 1e-13 }, 1e-3 * tau);
    let mut y = init.0;
    let mut t = 0.0;
    let chunk = 2.0 * tau;
    let t_end = opts.t_max * tau;
    let mut history: Vec<f64> = Vec::new();
    let handoff = 1e-6 * p.gamma0;
    loop {
        let res = inf_norm(&engine_rhs(&MomentState(y), p));
        history.push(res);
        if res < opts.tol {
            return finish(MomentState(y), p, res, t, 0, opts.tol);
        }
        if res < handoff {
            if let Some((s, r, k)) = newton(&MomentState(y), p, opts.tol) {
                return finish(s, p, r, t, k, opts.tol);
            }
        }
        if history.len() >= 16 && res > handoff {
            let h = &history[history.len() - 16..];
            let early = h[..8].iter().cloned().fold(0.0, f64::max);
            let late = h[8..].iter().cloned().fold(0.0, f64::max);
            if late >= 0.9 * early {
                return Err(Error::LimitCycle { residual: res });
            }
        }
        if t >= t_end {
            return Err(Error::Convergence { what: "macroscopic fixed point".into(), residual: res });
        }
        let t1 = (t + chunk).min(t_end);
        solver.integrate(&f, t, t1, &mut y)?;
        t = t1;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("moment equations diverged".into()));
        }
    }
}

fn finish(s: MomentState, p: &MacroParams, residual: f64, t: f64, newton_steps: usize, tol: f64) -> Result<MacroSteady> {
    let drift = (s.casimir(0) - 1.0).abs().max((s.casimir(1) - 1.0).abs());
    if drift > (10.0 * tol).max(1e-9) {
        return Err(Error::Convergence { what: "quadrature-sum drift at fixed point".into(), residual: drift });
    }
    let _ = p;
    Ok(MacroSteady { state: s, residual, t_final: t, newton_steps })
}

pub fn macro_steady_state_default(p: &MacroParams) -> Result<MacroSteady> {
    macro_steady_state(p, &MomentState::polarized_down(), SteadyOptions::default())
}

#[derive(Debug, Clone)]
pub struct EngineGap {
    pub gap: f64,
    pub eigenvalues: Vec<c64>,
    pub stable: bool,
    pub state: MomentState,
}

/// Gap of the 27×27 Jacobian at the fixed point reached from the
/// polarized initial state. An unstable fixed point is reported through
/// `stable`, not as an error.
pub fn jacobian_gap_engine(p: &MacroParams) -> Result<EngineGap> {
    let ss = macro_steady_state_default(p)?;
    jacobian_gap_at(&ss.state, p)
}

pub fn jacobian_gap_at(s: &MomentState, p: &MacroParams) -> Result<EngineGap> {
    let j = engine_jacobian(s, p, 1e-6);
    let mut ev = j
        .eigenvalues()
        .map_err(|e| Error::Convergence { what: format!("eigensolver: {e:?}"), residual: f64::NAN })?;
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    let top = ev[0].re;
    Ok(EngineGap { gap: -top, stable: top < 0.0, eigenvalues: ev, state: *s })
}

/// Largest moment difference between fixed points reached from the
/// polarized and the isotropic initial states.
pub fn initial_condition_sensitivity(p: &MacroParams) -> Result<f64> {
    let a = macro_steady_state(p, &MomentState::polarized_down(), SteadyOptions::default())?;
    let b = macro_steady_state(p, &MomentState::isotropic(), SteadyOptions::default())?;
    Ok(a.state.max_abs_diff(&b.state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransientObservable {
    Gap,
    Magnetization,
}

fn single_observable(n: usize, beta_e: f64, obs: TransientObservable) -> Result<f64> {
    let l = liouville::build_single(n, beta_e, 1.0, Scaling::HighTemperature, Some(0))?;
    match obs {
        TransientObservable::Gap => liouville::gap(&l, 2),
        TransientObservable::Magnetization => {
            let ss = liouville::steady_state(&l, SteadyMethod::DenseNullSpace)?;
            let o = crate::dicke::build_single_ensemble_ops(n)?;
            Ok(ss.expect(&o.s_z).re / (n as f64 / 2.0))
        }
    }
}

/// Smallest `N ≤ n_max` at which the finite-temperature observable
/// departs from its zero-temperature value by more than `eps`
/// (single ensemble, high-temperature scaling).
pub fn transient_size(beta_e: f64, eps: f64, obs: TransientObservable, n_max: usize) -> Result<usize> {
    check_beta_e(beta_e)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be > 0"));
    }
    for n in 1..=n_max {
        let a = single_observable(n, beta_e, obs)?;
        let b = single_observable(n, f64::INFINITY, obs)?;
        if (a - b).abs() > eps {
            return Ok(n);
        }
    }
    Err(Error::Range(format!("no N ≤ {n_max} departs from zero temperature by more than {eps:e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn driven(delta_e: f64, t_bar: f64) -> MacroParams {
        let (t1, t2) = (t_bar - 10.0, t_bar + 10.0);
        MacroParams { e1: 1.0, e2: 1.0 + delta_e, omega0: 0.006, gamma0: 0.001, beta1e1: 1.0 / t1, beta2e2: (1.0 + delta_e) / t2 }
    }

    #[test]
    fn layout() {
        let n = moment_names();
        assert_eq!(n.len(), 27);
        assert_eq!(n[MomentState::same_index(1, Y, Z)], "y2z2");
        assert_eq!(n[MomentState::cross_index(Z, X)], "z1x2");
    }

    #[test]
    fn analytic_limits() {
        let s = dissipative_ss_analytic(50.0).unwrap();
        assert!((s.mz + 1.0).abs() < 0.05 && (s.mz2 - 1.0).abs() < 0.1 && s.mx2 < 0.05);
        let s = dissipative_ss_analytic(1e-3).unwrap();
        assert!((s.mz + 1e-3 / 6.0).abs() < 1e-6 * 1e-3 / 6.0);
        assert!((s.mz2 - 1.0 / 3.0).abs() < 1e-6);
        let s = dissipative_ss_analytic(2.0).unwrap();
        assert!((s.mz + 0.31304).abs() < 5e-6);
        for b in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let s = dissipative_ss_analytic(b).unwrap();
            assert!((s.mz2 + 2.0 * s.mx2 - 1.0).abs() < 1e-12);
        }
        assert!(dissipative_ss_analytic(0.0).is_err());
    }

    #[test]
    fn printed_rhs_hand_values() {
        let (a, b) = dissipative_rhs(0.0, 1.0, 4.0, 1.0);
        assert_eq!(a, 0.0);
        assert!((b + 1.0).abs() < 1e-15);
        let (a, b) = dissipative_rhs(-1.0, 1.0, 1e300, 1.0);
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
    }

    #[test]
    fn lambda_closed_form() {
        for b in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let j = jacobian_dissipative(b, 1.0).unwrap();
            let mut cf = [j.lambda_plus, j.lambda_minus];
            cf.sort_by(|x, y| y.re.total_cmp(&x.re));
            for k in 0..2 {
                assert!((cf[k] - j.eigenvalues[k]).norm() < 1e-10);
            }
        }
        let j = jacobian_dissipative(2.0, 1.0).unwrap();
        let c = 1.0 / 1f64.tanh();
        let a = 4.0 + 1.0 + 6.0 * c - 3.0 * c * c;
        assert!((a - 7.70601).abs() < 1e-4);
        assert!((j.lambda_plus.re + 1.08157).abs() < 1e-4);
    }

    #[test]
    fn engine_rhs_undriven_mz_reduction() {
        // ⟨m^z⟩ equation matches when the Casimir holds; ⟨(m^z)²⟩ differs by
        // the closure term 2Γ₀ z (zz − z²)
        let p = MacroParams { omega0: 0.0, ..driven(2.0, 14.0) };
        let (z, zz) = (-0.4, 0.3);
        let mut s = MomentState([0.0; 27]);
        s.0[MomentState::first_index(0, Z)] = z;
        s.0[MomentState::same_index(0, Z, Z)] = zz;
        s.0[MomentState::same_index(0, X, X)] = (1.0 - zz) / 2.0;
        s.0[MomentState::same_index(0, Y, Y)] = (1.0 - zz) / 2.0;
        let r = engine_rhs(&s, &p);
        let (d1, d2) = dissipative_rhs(z, zz, p.beta1e1, p.gamma0);
        assert!((r[2] - d1).abs() < 1e-18);
        let extra = 2.0 * p.gamma0 * z * (zz - z * z);
        assert!((r[MomentState::same_index(0, Z, Z)] - (d2 - extra)).abs() < 1e-18);
    }

    #[test]
    fn dark_state_is_fixed() {
        let p = MacroParams { omega0: 0.0, beta1e1: 1e300, beta2e2: 1e300, ..driven(2.0, 14.0) };
        let r = engine_rhs(&MomentState::polarized_down(), &p);
        assert!(inf_norm(&r) < 1e-18);
    }

    #[test]
    fn transcription_cross_check() {
        // values from an independent transcription of the same equations
        let s = MomentState([
            0.1, -0.2, -0.5, 0.05, 0.15, -0.6, 0.3, 0.02, -0.04, 0.25, 0.03, 0.45, 0.2, -0.01, -0.02, 0.22, 0.05,
            0.58, 0.01, -0.03, 0.02, 0.04, 0.06, -0.05, 0.03, -0.02, 0.31,
        ]);
        let p = MacroParams { e1: 1.0, e2: 3.0, omega0: 0.6, gamma0: 0.1, beta1e1: 0.7, beta2e2: 0.3 };
        let r = engine_rhs(&s, &p);
        let want = include!("../tests/fixtures/rhs_reference.in");
        for k in 0..27 {
            assert!((r[k] - want[k]).abs() < 1e-14, "moment {k}: {} vs {}", r[k], want[k]);
        }
    }

    #[test]
    fn fixed_point_and_power() {
        let p = driven(2.0, 14.0);
        let ss = macro_steady_state_default(&p).unwrap();
        assert!(inf_norm(&engine_rhs(&ss.state, &p)) < 1e-9);
        assert!((ss.state.casimir(0) - 1.0).abs() < 1e-10);
        assert!(macro_power(&ss.state, &p) > 0.0);
        let g = jacobian_gap_at(&ss.state, &p).unwrap();
        assert!(g.stable && g.gap > 0.0);
    }

    #[test]
    fn transient_size_basic() {
        let n = transient_size(200.0, 1e-10, TransientObservable::Magnetization, 60).unwrap();
        assert!((4..=14).contains(&n), "N* = {n}");
        assert!(transient_size(0.5, 1e-10, TransientObservable::Magnetization, 10).unwrap() <= 1);
        assert!(matches!(
            transient_size(5.0, 0.5, TransientObservable::Magnetization, 20),
            Err(Error::Range(_))
        ));
    }
}
