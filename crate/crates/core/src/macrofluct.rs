//! Macroscopic power fluctuations.
//!
//! Two-time correlators `C_ab(τ) = ⟨a(τ) b(0)⟩` of the transverse moments
//! `(x1, y1, x2, y2)` obey `dC/dτ = M C` with `C(0)` the equal-time
//! second moments. The fourth-order correlators in the power variance
//! factorize into pairs of these, so every term is an integral
//! `∫₀^∞ C_ab C_cd dτ`, obtained from a Lyapunov equation.

use crate::error::{Error, Result};
use crate::macrocumulant::{macro_power, MacroParams, MomentState, X, Y, Z};
use crate::thermo::Mode;
use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::Serialize;

pub const X1: usize = 0;
pub const Y1: usize = 1;
pub const X2: usize = 2;
pub const Y2: usize = 3;

/// `(ensemble, axis)` of each correlator slot.
const SLOTS: [(usize, usize); 4] = [(0, X), (0, Y), (1, X), (1, Y)];

#[derive(Debug, Clone)]
pub struct TwoTimeSystem {
    pub m: Mat<f64>,
    /// Equal-time correlators `⟨a b⟩_ss`, symmetric.
    pub c0: Mat<f64>,
}

fn second(s: &MomentState, i: usize, j: usize) -> f64 {
    let (li, ai) = SLOTS[i];
    let (lj, aj) = SLOTS[j];
    if li == lj {
        s.same(li, ai, aj)
    } else if li == 0 {
        s.cross(ai, aj)
    } else {
        s.cross(aj, ai)
    }
}

pub const MEAN_TOLERANCE: f64 = 1e-8;

pub fn build_two_time_system(s: &MomentState, p: &MacroParams) -> Result<TwoTimeSystem> {
    p.validate()?;
    let worst = (0..2)
        .flat_map(|l| [s.first(l, X), s.first(l, Y)])
        .map(f64::abs)
        .fold(0.0, f64::max);
    if worst > MEAN_TOLERANCE {
        return Err(Error::InconsistentSteadyState(worst));
    }
    let w = p.omega0;
    let g = p.gamma0;
    let (z1, z2) = (s.first(0, Z), s.first(1, Z));
    let a1 = g / 2.0 * z1 - g / p.beta1e1;
    let a2 = g / 2.0 * z2 - g / p.beta2e2;
    let mut m = Mat::<f64>::zeros(4, 4);
    m[(X1, X1)] = a1;
    m[(Y1, Y1)] = a1;
    m[(X1, Y2)] = w / 2.0 * z1;
    m[(Y1, X2)] = -w / 2.0 * z1;
    m[(X2, X2)] = a2;
    m[(Y2, Y2)] = a2;
    m[(X2, Y1)] = w / 2.0 * z2;
    m[(Y2, X1)] = -w / 2.0 * z2;
    let c0 = Mat::<f64>::from_fn(4, 4, |i, j| second(s, i, j));
    Ok(TwoTimeSystem { m, c0 })
}

impl TwoTimeSystem {
    pub fn max_real_eigenvalue(&self) -> Result<f64> {
        let ev = self
            .m
            .eigenvalues()
            .map_err(|e| Error::Convergence { what: format!("eigensolver: {e:?}"), residual: f64::NAN })?;
        Ok(ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }

    fn require_stable(&self) -> Result<()> {
        let r = self.max_real_eigenvalue()?;
        if r >= 0.0 {
            return Err(Error::DivergentIntegral { max_re: r });
        }
        Ok(())
    }

    /// `∫₀^∞ C(τ) dτ = −M⁻¹ C(0)`.
    pub fn correlator_integrals(&self) -> Result<Mat<f64>> {
        self.require_stable()?;
        let lu = self.m.partial_piv_lu();
        let x = lu.solve(&self.c0);
        Ok(Mat::<f64>::from_fn(4, 4, |i, j| -x[(i, j)]))
    }

    /// `∫₀^∞ C_ab(τ) C_cd(τ) dτ`.
    pub fn product_integral(&self, a: usize, b: usize, c: usize, d: usize) -> Result<f64> {
        self.require_stable()?;
        let y = self.lyapunov(b, d);
        Ok(y[(a, c)])
    }

    /// Solves `M Y + Y Mᵀ = −g_b g_dᵀ`, `g_k` the k-th column of `C(0)`.
    fn lyapunov(&self, b: usize, d: usize) -> Mat<f64> {
        let n = 4;
        let k = Mat::<f64>::from_fn(n * n, n * n, |r, c| {
            // column-stacked: index i + n*j
            let (i, j) = (r % n, r / n);
            let (k, l) = (c % n, c / n);
            let mut v = 0.0;
            if j == l {
                v += self.m[(i, k)];
            }
            if i == k {
                v += self.m[(j, l)];
            }
            v
        });
        let rhs = Mat::<f64>::from_fn(n * n, 1, |r, _| -self.c0[(r % n, b)] * self.c0[(r / n, d)]);
        let y = k.partial_piv_lu().solve(&rhs);
        Mat::<f64>::from_fn(n, n, |i, j| y[(i + n * j, 0)])
    }
}

/// Variance rate of the power per spin pair, from the eight pairings that
/// survive with vanishing transverse means.
pub fn macro_power_variance(s: &MomentState, p: &MacroParams) -> Result<f64> {
    let sys = build_two_time_system(s, p)?;
    if p.omega0 == 0.0 || p.delta_e() == 0.0 {
        return Ok(0.0);
    }
    let i = |a, b, c, d| sys.product_integral(a, b, c, d);
    let sum = i(X1, X1, Y2, Y2)? + i(Y2, X1, X1, Y2)? - i(Y1, X1, X2, Y2)? - i(X2, X1, Y1, Y2)?
        - i(X1, Y1, Y2, X2)?
        - i(Y2, Y1, X1, X2)?
        + i(Y1, Y1, X2, X2)?
        + i(X2, Y1, Y1, X2)?;
    let var = p.omega0.powi(2) * p.delta_e().powi(2) / 8.0 * sum;
    let scale = p.omega0.powi(2) * p.delta_e().powi(2) / p.gamma0;
    if var < -1e-10 * scale {
        return Err(Error::Numerical(format!("negative macroscopic variance {var:e}")));
    }
    Ok(var.max(0.0))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MacroConstancy {
    pub power: f64,
    pub variance: f64,
    pub efficiency: f64,
    pub eta_carnot: f64,
    pub constancy: f64,
}

/// Working mode from the sign of the macroscopic power; the currents
/// follow `−q_cold/E₁ = q_hot/E₂ = P/ΔE`.
pub fn macro_mode(power: f64, p: &MacroParams) -> Mode {
    let z = 1e-12 * p.gamma0 * p.e1;
    if power > z {
        Mode::HeatEngine
    } else if power < -z {
        Mode::Refrigerator
    } else {
        Mode::Dud
    }
}

pub fn macro_constancy(s: &MomentState, p: &MacroParams) -> Result<MacroConstancy> {
    let power = macro_power(s, p);
    let mode = macro_mode(power, p);
    if mode != Mode::HeatEngine {
        return Err(Error::Mode { found: mode.as_str().into(), context: "macroscopic constancy".into() });
    }
    let variance = macro_power_variance(s, p)?;
    if !(variance > 0.0) {
        return Err(Error::Numerical("constancy undefined for zero variance".into()));
    }
    let (t1, t2) = (p.t1(), p.t2());
    let eta = p.delta_e() / p.e2;
    let eta_c = 1.0 - t1 / t2;
    let constancy = power / variance * 2.0 * eta * t1 / (eta_c - eta);
    Ok(MacroConstancy { power, variance, efficiency: eta, eta_carnot: eta_c, constancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::macrocumulant::{macro_steady_state_default, SteadyOptions};
    use crate::ode::{Dopri5, Tolerances};

    fn driven(delta_e: f64, t_bar: f64) -> MacroParams {
        let (t1, t2) = (t_bar - 10.0, t_bar + 10.0);
        MacroParams { e1: 1.0, e2: 1.0 + delta_e, omega0: 0.006, gamma0: 0.001, beta1e1: 1.0 / t1, beta2e2: (1.0 + delta_e) / t2 }
    }

    #[test]
    fn undriven_blocks() {
        let p = MacroParams { omega0: 0.0, ..driven(2.0, 14.0) };
        let ss = macro_steady_state_default(&p).unwrap();
        let sys = build_two_time_system(&ss.state, &p).unwrap();
        for (i, j) in [(X1, X2), (X1, Y2), (Y1, X2), (Y1, Y2)] {
            assert_eq!(sys.m[(i, j)], 0.0);
            assert_eq!(sys.m[(j, i)], 0.0);
        }
        let want = p.gamma0 / 2.0 * ss.state.first(0, Z) - p.gamma0 / p.beta1e1;
        assert!((sys.m[(X1, X1)] - want).abs() < 1e-18 && want < 0.0);
        assert_eq!(macro_power_variance(&ss.state, &p).unwrap(), 0.0);
    }

    #[test]
    fn nonzero_mean_rejected() {
        let mut s = MomentState::polarized_down();
        s.0[0] = 1e-3;
        assert!(matches!(build_two_time_system(&s, &driven(2.0, 14.0)), Err(Error::InconsistentSteadyState(_))));
    }

    #[test]
    fn lyapunov_matches_quadrature() {
        let p = driven(2.0, 14.0);
        let ss = macro_steady_state_default(&p).unwrap();
        let sys = build_two_time_system(&ss.state, &p).unwrap();
        assert!(sys.max_real_eigenvalue().unwrap() < 0.0);
        // integrate C(τ) and all 256 products, as one ODE system
        let m = sys.m.clone();
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            for col in 0..4 {
                for i in 0..4 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += m[(i, k)] * y[k + 4 * col];
                    }
                    dy[i + 4 * col] = acc;
                }
            }
            for q in 0..256 {
                let (ab, cd) = (q % 16, q / 16);
                dy[16 + q] = y[ab] * y[cd];
            }
        };
        let mut y = vec![0.0; 16 + 256];
        for col in 0..4 {
            for i in 0..4 {
                y[i + 4 * col] = sys.c0[(i, col)];
            }
        }
        let rate = -sys.max_real_eigenvalue().unwrap();
        let mut solver = Dopri5::new(Tolerances { rtol: 1e-11, atol: 1e-16 }, 1e-2);
        solver.integrate(&f, 0.0, 60.0 / rate, &mut y).unwrap();
        for (a, b, c, d) in [(X1, X1, Y2, Y2), (Y2, X1, X1, Y2), (Y1, X1, X2, Y2), (X2, Y1, Y1, X2)] {
            let lyap = sys.product_integral(a, b, c, d).unwrap();
            let quad = y[16 + (a + 4 * b) + 16 * (c + 4 * d)];
            assert!((lyap - quad).abs() <= 1e-3 * lyap.abs().max(1e-12), "{lyap} vs {quad}");
        }
        let ci = sys.correlator_integrals().unwrap();
        let direct = sys.product_integral(X1, X1, X1, X1).unwrap();
        assert!(ci[(X1, X1)].is_finite() && direct > 0.0);
    }

    #[test]
    fn engine_point_constancy() {
        let p = driven(2.0, 14.0);
        let ss = crate::macrocumulant::macro_steady_state(&p, &MomentState::polarized_down(), SteadyOptions::default()).unwrap();
        let c = macro_constancy(&ss.state, &p).unwrap();
        assert!(c.variance > 0.0 && c.constancy > 0.0 && c.constancy <= 1.0 + 1e-6);
        let flat = MacroParams { e2: 1.0, beta2e2: 1.0 / 24.0, ..p };
        let ss = macro_steady_state_default(&flat).unwrap();
        assert_eq!(macro_power_variance(&ss.state, &flat).unwrap(), 0.0);
    }
}
