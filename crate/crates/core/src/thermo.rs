//! Steady-state thermodynamics of the finite-N engine.
//!
//! Currents are energy flows *into* the working medium: `q_i > 0` means
//! bath `i` heats the spins. Power is work delivered to the drive, so
//! `power = q_cold + q_hot` at steady state.

use crate::dicke::{CollectiveOps, SparseOp};
use crate::error::{Error, Result};
use crate::liouville::{self, EngineParams, Liouvillian, SteadyState};
use crate::ode::Tolerances;
use faer::c64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    HeatEngine,
    Refrigerator,
    Dud,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::HeatEngine => "heat_engine",
            Mode::Refrigerator => "refrigerator",
            Mode::Dud => "dud",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThermoReport {
    pub n: usize,
    pub power: f64,
    pub q_cold: f64,
    pub q_hot: f64,
    pub efficiency: f64,
    pub cop: Option<f64>,
    pub eta_carnot: f64,
    pub cop_carnot: f64,
    pub entropy_rate: f64,
    pub variance: f64,
    pub fano: f64,
    pub constancy: Option<f64>,
    pub mode: Mode,
    pub residual: f64,
    pub clipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyCop {
    pub eta: f64,
    pub eps: f64,
    pub eta_c: f64,
    pub eps_c: f64,
}

/// `η = ΔE/E₂`; defined for every valid parameter set.
pub fn efficiency(params: &EngineParams) -> f64 {
    params.delta_e() / params.e2
}

/// Carnot efficiency `1 − T₁/T₂` and COP `T₁/(T₂ − T₁)` from the bath
/// temperatures (infinite COP at equal temperatures).
pub fn carnot(beta1: f64, beta2: f64) -> (f64, f64) {
    let eta_c = 1.0 - beta2 / beta1;
    let eps_c = if beta1 > beta2 { beta2 / (beta1 - beta2) } else { f64::INFINITY };
    (eta_c, eps_c)
}

pub fn efficiency_cop(params: &EngineParams) -> Result<EfficiencyCop> {
    params.validate()?;
    let de = params.delta_e();
    if de == 0.0 {
        return Err(Error::invalid("COP undefined for E2 = E1"));
    }
    let (eta_c, eps_c) = carnot(params.beta1, params.beta2);
    Ok(EfficiencyCop { eta: de / params.e2, eps: params.e1 / de, eta_c, eps_c })
}

/// `−i ω₀ ΔE (S₊⁽¹⁾S₋⁽²⁾ − S₋⁽¹⁾S₊⁽²⁾)/2`, Hermitian.
pub fn power_operator(ops: &CollectiveOps, params: &EngineParams) -> SparseOp {
    let eff = params.effective();
    let a = ops.s_plus[0].matmul(&ops.s_minus[1]);
    let b = ops.s_minus[0].matmul(&ops.s_plus[1]);
    a.sub(&b).scale(c64::new(0.0, -eff.omega0 * params.delta_e() / 2.0))
}

fn real_part(z: c64, what: &str) -> Result<f64> {
    if z.im.abs() > 1e-6 * z.re.abs().max(1.0) {
        return Err(Error::Numerical(format!("{what} has imaginary part {:e}", z.im)));
    }
    Ok(z.re)
}

fn pair(l: &Liouvillian) -> Result<(&EngineParams, &CollectiveOps)> {
    match (l.pair_params(), l.pair_ops()) {
        (Some(p), Some(o)) => Ok((p, o)),
        _ => Err(Error::invalid("thermodynamics needs a two-ensemble generator")),
    }
}

pub fn power(ss: &SteadyState, ops: &CollectiveOps, params: &EngineParams) -> Result<f64> {
    real_part(ss.expect(&power_operator(ops, params)), "power")
}

/// Returns `(q_cold, q_hot)`.
pub fn heat_currents(ss: &SteadyState, ops: &CollectiveOps, params: &EngineParams) -> Result<(f64, f64)> {
    let eff = params.effective();
    let mut q = [0.0; 2];
    for (i, e) in [params.e1, params.e2].into_iter().enumerate() {
        let r = liouville::rates(params, i + 1)?;
        let pm = real_part(ss.expect(&ops.s_plus[i].matmul(&ops.s_minus[i])), "⟨S+S−⟩")?;
        let sz = real_part(ss.expect(&ops.s_z[i]), "⟨Sz⟩")?;
        q[i] = -e * eff.gamma0 * (pm + 2.0 * r.n_th * sz);
    }
    Ok((q[0], q[1]))
}

/// `−β₁q_cold − β₂q_hot` with the effective inverse temperatures.
pub fn entropy_rate(q_cold: f64, q_hot: f64, params: &EngineParams) -> Result<f64> {
    let eff = params.effective();
    let s = -eff.beta1 * q_cold - eff.beta2 * q_hot;
    let scale = (eff.beta1 * q_cold.abs() + eff.beta2 * q_hot.abs()).max(1.0);
    if s < -1e-10 * scale {
        return Err(Error::Numerical(format!("negative entropy production {s:e}")));
    }
    Ok(s)
}

pub fn classify(power: f64, q_cold: f64, q_hot: f64, params: &EngineParams) -> Mode {
    let z = 1e-12 * params.effective().gamma0 * params.e1;
    if power > z && q_hot > z {
        Mode::HeatEngine
    } else if power < -z && q_cold > z {
        Mode::Refrigerator
    } else {
        Mode::Dud
    }
}

/// Symmetrized, mean-subtracted initial condition `(Pρ + ρP)/2 − P̄ρ`
/// in the unit basis of `l`.
fn correlation_seed(l: &Liouvillian, ss: &SteadyState, pop: &SparseOp, p_mean: f64) -> Result<Vec<c64>> {
    let d = l.hilbert_dim();
    let p = pop.to_dense();
    let pr = &p * &ss.rho;
    let rp = &ss.rho * &p;
    let c0 = faer::Mat::<c64>::from_fn(d, d, |a, b| (pr[(a, b)] + rp[(a, b)]) * 0.5 - ss.rho[(a, b)] * p_mean);
    let (v, outside) = l.units.gather(&c0);
    if outside > 1e-12 * p.norm_max().max(1e-300) {
        return Err(Error::Symmetry("power correlation leaves the generator's sector".into()));
    }
    Ok(v)
}

fn trace_with(l: &Liouvillian, op: &SparseOp, v: &[c64]) -> c64 {
    op.expect(&l.units.scatter(v))
}

/// `2∫₀^∞ (⟨P(t)P(0)⟩ − P̄²) dt` through a single bordered linear solve.
pub fn power_variance(l: &Liouvillian, ss: &SteadyState) -> Result<f64> {
    let (params, ops) = pair(l)?;
    let pop = power_operator(ops, params);
    let p_mean = real_part(ss.expect(&pop), "power")?;
    let seed = correlation_seed(l, ss, &pop, p_mean)?;
    let rhs: Vec<c64> = seed.iter().map(|z| -z).collect();
    let x = l.solve_traceless(&rhs)?;
    let var = 2.0 * trace_with(l, &pop, &x).re;
    let scale = params.effective().omega0.powi(2) * params.delta_e().powi(2);
    if var < -1e-8 * scale.max(1e-300) {
        return Err(Error::Numerical(format!("negative power variance {var:e}")));
    }
    Ok(var.max(0.0))
}

/// Same quantity by propagating the correlation in time and integrating
/// with composite Simpson over `[0, t_max]`.
pub fn power_variance_quadrature(l: &Liouvillian, ss: &SteadyState, t_max: f64, intervals: usize, rtol: f64) -> Result<f64> {
    let (params, ops) = pair(l)?;
    let pop = power_operator(ops, params);
    let p_mean = real_part(ss.expect(&pop), "power")?;
    let seed = correlation_seed(l, ss, &pop, p_mean)?;
    let m = intervals + intervals % 2;
    let grid: Vec<f64> = (0..=m).map(|k| t_max * k as f64 / m as f64).collect();
    let tol = Tolerances { rtol, atol: 1e-5 * rtol * seed.iter().map(|z| z.norm()).fold(0.0, f64::max) };
    let traj = liouville::propagate(l, &seed, &grid, tol)?;
    let h = t_max / m as f64;
    let mut acc = 0.0;
    for (k, v) in traj.iter().enumerate() {
        let w = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * trace_with(l, &pop, v).re;
    }
    Ok(2.0 * acc * h / 3.0)
}

/// Normalized constancy `(P/Var)·2ηT₁/(η_C − η)` with `T₁` the effective
/// cold temperature. Defined in both working modes; a dud has no
/// meaningful bound.
pub fn constancy(power: f64, variance: f64, mode: Mode, params: &EngineParams) -> Result<f64> {
    if mode == Mode::Dud {
        return Err(Error::Mode { found: mode.as_str().into(), context: "constancy".into() });
    }
    let eff = params.effective();
    let eta = efficiency(params);
    let (eta_c, _) = carnot(eff.beta1, eff.beta2);
    if eta == eta_c {
        return Err(Error::Numerical("constancy undefined at the Carnot point".into()));
    }
    if !(variance > 0.0) {
        return Err(Error::Numerical("constancy undefined for zero variance".into()));
    }
    let t1 = 1.0 / eff.beta1;
    Ok(power / variance * 2.0 * eta * t1 / (eta_c - eta))
}

/// Builds the generator, solves the steady state and collects every
/// steady-state quantity.
pub fn analyze(params: &EngineParams) -> Result<ThermoReport> {
    let (l, ss) = liouville::solve_pair(params)?;
    report(&l, &ss)
}

pub fn report(l: &Liouvillian, ss: &SteadyState) -> Result<ThermoReport> {
    let (params, ops) = pair(l)?;
    let p = power(ss, ops, params)?;
    let (q_cold, q_hot) = heat_currents(ss, ops, params)?;
    let entropy = entropy_rate(q_cold, q_hot, params)?;
    let mode = classify(p, q_cold, q_hot, params);
    let variance = if params.omega0 == 0.0 || params.delta_e() == 0.0 { 0.0 } else { power_variance(l, ss)? };
    let fano = if p != 0.0 { variance / p } else { f64::NAN };
    let constancy = constancy(p, variance, mode, params).ok();
    let (eta_c, cop_c) = carnot(params.beta1, params.beta2);
    let cop = (params.delta_e() > 0.0).then(|| params.e1 / params.delta_e());
    Ok(ThermoReport {
        n: params.n,
        power: p,
        q_cold,
        q_hot,
        efficiency: efficiency(params),
        cop,
        eta_carnot: eta_c,
        cop_carnot: cop_c,
        entropy_rate: entropy,
        variance,
        fano,
        constancy,
        mode,
        residual: ss.residual,
        clipped: ss.clipped,
    })
}

/// Boundary `ΔE* = E₁ΔT/(T̄ − ΔT/2)` between engine and refrigerator.
pub fn delta_e_star(e1: f64, t_bar: f64, delta_t: f64) -> f64 {
    e1 * delta_t / (t_bar - delta_t / 2.0)
}

/// Average temperature at which a fixed `ΔE` sits on the boundary.
pub fn t_bar_star(e1: f64, delta_e: f64, delta_t: f64) -> f64 {
    delta_t / 2.0 + e1 * delta_t / delta_e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::Scaling;

    fn reference(n: usize, t_bar: f64) -> EngineParams {
        EngineParams { n, ..EngineParams::from_temperatures(1.0, 9.0, t_bar, 10.0) }
    }

    #[test]
    fn closed_form_efficiencies() {
        let p = EngineParams { e2: 10.0, ..reference(1, 11.0) };
        let e = efficiency_cop(&p).unwrap();
        assert!((e.eta - 0.9).abs() < 1e-15);
        assert!((e.eps - 1.0 / 9.0).abs() < 1e-15);
        let p = EngineParams { e2: 1.0, ..p };
        assert_eq!(efficiency(&p), 0.0);
        assert!(efficiency_cop(&p).is_err());
    }

    #[test]
    fn undriven_has_no_power() {
        let p = EngineParams { omega0: 0.0, ..reference(2, 11.0) };
        let r = analyze(&p).unwrap();
        assert_eq!(r.power, 0.0);
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn equilibrium_currents_vanish() {
        let p = EngineParams { e2: 1.0, beta2: 1.0 / 6.0, ..reference(1, 11.0) };
        let r = analyze(&p).unwrap();
        assert!(r.power.abs() < 1e-14 && r.q_cold.abs() < 1e-14 && r.q_hot.abs() < 1e-14);
        // T1/T2 = E1/E2 with unequal temperatures
        let p = EngineParams { e1: 1.0, e2: 2.0, beta1: 1.0 / 3.0, beta2: 1.0 / 6.0, ..reference(2, 11.0) };
        let r = analyze(&p).unwrap();
        assert!(r.q_cold.abs() < 1e-10 && r.q_hot.abs() < 1e-10 && r.entropy_rate.abs() < 1e-10);
    }

    #[test]
    fn first_law_and_proportionality() {
        for n in 1..=3 {
            let p = EngineParams { scaling: Scaling::HighTemperature, ..reference(n, 6.0) };
            let r = analyze(&p).unwrap();
            let scale = r.power.abs();
            assert!((r.power - r.q_cold - r.q_hot).abs() < 1e-8 * scale);
            assert!((-r.q_cold / p.e1 - r.power / p.delta_e()).abs() < 1e-8 * scale / p.delta_e());
            assert!((r.q_hot / p.e2 - r.power / p.delta_e()).abs() < 1e-8 * scale / p.delta_e());
        }
    }

    #[test]
    fn engine_signs() {
        // ΔE below ΔE* at T̄ = 6 (T1 = 1, T2 = 11)
        let p = EngineParams { e2: 3.0, ..reference(1, 6.0) };
        let r = analyze(&p).unwrap();
        assert_eq!(r.mode, Mode::HeatEngine);
        assert!(r.q_hot > 0.0 && r.q_cold < 0.0);
        assert!((r.power / r.q_hot - r.efficiency).abs() < 1e-8);
        assert!(r.efficiency <= r.eta_carnot);
        assert!(r.entropy_rate > 0.0);
    }

    #[test]
    fn resolvent_matches_quadrature_n1() {
        let p = EngineParams { e2: 3.0, ..reference(1, 6.0) };
        let (l, ss) = liouville::solve_pair(&p).unwrap();
        let v = power_variance(&l, &ss).unwrap();
        let g = liouville::gap(&l, 2).unwrap();
        let q = power_variance_quadrature(&l, &ss, 40.0 / g, 4000, 1e-9).unwrap();
        assert!((v - q).abs() < 1e-2 * v, "{v} vs {q}");
    }

    #[test]
    fn boundary_helpers() {
        assert!((delta_e_star(1.0, 11.0, 10.0) - 10.0 / 6.0).abs() < 1e-15);
        let tb = t_bar_star(1.0, 10.0 / 6.0, 10.0);
        assert!((tb - 11.0).abs() < 1e-12);
    }
}
