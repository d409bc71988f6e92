//! Parameter scans, scaling fits, gain maps and constancy sweeps.

use crate::correlations;
use crate::error::{Error, Result};
use crate::liouville::{EngineParams, Scaling};
use crate::macrocumulant::{self, MacroParams, MomentState, SteadyOptions};
use crate::macrofluct;
use crate::thermo::{self, Mode};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// Fixed part of a (ΔE, T̄) scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub e1: f64,
    pub delta_t: f64,
    pub omega0: f64,
    pub gamma0: f64,
}

impl Template {
    pub fn omega0_units() -> Self {
        Template { e1: 100.0, delta_t: 100.0, omega0: 1.0, gamma0: 1.0 }
    }

    pub fn e1_units() -> Self {
        Template { e1: 1.0, delta_t: 20.0, omega0: 0.006, gamma0: 0.001 }
    }

    pub fn engine(&self, delta_e: f64, t_bar: f64, n: usize, scaling: Scaling) -> EngineParams {
        let t1 = t_bar - self.delta_t / 2.0;
        let t2 = t_bar + self.delta_t / 2.0;
        EngineParams {
            e1: self.e1,
            e2: self.e1 + delta_e,
            omega0: self.omega0,
            gamma0: self.gamma0,
            beta1: 1.0 / t1,
            beta2: 1.0 / t2,
            n,
            scaling,
        }
    }

    pub fn macro_params(&self, delta_e: f64, t_bar: f64) -> MacroParams {
        MacroParams::from_engine(&self.engine(delta_e, t_bar, 1, Scaling::None))
    }

    pub fn violations(&self, t_bar_min: f64) -> Vec<String> {
        let mut v = Vec::new();
        if !(t_bar_min - self.delta_t / 2.0 > 0.0) {
            v.push("T̄ − ΔT/2 must be > 0 on the whole grid".into());
        }
        if !(self.delta_t >= 0.0) {
            v.push("delta_t must be ≥ 0".into());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Exact,
    Macro,
}

#[derive(Debug, Clone, Serialize)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanCell {
    pub delta_e: f64,
    pub t_bar: f64,
    pub values: Vec<Option<f64>>,
    pub mode: Option<Mode>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanGrid {
    pub axis1: Axis,
    pub axis2: Axis,
    pub template: Template,
    pub backend: Backend,
    pub n: usize,
    pub scaling: Scaling,
    pub columns: Vec<String>,
    /// Row-major: `axis1` outer, `axis2` inner.
    pub cells: Vec<ScanCell>,
}

impl ScanGrid {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn value(&self, i: usize, j: usize, col: usize) -> Option<f64> {
        self.cells[i * self.axis2.values.len() + j].values[col]
    }

    pub fn failed(&self) -> impl Iterator<Item = &ScanCell> {
        self.cells.iter().filter(|c| c.values.iter().all(Option::is_none))
    }
}

pub const EXACT_COLUMNS: [&str; 8] =
    ["power", "q_cold", "q_hot", "efficiency", "entropy_rate", "variance", "fano", "constancy"];
pub const MACRO_COLUMNS: [&str; 9] = [
    "power",
    "variance",
    "constancy",
    "gain",
    "log10_gain",
    "jacobian_gap",
    "mutual_information",
    "concurrence",
    "tomography_clipped",
];

fn exact_cell(tpl: &Template, de: f64, tb: f64, n: usize, scaling: Scaling) -> ScanCell {
    let p = tpl.engine(de, tb, n, scaling);
    match thermo::analyze(&p) {
        Ok(r) => ScanCell {
            delta_e: de,
            t_bar: tb,
            values: vec![
                Some(r.power),
                Some(r.q_cold),
                Some(r.q_hot),
                Some(r.efficiency),
                Some(r.entropy_rate),
                Some(r.variance),
                r.fano.is_finite().then_some(r.fano),
                r.constancy,
            ],
            mode: Some(r.mode),
            error: None,
        },
        Err(e) => ScanCell { delta_e: de, t_bar: tb, values: vec![None; EXACT_COLUMNS.len()], mode: None, error: Some(e.to_string()) },
    }
}

fn macro_cell(tpl: &Template, de: f64, tb: f64, opts: SteadyOptions) -> ScanCell {
    let p = tpl.macro_params(de, tb);
    let ss = match macrocumulant::macro_steady_state(&p, &MomentState::polarized_down(), opts) {
        Ok(s) => s.state,
        Err(e) => {
            return ScanCell { delta_e: de, t_bar: tb, values: vec![None; MACRO_COLUMNS.len()], mode: None, error: Some(e.to_string()) }
        }
    };
    let mut notes = Vec::new();
    let mut keep = |r: Result<f64>, what: &str| match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    };
    let power = macrocumulant::macro_power(&ss, &p);
    let mode = macrofluct::macro_mode(power, &p);
    let variance = keep(macrofluct::macro_power_variance(&ss, &p), "variance");
    let constancy = if mode == Mode::HeatEngine {
        keep(macrofluct::macro_constancy(&ss, &p).map(|c| c.constancy), "constancy")
    } else {
        None
    };
    let gain = keep(gain_ratio_at(&ss, &p).map(|g| g.gain), "gain");
    let log_gain = gain.filter(|g| *g > 0.0).map(f64::log10);
    let gap = keep(macrocumulant::jacobian_gap_at(&ss, &p).map(|g| g.gap), "jacobian_gap");
    let (mi, conc, clip) = match correlations::reduced_two_spin_state(&ss) {
        Ok(t) => (
            keep(correlations::mutual_information(&t), "mutual_information"),
            keep(correlations::concurrence(&t), "concurrence"),
            Some(if t.clip_applied { 1.0 } else { 0.0 }),
        ),
        Err(e) => {
            notes.push(format!("tomography: {e}"));
            (None, None, None)
        }
    };
    ScanCell {
        delta_e: de,
        t_bar: tb,
        values: vec![Some(power), variance, constancy, gain, log_gain, gap, mi, conc, clip],
        mode: Some(mode),
        error: (!notes.is_empty()).then(|| notes.join("; ")),
    }
}

/// Evaluates every cell of the (ΔE, T̄) grid in parallel. Failed cells are
/// kept with their error message.
pub fn scan(
    tpl: &Template,
    delta_e: &[f64],
    t_bar: &[f64],
    backend: Backend,
    n: usize,
    scaling: Scaling,
    opts: SteadyOptions,
) -> Result<ScanGrid> {
    let tmin = t_bar.iter().cloned().fold(f64::INFINITY, f64::min);
    let v = tpl.violations(tmin);
    if !v.is_empty() {
        return Err(Error::InvalidParameter(v.join("; ")));
    }
    let points: Vec<(f64, f64)> = delta_e.iter().flat_map(|&d| t_bar.iter().map(move |&t| (d, t))).collect();
    let cells: Vec<ScanCell> = points
        .par_iter()
        .map(|&(de, tb)| match backend {
            Backend::Exact => exact_cell(tpl, de, tb, n, scaling),
            Backend::Macro => macro_cell(tpl, de, tb, opts),
        })
        .collect();
    let columns = match backend {
        Backend::Exact => EXACT_COLUMNS.iter().map(|s| s.to_string()).collect(),
        Backend::Macro => MACRO_COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    Ok(ScanGrid {
        axis1: Axis { name: "delta_e".into(), values: delta_e.to_vec() },
        axis2: Axis { name: "t_bar".into(), values: t_bar.to_vec() },
        template: *tpl,
        backend,
        n,
        scaling,
        columns,
        cells,
    })
}

/// For each row of fixed ΔE: whether the power changes sign between the
/// two grid cells bracketing the closed-form boundary `T̄*(ΔE)`.
pub fn boundary_sign_flips(grid: &ScanGrid) -> Vec<(f64, Option<bool>)> {
    let col = grid.column("power").expect("power column");
    let nt = grid.axis2.values.len();
    let mut out = Vec::new();
    for (i, &de) in grid.axis1.values.iter().enumerate() {
        let ts = thermo::t_bar_star(grid.template.e1, de, grid.template.delta_t);
        let k = grid.axis2.values.iter().position(|&t| t > ts);
        let verdict = match k {
            Some(k) if k > 0 && k < nt => {
                match (grid.value(i, k - 1, col), grid.value(i, k, col)) {
                    (Some(a), Some(b)) => Some(a > 0.0 && b < 0.0),
                    _ => None,
                }
            }
            _ => None,
        };
        out.push((de, verdict));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("regression needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("regression abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit { slope, intercept, r_squared })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("rank correlation needs at least two paired points"));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    Ok(cov / (va * vb).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub n_values: Vec<usize>,
    pub ratios: Vec<f64>,
    pub n_sat: usize,
    pub alpha: f64,
    pub r_squared: f64,
    /// `(threshold, α)` for alternative saturation thresholds.
    pub sensitivity: Vec<(f64, f64)>,
}

fn local_slopes(n: &[usize], r: &[f64]) -> Vec<f64> {
    (1..n.len())
        .map(|k| (r[k] / r[k - 1]).ln() / (n[k] as f64 / n[k - 1] as f64).ln())
        .collect()
}

/// First N after which three consecutive local slopes agree within
/// `threshold` (relative spread).
fn saturation_index(slopes: &[f64], threshold: f64) -> Option<usize> {
    (0..slopes.len().saturating_sub(2)).find(|&k| {
        let w = &slopes[k..k + 3];
        let hi = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = w.iter().sum::<f64>() / 3.0;
        (hi - lo) <= threshold * mean.abs()
    })
}

fn fit_from(n: &[usize], r: &[f64], threshold: f64) -> Result<(usize, LinearFit)> {
    let slopes = local_slopes(n, r);
    let k = saturation_index(&slopes, threshold)
        .ok_or_else(|| Error::Range(format!("local slope never stabilizes within {:.0}%", threshold * 100.0)))?;
    // slope k spans n[k]..n[k+1]; saturation is reached at n[k]
    let n_sat = n[k];
    let (x, y): (Vec<f64>, Vec<f64>) = n
        .iter()
        .zip(r)
        .filter(|(m, _)| **m > n_sat)
        .map(|(m, v)| ((*m as f64).ln(), v.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::Range(format!("only {} points beyond N_sat = {n_sat}", x.len())));
    }
    Ok((n_sat, linear_regression(&x, &y)?))
}

/// Power-law fit of `P_N/P_1` against `N`. `n` must start at 1 and be
/// increasing; all powers must share one sign.
pub fn fit_power_law(n: &[usize], power: &[f64]) -> Result<ScalingFit> {
    if n.len() != power.len() || n.first() != Some(&1) || n.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("N values must start at 1 and increase"));
    }
    let p1 = power[0];
    if !(p1.abs() > 1e-300) || !p1.is_finite() {
        return Err(Error::DegenerateBaseline(format!("P_1 = {p1:e}")));
    }
    let ratios: Vec<f64> = power.iter().map(|p| p / p1).collect();
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::ModeMixing("power changes sign across N".into()));
    }
    let (n_sat, fit) = fit_from(n, &ratios, 0.05)?;
    let sensitivity = [0.025, 0.1]
        .iter()
        .filter_map(|&t| fit_from(n, &ratios, t).ok().map(|(_, f)| (t, f.slope)))
        .collect();
    Ok(ScalingFit { n_values: n.to_vec(), ratios, n_sat, alpha: fit.slope, r_squared: fit.r_squared, sensitivity })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRun {
    pub fit: ScalingFit,
    pub reports: Vec<thermo::ThermoReport>,
}

/// Exponent fit over finite-N reports that must share one working mode.
pub fn fit_reports(reports: &[thermo::ThermoReport]) -> Result<ScalingFit> {
    let m0 = reports.first().ok_or_else(|| Error::invalid("no reports to fit"))?.mode;
    if let Some(r) = reports.iter().find(|r| r.mode != m0) {
        return Err(Error::ModeMixing(format!("{} at N = {}, {} at N = {}", m0.as_str(), reports[0].n, r.mode.as_str(), r.n)));
    }
    let n: Vec<usize> = reports.iter().map(|r| r.n).collect();
    let power: Vec<f64> = reports.iter().map(|r| r.power).collect();
    fit_power_law(&n, &power)
}

/// Exact `P_N` for each `N` in `n_values` (solved in parallel) and the
/// fitted exponent.
pub fn scaling_exponent(params: &EngineParams, n_values: &[usize]) -> Result<ScalingRun> {
    let reports: Vec<thermo::ThermoReport> = n_values
        .par_iter()
        .map(|&n| thermo::analyze(&params.with_n(n)))
        .collect::<Result<_>>()?;
    let fit = fit_reports(&reports)?;
    Ok(ScalingRun { fit, reports })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Gain {
    pub macro_power: f64,
    pub p1: f64,
    pub gain: f64,
}

fn single_pair(p: &MacroParams) -> Result<f64> {
    let e = EngineParams {
        e1: p.e1,
        e2: p.e2,
        omega0: p.omega0,
        gamma0: p.gamma0,
        beta1: p.beta1e1 / p.e1,
        beta2: p.beta2e2 / p.e2,
        n: 1,
        scaling: Scaling::None,
    };
    Ok(thermo::analyze(&e)?.power)
}

/// Gain at an already solved macroscopic fixed point.
pub fn gain_ratio_at(s: &macrocumulant::MomentState, p: &MacroParams) -> Result<Gain> {
    let macro_power = macrocumulant::macro_power(s, p);
    let p1 = single_pair(p)?;
    if p1 == 0.0 {
        return Err(Error::DegenerateBaseline("single-pair power is zero".into()));
    }
    Ok(Gain { macro_power, p1, gain: macro_power / p1 })
}

/// Macroscopic power per pair relative to one independent pair.
pub fn gain_ratio(p: &MacroParams) -> Result<Gain> {
    let ss = macrocumulant::macro_steady_state_default(p)?;
    gain_ratio_at(&ss.state, p)
}

/// `P_N / (N P_1)` at finite N with high-temperature scaling.
pub fn finite_gain(params: &EngineParams, n: usize) -> Result<f64> {
    let scaled = EngineParams { scaling: Scaling::HighTemperature, ..params.with_n(n) };
    let pn = thermo::analyze(&scaled)?.power;
    let p1 = thermo::analyze(&EngineParams { scaling: Scaling::None, ..params.with_n(1) })?.power;
    if p1 == 0.0 {
        return Err(Error::DegenerateBaseline("single-pair power is zero".into()));
    }
    Ok(pn / (n as f64 * p1))
}

/// Finite-N constancy for each N (errors kept per entry).
pub fn constancy_vs_n(params: &EngineParams, n_values: &[usize]) -> Vec<(usize, Result<f64>)> {
    n_values
        .par_iter()
        .map(|&n| {
            let r = thermo::analyze(&params.with_n(n)).and_then(|r| {
                r.constancy.ok_or(Error::Mode { found: r.mode.as_str().into(), context: "constancy".into() })
            });
            (n, r)
        })
        .collect()
}

pub fn is_strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PiecewiseFit {
    /// Abscissa of the first point of the right piece.
    pub break_at: f64,
    pub left: LinearFit,
    pub right: LinearFit,
}

/// Two-piece linear fit, choosing the split that minimizes the total
/// squared residual; each piece keeps at least `min_points`.
pub fn piecewise_linear(x: &[f64], y: &[f64], min_points: usize) -> Result<PiecewiseFit> {
    let m = min_points.max(2);
    if x.len() < 2 * m {
        return Err(Error::invalid("too few points for a two-piece fit"));
    }
    let sse = |a: &[f64], b: &[f64], f: &LinearFit| -> f64 {
        a.iter().zip(b).map(|(u, v)| (v - f.intercept - f.slope * u).powi(2)).sum()
    };
    let mut best: Option<(f64, PiecewiseFit)> = None;
    for k in m..=x.len() - m {
        let l = linear_regression(&x[..k], &y[..k])?;
        let r = linear_regression(&x[k..], &y[k..])?;
        let s = sse(&x[..k], &y[..k], &l) + sse(&x[k..], &y[k..], &r);
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, PiecewiseFit { break_at: x[k], left: l, right: r }));
        }
    }
    Ok(best.expect("non-empty search").1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_power_laws() {
        let n: Vec<usize> = (1..=20).collect();
        let p: Vec<f64> = n.iter().map(|&k| 3.0 * (k as f64).powf(1.3)).collect();
        let f = fit_power_law(&n, &p).unwrap();
        assert!((f.alpha - 1.3).abs() < 1e-10);
        let p: Vec<f64> = n.iter().map(|&k| 0.7 * k as f64).collect();
        let f = fit_power_law(&n, &p).unwrap();
        assert!((f.alpha - 1.0).abs() < 1e-12);
        let p: Vec<f64> = n.iter().map(|&k| if k == 1 { 0.0 } else { 1.0 }).collect();
        assert!(matches!(fit_power_law(&n, &p), Err(Error::DegenerateBaseline(_))));
    }

    #[test]
    fn saturation_skips_transient() {
        let n: Vec<usize> = (1..=20).collect();
        // saturating prefactor: slope settles only at larger N
        let p: Vec<f64> = n.iter().map(|&k| (k as f64).powf(1.2) * (1.0 + 2.0 / (k as f64).powi(2))).collect();
        let f = fit_power_law(&n, &p).unwrap();
        assert!(f.n_sat > 1);
        assert!((f.alpha - 1.2).abs() < 0.05, "{}", f.alpha);
    }

    #[test]
    fn spearman_basic() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(r > 0.8 && r < 1.0);
    }

    #[test]
    fn piecewise_finds_kink() {
        let x: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| if v < 8.0 { 2.0 * v } else { 16.0 + 0.5 * (v - 8.0) }).collect();
        let f = piecewise_linear(&x, &y, 3).unwrap();
        assert!((f.break_at - 8.0).abs() <= 1.0);
        assert!(f.left.r_squared > 0.999 && f.right.r_squared > 0.999);
    }

    #[test]
    fn equal_spacing_column_has_no_power() {
        let g = scan(&Template::e1_units(), &[0.0], &[14.0, 20.0], Backend::Exact, 1, Scaling::None, SteadyOptions::default()).unwrap();
        let c = g.column("power").unwrap();
        assert_eq!(g.value(0, 0, c), Some(0.0));
        assert_eq!(g.value(0, 1, c), Some(0.0));
    }
}
