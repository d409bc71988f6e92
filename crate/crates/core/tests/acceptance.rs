//! One PASS/FAIL line per acceptance criterion. The process exits 0 once
//! every check has run; set `SPINPAIR_STRICT=1` to exit 1 on any FAIL.

use spinpair::dicke::build_single_ensemble_ops;
use spinpair::liouville::{self, EngineParams, Scaling, SteadyMethod};
use spinpair::macrocumulant::{self as mc, MacroParams, SteadyOptions};
use spinpair::macrofluct;
use spinpair::studies::{self, Backend, Template};
use spinpair::thermo::{self, Mode};
use std::time::Instant;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Check = fn() -> spinpair::Result<Verdict>;

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn dissipative_agreement() -> spinpair::Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut at = 0.0;
    let mut quad: f64 = 0.0;
    for b in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let a = mc::dissipative_ss_analytic(b)?;
        let o = mc::dissipative_ode_steady_state(b, 0.001)?;
        let d = (a.mz - o.mz).abs().max((a.mz2 - o.mz2).abs()).max((a.mx2 - o.mx2).abs());
        if d > worst {
            worst = d;
            at = b;
        }
        quad = quad.max((a.mz2 + 2.0 * a.mx2 - 1.0).abs()).max((o.mz2 + 2.0 * o.mx2 - 1.0).abs());
    }
    Ok(verdict(
        worst <= 1e-6 && quad <= 1e-12,
        format!("max |ODE - closed form| = {worst:.3e} (βE = {at}), quadrature-sum defect {quad:.1e}"),
    ))
}

fn thermal_fixed_point() -> spinpair::Result<Verdict> {
    let mut ladder: f64 = 0.0;
    for n in 1..=6 {
        let p = EngineParams { omega0: 0.0, n, ..EngineParams::from_temperatures(1.0, 1.5, 3.0, 2.0) };
        let l = liouville::build_sector(&p, Some(0))?;
        let ss = liouville::steady_state(&l, SteadyMethod::DenseNullSpace)?;
        let w1 = liouville::thermal_ladder(n, p.beta1 * p.e1);
        let w2 = liouville::thermal_ladder(n, p.beta2 * p.e2);
        let d = n + 1;
        for a in 0..d {
            for b in 0..d {
                ladder = ladder.max((ss.rho[(a * d + b, a * d + b)].re - w1[a] * w2[b]).abs());
            }
        }
    }
    let (mut worst, mut at) = (0.0f64, 0.0);
    for b in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
        let n = 60;
        let l = liouville::build_single(n, b, 1.0, Scaling::HighTemperature, Some(0))?;
        let ss = liouville::steady_state(&l, SteadyMethod::DenseNullSpace)?;
        let mz = ss.expect(&build_single_ensemble_ops(n)?.s_z).re / (n as f64 / 2.0);
        let d = (mz - mc::dissipative_ss_analytic(b)?.mz).abs();
        if d > worst {
            (worst, at) = (d, b);
        }
    }
    Ok(verdict(
        ladder <= 1e-12 && worst <= 1e-2,
        format!("Gibbs ladder defect {ladder:.1e} (N ≤ 6); max |⟨m^z⟩_60 - analytic| = {worst:.2e} (βE = {at})"),
    ))
}

fn current_proportionality() -> spinpair::Result<Verdict> {
    let des = studies::linspace(0.5, 20.0, 10);
    let tbs = studies::linspace(6.0, 100.0, 10);
    let (mut prop, mut first, mut second) = (0.0f64, 0.0f64, f64::INFINITY);
    let mut count = 0;
    for n in [1, 2, 4] {
        for &de in &des {
            for &tb in &tbs {
                let p = EngineParams { n, ..EngineParams::from_temperatures(1.0, de, tb, 10.0) };
                let r = thermo::analyze(&p)?;
                let floor = 1e-12 * p.gamma0 * p.e1;
                let unit = r.power / de;
                prop = prop.max(rel(-r.q_cold / p.e1, unit, floor)).max(rel(r.q_hot / p.e2, unit, floor));
                first = first.max((r.power - r.q_cold - r.q_hot).abs() / r.power.abs().max(floor));
                second = second.min(r.entropy_rate);
                count += 1;
            }
        }
    }
    Ok(verdict(
        prop <= 1e-8 && first <= 1e-6 && second >= 0.0,
        format!("{count} points: proportionality {prop:.1e}, first law {first:.1e}, min entropy rate {second:.2e}"),
    ))
}

fn efficiency_and_boundary() -> spinpair::Result<Verdict> {
    let mut worst: f64 = 0.0;
    let mut modes_ok = true;
    for n in 1..=6 {
        let p = EngineParams { n, ..EngineParams::from_temperatures(1.0, 2.0, 7.0, 10.0) };
        let r = thermo::analyze(&p)?;
        modes_ok &= r.mode == Mode::HeatEngine;
        worst = worst.max((r.power / r.q_hot - p.delta_e() / p.e2).abs());
    }
    let tpl = Template::omega0_units();
    let grid = studies::scan(
        &tpl,
        &studies::linspace(10.0, 250.0, 12),
        &studies::linspace(60.0, 300.0, 16),
        Backend::Exact,
        1,
        Scaling::None,
        SteadyOptions::default(),
    )?;
    let flips = studies::boundary_sign_flips(&grid);
    let judged: Vec<bool> = flips.iter().filter_map(|(_, v)| *v).collect();
    let flipped = judged.iter().filter(|v| **v).count();
    Ok(verdict(
        modes_ok && worst <= 1e-8 && !judged.is_empty() && flipped == judged.len(),
        format!(
            "|P/Q_hot - ΔE/E2| ≤ {worst:.1e} for N = 1..6 (engine at every N: {modes_ok}); sign flips on {flipped}/{} rows crossing ΔE*",
            judged.len()
        ),
    ))
}

fn scaling_exponent() -> spinpair::Result<Verdict> {
    let tpl = Template::omega0_units();
    let n: Vec<usize> = (1..=20).collect();
    let mut inside = 0;
    let mut report = Vec::new();
    for tb in [60.0, 90.0, 120.0, 150.0, 180.0] {
        match studies::scaling_exponent(&tpl.engine(125.0, tb, 1, Scaling::None), &n) {
            Ok(run) => {
                let a = run.fit.alpha;
                inside += usize::from((1.0..=1.5).contains(&a));
                report.push(format!("T̄={tb}: α={a:.3}"));
            }
            Err(e) => report.push(format!("T̄={tb}: {e}")),
        }
    }
    let mut synth_err: f64 = 0.0;
    for alpha in [0.8, 1.0, 1.27, 1.5] {
        let p: Vec<f64> = n.iter().map(|&k| 2.5e-3 * (k as f64).powf(alpha)).collect();
        synth_err = synth_err.max((studies::fit_power_law(&n, &p)?.alpha - alpha).abs());
    }
    Ok(verdict(
        inside >= 5 && synth_err <= 0.01,
        format!("{}; synthetic power laws recovered to {synth_err:.1e}", report.join(", ")),
    ))
}

fn tur_violation() -> spinpair::Result<Verdict> {
    let p = EngineParams::from_temperatures(1.0, 9.0, 12.0, 10.0);
    let n: Vec<usize> = (1..=8).collect();
    let c: Vec<f64> = studies::constancy_vs_n(&p, &n).into_iter().map(|(_, r)| r).collect::<spinpair::Result<_>>()?;
    let c1 = c[0] - 1.0;
    let ok = c1 > 0.0 && c1 < 1e-2 && c[1] < 1.0 && studies::is_strictly_decreasing(&c);
    let mode = thermo::analyze(&p)?.mode;
    Ok(verdict(
        ok,
        format!(
            "C_1 = {:.5}, C_2 = {:.5}, C_8 = {:.5}, decreasing: {} ({})",
            c[0],
            c[1],
            c[7],
            studies::is_strictly_decreasing(&c),
            mode.as_str()
        ),
    ))
}

fn variance_oracles() -> spinpair::Result<Verdict> {
    let mut worst: f64 = 0.0;
    for n in [1, 2] {
        for (de, tb) in [(3.0, 11.0), (9.0, 11.0)] {
            let p = EngineParams { n, ..EngineParams::from_temperatures(1.0, de, tb, 10.0) };
            let (l, ss) = liouville::solve_pair(&p)?;
            let v = thermo::power_variance(&l, &ss)?;
            let g = liouville::gap(&l, 2)?;
            let q = thermo::power_variance_quadrature(&l, &ss, 40.0 / g, 4000, 1e-9)?;
            worst = worst.max(rel(v, q, 0.0));
        }
    }
    Ok(verdict(worst <= 1e-2, format!("max relative difference {worst:.2e} over 4 points")))
}

fn dissipative_jacobian() -> spinpair::Result<Verdict> {
    let mut closed: f64 = 0.0;
    for b in [0.02, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
        let j = mc::jacobian_dissipative(b, 1.0)?;
        closed = closed.max((j.eigenvalues[0] - j.lambda_plus).norm()).max((j.eigenvalues[1] - j.lambda_minus).norm());
    }
    let hi = mc::jacobian_dissipative(50.0, 1.0)?.gap;
    let lo = mc::jacobian_dissipative(0.02, 1.0)?.gap / (2.0 / 0.02);
    Ok(verdict(
        closed <= 1e-10 && (hi - 1.0).abs() <= 1e-2 && (lo - 1.0).abs() <= 1e-2,
        format!("|eig - λ±| ≤ {closed:.1e}; gap/Γ0 at βE=50: {hi:.4}; gap/(2Γ0/βE) at βE=0.02: {lo:.4}"),
    ))
}

fn engine_gap() -> spinpair::Result<Verdict> {
    let tpl = Template::e1_units();
    let tbs = studies::linspace(11.0, 50.0, 40);
    let step = tbs[1] - tbs[0];
    let mut ok = true;
    let mut report = Vec::new();
    for de in [1.0, 2.0, 4.0] {
        let gaps: Vec<f64> = tbs
            .iter()
            .map(|&tb| mc::jacobian_gap_engine(&tpl.macro_params(de, tb)).map(|g| g.gap))
            .collect::<spinpair::Result<_>>()?;
        let f = studies::piecewise_linear(&tbs, &gaps, 4)?;
        let star = thermo::t_bar_star(tpl.e1, de, tpl.delta_t);
        // the kink lies between the last left point and `break_at`
        let off = if star > f.break_at { star - f.break_at } else { (f.break_at - step - star).max(0.0) };
        let good = f.left.r_squared > 0.99 && f.right.r_squared > 0.99 && off <= step;
        ok &= good;
        report.push(format!(
            "ΔE={de}: R² {:.4}/{:.4}, break {:.2} vs T̄* {star:.2}",
            f.left.r_squared, f.right.r_squared, f.break_at
        ));
    }
    Ok(verdict(ok, report.join("; ")))
}

fn engine_map() -> spinpair::Result<studies::ScanGrid> {
    studies::scan(
        &Template::e1_units(),
        &studies::linspace(0.5, 20.0, 16),
        &studies::linspace(11.0, 60.0, 16),
        Backend::Macro,
        1,
        Scaling::None,
        SteadyOptions::default(),
    )
}

fn macro_constancy_bound() -> spinpair::Result<Verdict> {
    let g = engine_map()?;
    let col = g.column("constancy").expect("constancy column");
    let (nd, nt) = (g.axis1.values.len(), g.axis2.values.len());
    let mut best = (f64::NEG_INFINITY, 0, 0);
    let mut engine = 0;
    for i in 0..nd {
        for j in 0..nt {
            if let Some(c) = g.value(i, j, col) {
                engine += 1;
                if c > best.0 {
                    best = (c, i, j);
                }
            }
        }
    }
    let (max, i, j) = best;
    let corner = i >= nd / 2 && j < nt / 2;
    Ok(verdict(
        max <= 1.0 + 1e-6 && (0.6..=0.8).contains(&max) && corner,
        format!(
            "{engine} engine cells, max C = {max:.4} at ΔE = {:.2}, T̄ = {:.2} (small-T̄/large-ΔE: {corner})",
            g.axis1.values[i], g.axis2.values[j]
        ),
    ))
}

fn gain_vs_spacing() -> spinpair::Result<Verdict> {
    let pair = |de: f64| EngineParams {
        e1: 1.0,
        e2: 1.0 + de,
        omega0: 0.006,
        gamma0: 0.001,
        beta1: 50.0,
        beta2: 1e-2,
        n: 1,
        scaling: Scaling::None,
    };
    let des = studies::linspace(1.0, 9.0, 5);
    let mut ok = true;
    let mut report = Vec::new();
    let macro_logs: Vec<f64> = des
        .iter()
        .map(|&de| studies::gain_ratio(&MacroParams::from_engine(&pair(de))).map(|g| g.gain.log10()))
        .collect::<spinpair::Result<_>>()?;
    let f = studies::linear_regression(&des, &macro_logs)?;
    ok &= f.r_squared > 0.99;
    report.push(format!("macro R² {:.4} (slope {:.3})", f.r_squared, f.slope));
    for n in [20, 40] {
        let logs: Vec<f64> = des
            .iter()
            .map(|&de| studies::finite_gain(&pair(de), n).map(|g| g.abs().log10()))
            .collect::<spinpair::Result<_>>()?;
        let f = studies::linear_regression(&des, &logs)?;
        ok &= f.r_squared > 0.99;
        report.push(format!("N={n} R² {:.4} (slope {:.3})", f.r_squared, f.slope));
    }
    Ok(verdict(ok, report.join("; ")))
}

fn correlations_track_power() -> spinpair::Result<Verdict> {
    let g = engine_map()?;
    let (pc, mc_, cc) = (g.column("power").unwrap(), g.column("mutual_information").unwrap(), g.column("concurrence").unwrap());
    let (mut p, mut mi) = (Vec::new(), Vec::new());
    let mut max_c: f64 = 0.0;
    let mut missing = 0;
    for cell in &g.cells {
        match (cell.values[pc], cell.values[mc_], cell.values[cc]) {
            (Some(a), Some(b), Some(c)) => {
                p.push(a);
                mi.push(b);
                max_c = max_c.max(c);
            }
            _ => missing += 1,
        }
    }
    let rho = studies::spearman(&mi, &p)?;
    let abs: Vec<f64> = p.iter().map(|v| v.abs()).collect();
    let rho_abs = studies::spearman(&mi, &abs)?;
    Ok(verdict(
        missing == 0 && max_c <= 1e-10 && rho > 0.8,
        format!("max concurrence {max_c:.1e}; Spearman(I, P) = {rho:.3}; Spearman(I, |P|) = {rho_abs:.3}; {missing} cells failed"),
    ))
}

fn constancy_crossover() -> spinpair::Result<Verdict> {
    let n: Vec<usize> = (1..=10).collect();
    let mut found = Vec::new();
    let mut report = Vec::new();
    for w in [0.001, 0.002, 0.003, 0.004, 0.006, 0.008] {
        let p = EngineParams {
            e1: 1.0,
            e2: 10.0,
            omega0: w,
            gamma0: 0.001,
            beta1: 0.5,
            beta2: 0.04,
            n: 1,
            scaling: Scaling::HighTemperature,
        };
        let finite = studies::constancy_vs_n(&p, &n).into_iter().filter_map(|(k, r)| r.ok().map(|c| (k, c))).fold(
            (0, f64::NEG_INFINITY),
            |a, b| if b.1 > a.1 { b } else { a },
        );
        let mp = MacroParams::from_engine(&p);
        let ss = mc::macro_steady_state_default(&mp)?;
        let macro_c = macrofluct::macro_constancy(&ss.state, &mp)?.constancy;
        if finite.1 >= 1.0 && macro_c < 1.0 {
            found.push(w);
        }
        report.push(format!("ω0={w}: max C_N {:.4} (N={}), macro {macro_c:.3}", finite.1, finite.0));
    }
    Ok(verdict(!found.is_empty(), report.join("; ")))
}

fn main() {
    let checks: [(&str, Check); 13] = [
        ("dissipative closed form", dissipative_agreement),
        ("thermal fixed point", thermal_fixed_point),
        ("current proportionality", current_proportionality),
        ("efficiency and boundary", efficiency_and_boundary),
        ("scaling exponent", scaling_exponent),
        ("TUR violation and loss", tur_violation),
        ("variance oracles", variance_oracles),
        ("dissipative Jacobian", dissipative_jacobian),
        ("engine Jacobian gap", engine_gap),
        ("macroscopic constancy bound", macro_constancy_bound),
        ("exponential gain", gain_vs_spacing),
        ("correlations", correlations_track_power),
        ("finite-N constancy crossover", constancy_crossover),
    ];
    let only: Option<usize> = std::env::var("SPINPAIR_CRITERION").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in checks.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let t = Instant::now();
        let v = f().unwrap_or_else(|e| verdict(false, format!("error: {e}")));
        failed += usize::from(!v.pass);
        println!(
            "criterion {:>2} {}: {name}: {} [{:.1}s]",
            k + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failing");
    if failed > 0 && std::env::var("SPINPAIR_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
