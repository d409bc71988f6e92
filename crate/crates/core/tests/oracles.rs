//! Independent reference computations against the library.

use faer::{c64, Mat};
use spinpair::correlations;
use spinpair::dicke::pair_ops;
use spinpair::liouville::{self, EngineParams, Scaling, SteadyMethod};
use spinpair::macrocumulant::{self as mc, MacroParams, X, Y, Z};
use spinpair::ode::Tolerances;
use spinpair::thermo;

fn c(re: f64) -> c64 {
    c64::new(re, 0.0)
}

fn kron(a: &Mat<c64>, b: &Mat<c64>) -> Mat<c64> {
    let (ra, ca) = (a.nrows(), a.ncols());
    let (rb, cb) = (b.nrows(), b.ncols());
    Mat::from_fn(ra * rb, ca * cb, |r, k| a[(r / rb, k / cb)] * b[(r % rb, k % cb)])
}

fn reference(n: usize) -> EngineParams {
    EngineParams { n, ..EngineParams::from_temperatures(1.0, 9.0, 11.0, 10.0) }
}

/// One spin from each ensemble, read off the explicit 4-qubit state at
/// N = 2, against the collective moments.
#[test]
fn single_spin_correlations_equal_collective_moments_at_n2() {
    let p = reference(2);
    let (_, ss) = liouville::solve_pair(&p).unwrap();
    let ops = pair_ops(2).unwrap();

    // |+1> = |uu>, |0> = (|ud> + |du>)/√2, |-1> = |dd>; qubit order u = 0
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = Mat::<c64>::zeros(4, 3);
    v[(0, 0)] = c(1.0);
    v[(1, 1)] = c(h);
    v[(2, 1)] = c(h);
    v[(3, 2)] = c(1.0);
    let vv = kron(&v, &v);
    let rho_q = &vv * &ss.rho * vv.adjoint();

    let id = Mat::<c64>::identity(2, 2);
    let sx = Mat::from_fn(2, 2, |a, b| if a != b { c(1.0) } else { c(0.0) });
    let sy = Mat::from_fn(2, 2, |a, b| match (a, b) {
        (0, 1) => c64::new(0.0, -1.0),
        (1, 0) => c64::new(0.0, 1.0),
        _ => c(0.0),
    });
    let sz = Mat::from_fn(2, 2, |a, b| match (a, b) {
        (0, 0) => c(1.0),
        (1, 1) => c(-1.0),
        _ => c(0.0),
    });
    let pauli = [sx, sy, sz];
    // qubits: ensemble 1 = (0, 1), ensemble 2 = (2, 3)
    let on = |a: &Mat<c64>, b: &Mat<c64>| kron(&kron(&kron(a, &id), b), &id);
    let tr = |m: &Mat<c64>| -> f64 { (0..16).map(|k| (&rho_q * m)[(k, k)]).sum::<c64>().re };

    let sp = [ops.s_plus[0].to_dense(), ops.s_plus[1].to_dense()];
    let sm = [ops.s_minus[0].to_dense(), ops.s_minus[1].to_dense()];
    let szc = [ops.s_z[0].to_dense(), ops.s_z[1].to_dense()];
    let coll = |l: usize, a: usize| -> Mat<c64> {
        match a {
            X => Mat::from_fn(9, 9, |i, j| (sp[l][(i, j)] + sm[l][(i, j)]) * c(0.5)),
            Y => Mat::from_fn(9, 9, |i, j| (sp[l][(i, j)] - sm[l][(i, j)]) * c64::new(0.0, -0.5)),
            _ => szc[l].clone(),
        }
    };
    let s = 1.0;
    let mut checked = 0;
    for a in [X, Y, Z] {
        for b in [X, Y, Z] {
            let spin = tr(&on(&pauli[a], &pauli[b]));
            let m = &coll(0, a) * &coll(1, b);
            let moment = (0..9).map(|k| (&ss.rho * &m)[(k, k)]).sum::<c64>().re / (s * s);
            assert!((spin - moment).abs() < 1e-12, "{a}{b}: {spin} vs {moment}");
            checked += 1;
        }
        let single = tr(&on(&pauli[a], &id));
        let mean = (0..9).map(|k| (&ss.rho * &coll(0, a))[(k, k)]).sum::<c64>().re / s;
        assert!((single - mean).abs() < 1e-12);
    }
    assert_eq!(checked, 9);
    // the driven state has nonzero transverse correlations to compare
    let xy = tr(&on(&pauli[X], &pauli[Y]));
    assert!(xy.abs() > 1e-8, "{xy}");
}

#[test]
fn long_time_evolution_reaches_steady_state() {
    let p = reference(2);
    let (l, ss) = liouville::solve_pair(&p).unwrap();
    let full = liouville::build(&p).unwrap();
    let gap = liouville::gap(&full, 2).unwrap();
    let d = ss.rho.nrows();
    // ground state of both ensembles
    let mut rho0 = Mat::<c64>::zeros(d, d);
    rho0[(d - 1, d - 1)] = c(1.0);
    let t_end = 40.0 / gap;
    let traj = liouville::evolve(&l, &rho0, &[0.0, t_end], Tolerances { rtol: 1e-10, atol: 1e-13 }).unwrap();
    let last = traj.last().unwrap();
    let tr: c64 = (0..d).map(|k| last[(k, k)]).sum();
    assert!((tr.re - 1.0).abs() < 1e-8);
    assert!(liouville::trace_distance(last, &ss.rho) < 1e-6);
}

#[test]
fn undriven_macro_engine_decouples() {
    let p = MacroParams { e1: 1.0, e2: 3.0, omega0: 0.0, gamma0: 0.001, beta1e1: 1.0 / 4.0, beta2e2: 3.0 / 24.0 };
    let ss = mc::macro_steady_state_default(&p).unwrap();
    for (l, b) in [(0, p.beta1e1), (1, p.beta2e2)] {
        let (z, zz) = (ss.state.first(l, Z), ss.state.same(l, Z, Z));
        let (dz, _) = mc::dissipative_rhs(z, zz, b, p.gamma0);
        assert!(dz.abs() < 1e-12 * p.gamma0, "{dz}");
        assert!(ss.state.first(l, X).abs() < 1e-12 && ss.state.first(l, Y).abs() < 1e-12);
    }
    assert_eq!(mc::macro_power(&ss.state, &p), 0.0);
    // transverse moments relax slower than either longitudinal block
    let g = mc::jacobian_gap_at(&ss.state, &p).unwrap();
    let z_gap = [p.beta1e1, p.beta2e2]
        .iter()
        .map(|&b| mc::jacobian_dissipative(b, p.gamma0).unwrap().gap)
        .fold(f64::INFINITY, f64::min);
    assert!(g.stable && g.gap > 0.0 && g.gap < z_gap, "{} vs {z_gap}", g.gap);
}

#[test]
fn thermal_ladder_for_every_small_n() {
    for n in 1..=6 {
        let p = EngineParams { omega0: 0.0, n, ..EngineParams::from_temperatures(1.0, 1.5, 3.0, 2.0) };
        let l = liouville::build_sector(&p, Some(0)).unwrap();
        let ss = liouville::steady_state(&l, SteadyMethod::DenseNullSpace).unwrap();
        let (w1, w2) = (liouville::thermal_ladder(n, p.beta1 * p.e1), liouville::thermal_ladder(n, p.beta2 * p.e2));
        let d = n + 1;
        for a in 0..d {
            for b in 0..d {
                let k = a * d + b;
                assert!((ss.rho[(k, k)].re - w1[a] * w2[b]).abs() < 1e-12, "N={n}");
            }
        }
    }
}

#[test]
fn both_correlation_orderings_agree() {
    // ⟨P(t)P(0)⟩ and ⟨P(0)P(t)⟩ give the same variance at N = 1
    let p = EngineParams { e2: 3.0, ..reference(1) };
    let (l, ss) = liouville::solve_pair(&p).unwrap();
    let v = thermo::power_variance(&l, &ss).unwrap();
    let g = liouville::gap(&l, 2).unwrap();
    let q = thermo::power_variance_quadrature(&l, &ss, 40.0 / g, 4000, 1e-9).unwrap();
    assert!((v - q).abs() < 1e-2 * v);
}

#[test]
fn macro_tomography_is_separable() {
    let (t1, t2) = (4.0, 24.0);
    let p = MacroParams { e1: 1.0, e2: 6.0, omega0: 0.006, gamma0: 0.001, beta1e1: 1.0 / t1, beta2e2: 6.0 / t2 };
    let ss = mc::macro_steady_state_default(&p).unwrap();
    let rho = correlations::reduced_two_spin_state(&ss.state).unwrap();
    let c = correlations::measure(&rho.rho12);
    let want = correlations::pauli_coefficients(&ss.state);
    if !rho.clip_applied {
        for a in 0..4 {
            for b in 0..4 {
                assert!((c[a][b] - want[a][b]).abs() < 1e-10);
            }
        }
    }
    assert!(correlations::concurrence(&rho).unwrap() <= 1e-10);
}

#[test]
fn high_temperature_scaling_is_parameter_rescaling() {
    let base = EngineParams { n: 3, ..reference(3) };
    let scaled = EngineParams { scaling: Scaling::HighTemperature, ..base };
    let manual = EngineParams {
        omega0: base.omega0 / 3.0,
        gamma0: base.gamma0 / 3.0,
        beta1: base.beta1 / 3.0,
        beta2: base.beta2 / 3.0,
        ..base
    };
    let a = thermo::analyze(&scaled).unwrap();
    let b = thermo::analyze(&manual).unwrap();
    assert!((a.power - b.power).abs() <= 1e-12 * b.power.abs());
}
