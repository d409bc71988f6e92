//! Exact steady state of the undriven pair against the Gibbs ladder.

use spinpair::liouville::{self, EngineParams, SteadyMethod};

fn main() -> spinpair::Result<()> {
    let p = EngineParams { omega0: 0.0, n: 3, ..EngineParams::from_temperatures(1.0, 2.0, 4.0, 2.0) };
    let l = liouville::build_sector(&p, Some(0))?;
    let ss = liouville::steady_state(&l, SteadyMethod::DenseNullSpace)?;
    println!("sector dim {}, residual {:.2e}", l.dim(), ss.residual);

    let d = p.n + 1;
    let w1 = liouville::thermal_ladder(p.n, p.beta1 * p.e1);
    let w2 = liouville::thermal_ladder(p.n, p.beta2 * p.e2);
    let mut worst: f64 = 0.0;
    for a in 0..d {
        for b in 0..d {
            let k = a * d + b;
            worst = worst.max((ss.rho[(k, k)].re - w1[a] * w2[b]).abs());
        }
    }
    println!("max |rho_kk - p1 p2| = {worst:.2e}");

    let big = EngineParams { omega0: 1.0, gamma0: 1.0, e1: 100.0, e2: 225.0, n: 12, beta1: 1.0 / 100.0, beta2: 1.0 / 200.0, ..p };
    let (l, ss) = liouville::solve_pair(&big)?;
    println!("N = 12 driven: sector dim {}, residual {:.2e}, clipped {}", l.dim(), ss.residual, ss.clipped);
    Ok(())
}
