//! Macroscopic engine: fixed point of the closed moment equations, power
//! per pair and Jacobian gap along a temperature sweep.

use spinpair::macrocumulant::{self as mc, MacroParams};
use spinpair::thermo;

fn main() -> spinpair::Result<()> {
    let (e1, dt, de) = (1.0, 20.0, 5.0);
    println!("boundary at T̄* = {:.3}", thermo::t_bar_star(e1, de, dt));
    for k in 0..8 {
        let t_bar = 11.0 + 4.0 * k as f64;
        let (t1, t2) = (t_bar - dt / 2.0, t_bar + dt / 2.0);
        let p = MacroParams { e1, e2: e1 + de, omega0: 0.006, gamma0: 0.001, beta1e1: e1 / t1, beta2e2: (e1 + de) / t2 };
        let ss = mc::macro_steady_state_default(&p)?;
        let g = mc::jacobian_gap_at(&ss.state, &p)?;
        println!(
            "T̄={t_bar:>5}  P={:+.4e}  z1={:+.5}  z2={:+.5}  gap={:.4e}  casimir-1={:.1e}",
            mc::macro_power(&ss.state, &p),
            ss.state.first(0, mc::Z),
            ss.state.first(1, mc::Z),
            g.gap,
            ss.state.casimir(0) - 1.0
        );
    }
    Ok(())
}
