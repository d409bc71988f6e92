//! Power variance from the resolvent and from time integration of the
//! power autocorrelation.

use spinpair::liouville::{self, EngineParams};
use spinpair::macrocumulant::{macro_steady_state_default, MacroParams};
use spinpair::{macrofluct, thermo};

fn main() -> spinpair::Result<()> {
    for n in [1, 2] {
        let p = EngineParams { n, e2: 3.0, ..EngineParams::from_temperatures(1.0, 2.0, 6.0, 10.0) };
        let (l, ss) = liouville::solve_pair(&p)?;
        let var = thermo::power_variance(&l, &ss)?;
        let gap = liouville::gap(&l, 2)?;
        let quad = thermo::power_variance_quadrature(&l, &ss, 40.0 / gap, 4000, 1e-9)?;
        println!("N={n}: resolvent {var:.6e}, quadrature {quad:.6e}, rel diff {:.1e}", (var - quad).abs() / var);
    }

    let m = MacroParams { e1: 1.0, e2: 3.0, omega0: 0.006, gamma0: 0.001, beta1e1: 1.0 / 4.0, beta2e2: 3.0 / 24.0 };
    let ss = macro_steady_state_default(&m)?;
    let c = macrofluct::macro_constancy(&ss.state, &m)?;
    println!("macro: P={:.4e} Var={:.4e} C={:.4}", c.power, c.variance, c.constancy);
    Ok(())
}
