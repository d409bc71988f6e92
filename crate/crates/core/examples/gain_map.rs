//! Collective gain P_N/(N P_1) against ΔE, macroscopic and at finite N.

use spinpair::liouville::{EngineParams, Scaling};
use spinpair::macrocumulant::MacroParams;
use spinpair::studies;

fn main() -> spinpair::Result<()> {
    let des = studies::linspace(1.0, 9.0, 9);
    let mut logs = Vec::new();
    for &de in &des {
        let e = EngineParams { e1: 1.0, e2: 1.0 + de, omega0: 0.006, gamma0: 0.001, beta1: 50.0, beta2: 1e-2, n: 1, scaling: Scaling::None };
        let g = studies::gain_ratio(&MacroParams::from_engine(&e))?;
        let f = studies::finite_gain(&e, 8)?;
        println!("ΔE={de}: macro gain {:.4e}, N=8 gain {f:.4e}", g.gain);
        logs.push(g.gain.log10());
    }
    let fit = studies::linear_regression(&des, &logs)?;
    println!("log10 gain vs ΔE: slope {:.4}, R² {:.5}", fit.slope, fit.r_squared);
    Ok(())
}
