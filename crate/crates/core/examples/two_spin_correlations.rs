use spinpair::correlations as corr;
use spinpair::macrocumulant::{macro_steady_state_default, MacroParams};

fn main() -> spinpair::Result<()> {
    for de in [1.0, 5.0, 10.0, 20.0] {
        let t_bar = 14.0;
        let (t1, t2) = (t_bar - 10.0, t_bar + 10.0);
        let p = MacroParams { e1: 1.0, e2: 1.0 + de, omega0: 0.006, gamma0: 0.001, beta1e1: 1.0 / t1, beta2e2: (1.0 + de) / t2 };
        let ss = macro_steady_state_default(&p)?;
        let rho = corr::reduced_two_spin_state(&ss.state)?;
        println!(
            "ΔE={de:>4}: I = {:.3e} nats, concurrence = {:.1e}, clipped = {}",
            corr::mutual_information(&rho)?,
            corr::concurrence(&rho)?,
            rho.clip_applied
        );
    }
    Ok(())
}
