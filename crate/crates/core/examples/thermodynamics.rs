use spinpair::liouville::EngineParams;
use spinpair::thermo;

fn main() -> spinpair::Result<()> {
    // ΔE = 9, ΔT = 10
    for t_bar in [10.0, 11.0, 12.0] {
        for n in 1..=4 {
            let p = EngineParams { n, ..EngineParams::from_temperatures(1.0, 9.0, t_bar, 10.0) };
            let r = thermo::analyze(&p)?;
            println!(
                "T={t_bar:>4} N={n}  P={:+.4e}  Qc={:+.4e}  Qh={:+.4e}  Sdot={:.3e}  C={:?}  {}",
                r.power,
                r.q_cold,
                r.q_hot,
                r.entropy_rate,
                r.constancy,
                r.mode.as_str()
            );
        }
    }
    let engine = EngineParams::from_temperatures(1.0, 1.0, 11.0, 10.0);
    let r = thermo::analyze(&engine)?;
    println!("engine point: P/Qh = {:.12} (ΔE/E2 = {:.12})", r.power / r.q_hot, 1.0 / 2.0);
    Ok(())
}
