use spinpair::macrocumulant as mc;

fn main() -> spinpair::Result<()> {
    let g0 = 1.0;
    println!("{:>6} {:>12} {:>12} {:>12} {:>10} {:>10}", "βE", "mz", "mz2", "mx2", "|ode-cf|", "gap/Γ0");
    for b in [0.02, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 50.0] {
        let a = mc::dissipative_ss_analytic(b)?;
        let o = mc::dissipative_ode_steady_state(b, g0)?;
        let j = mc::jacobian_dissipative(b, g0)?;
        let d = (a.mz - o.mz).abs().max((a.mz2 - o.mz2).abs());
        println!("{b:>6} {:>12.8} {:>12.8} {:>12.8} {d:>10.1e} {:>10.5}", a.mz, a.mz2, a.mx2, j.gap / g0);
    }
    // small βE: gap ≈ 2Γ0/βE
    let j = mc::jacobian_dissipative(0.02, g0)?;
    println!("βE=0.02: gap·βE/(2Γ0) = {:.4}", j.gap * 0.02 / 2.0);
    Ok(())
}
