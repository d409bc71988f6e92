use spinpair::liouville::{self, EngineParams, Scaling};
use spinpair::macrocumulant::{self as mc, TransientObservable};

fn main() -> spinpair::Result<()> {
    for n in 1..=4 {
        let p = EngineParams { n, ..EngineParams::from_temperatures(1.0, 2.0, 14.0, 10.0) };
        let l = liouville::build(&p)?;
        let modes = liouville::slowest_modes(&l, 3)?;
        println!("pair N={n}: gap {:.5e}, slowest {:?}", liouville::gap(&l, 2)?, &modes[1..]);
    }
    for n in [2, 6, 10] {
        let l = liouville::build_single(n, 1.0, 1.0, Scaling::HighTemperature, None)?;
        println!("single ensemble N={n}, βE=1: gap {:.5}", liouville::gap(&l, 2)?);
    }
    let j = mc::jacobian_dissipative(1.0, 1.0)?;
    println!("macroscopic Jacobian gap at βE=1: {:.5}", j.gap);
    let n = mc::transient_size(5.0, 1e-3, TransientObservable::Magnetization, 30)?;
    println!("βE=5: magnetization leaves its T=0 value beyond 1e-3 at N={n}");
    Ok(())
}
