//! Single-pair power over (ΔE, T̄) with the closed-form boundary.

use spinpair::liouville::Scaling;
use spinpair::macrocumulant::SteadyOptions;
use spinpair::studies::{self, Backend, Template};

fn main() -> spinpair::Result<()> {
    let tpl = Template::omega0_units();
    let de = studies::linspace(25.0, 250.0, 10);
    let tb = studies::linspace(60.0, 300.0, 12);
    let grid = studies::scan(&tpl, &de, &tb, Backend::Exact, 1, Scaling::None, SteadyOptions::default())?;
    let col = grid.column("power").unwrap();
    for (i, d) in de.iter().enumerate() {
        let row: String = (0..tb.len())
            .map(|j| match grid.value(i, j, col) {
                Some(p) if p > 0.0 => '+',
                Some(p) if p < 0.0 => '-',
                Some(_) => '0',
                None => '?',
            })
            .collect();
        println!("ΔE={d:>6.1} {row}");
    }
    for (d, flip) in studies::boundary_sign_flips(&grid) {
        println!("ΔE={d:>6.1} flips at ΔE*: {flip:?}");
    }
    Ok(())
}
