//! Collective spin operators of one ensemble and of the pair space.

use spinpair::dicke::{build_single_ensemble_ops, pair_ops};

fn main() -> spinpair::Result<()> {
    let n = 4;
    let ops = build_single_ensemble_ops(n)?;
    let comm = ops.s_plus.matmul(&ops.s_minus).sub(&ops.s_minus.matmul(&ops.s_plus));
    let defect = comm.sub(&ops.s_z.scale(2.0.into())).max_abs();
    println!("N = {n}: dim {}, |[S+,S-] - 2Sz| = {defect:.1e}", ops.basis.dim());

    let pair = pair_ops(n)?;
    let cross = pair.s_plus[0].matmul(&pair.s_minus[1]).sub(&pair.s_minus[1].matmul(&pair.s_plus[0]));
    println!("pair dim {}, |[S1+, S2-]| = {:.1e}", pair.dim(), cross.max_abs());
    for i in 0..=n {
        print!("m={:+} ", ops.basis.m(i));
    }
    println!();
    Ok(())
}
