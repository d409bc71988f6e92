//! Small adaptive integrators: TR-BDF2 for the (stiff, linear, complex)
//! master equation and Dormand–Prince 5(4) for the moment equations.

use crate::error::{Error, Result};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10 }
    }
}

pub(crate) fn spmv(a: &SparseColMat<usize, c64>, x: &[c64], y: &mut [c64]) {
    y.iter_mut().for_each(|v| *v = c64::new(0.0, 0.0));
    let sym = a.symbolic();
    let vals = a.val();
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == c64::new(0.0, 0.0) {
            continue;
        }
        let r = sym.col_range(j);
        for (k, &i) in (r.clone()).zip(&sym.row_idx()[r]) {
            y[i] += vals[k] * xj;
        }
    }
}

fn shifted(a: &SparseColMat<usize, c64>, alpha: c64) -> Result<SparseColMat<usize, c64>> {
    // I - alpha * A
    let n = a.nrows();
    let sym = a.symbolic();
    let vals = a.val();
    let mut t = Vec::with_capacity(vals.len() + n);
    for j in 0..n {
        let r = sym.col_range(j);
        for (k, &i) in (r.clone()).zip(&sym.row_idx()[r]) {
            t.push(Triplet::new(i, j, -alpha * vals[k]));
        }
        t.push(Triplet::new(j, j, c64::new(1.0, 0.0)));
    }
    SparseColMat::try_new_from_triplets(n, n, &t)
        .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))
}

fn err_norm(e: &[c64], y0: &[c64], y1: &[c64], tol: Tolerances) -> f64 {
    let n = e.len().max(1) as f64;
    let s: f64 = e
        .iter()
        .zip(y0.iter().zip(y1))
        .map(|(ei, (a, b))| {
            let sc = tol.atol + tol.rtol * a.norm().max(b.norm());
            (ei.norm() / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

/// Integrates `dy/dt = A y` and returns `y` at every time in `t_grid`
/// (non-decreasing, starting at or after 0).
pub fn trbdf2_linear(
    a: &SparseColMat<usize, c64>,
    y0: &[c64],
    t_grid: &[f64],
    tol: Tolerances,
) -> Result<Vec<Vec<c64>>> {
    let n = a.nrows();
    assert_eq!(y0.len(), n);
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::invalid("time grid must be non-decreasing and start at t >= 0"));
    }
    let gamma = 2.0 - 2f64.sqrt();
    let d = gamma / 2.0;
    let w = 2f64.sqrt() / 4.0;
    let bh = [(1.0 - w) / 3.0, (3.0 * w + 1.0) / 3.0, d / 3.0];
    let b = [w, w, d];

    let scale = {
        let v = a.val();
        v.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300)
    };
    let t_end = t_grid.last().copied().unwrap_or(0.0);
    let mut h = (0.01 / scale).min(t_end.max(1e-300));
    let h_min = 1e-14 * t_end.max(1.0);

    let mut out = Vec::with_capacity(t_grid.len());
    let mut y = y0.to_vec();
    let mut t = 0.0;
    let mut f0 = vec![c64::new(0.0, 0.0); n];
    let mut fg = vec![c64::new(0.0, 0.0); n];
    let mut f1 = vec![c64::new(0.0, 0.0); n];
    let mut cached: Option<(f64, faer::sparse::linalg::solvers::Lu<usize, c64>)> = None;

    for &tg in t_grid {
        while t < tg {
            let mut hs = h.min(tg - t);
            let last = hs >= tg - t;
            if hs < h_min && !last {
                return Err(Error::Convergence {
                    what: format!("TR-BDF2 step size underflow at t={t:e}"),
                    residual: hs,
                });
            }
            if tg - t - hs < 1e-12 * hs {
                hs = tg - t;
            }
            let lu = match &cached {
                Some((hc, lu)) if *hc == hs => lu,
                _ => {
                    let m = shifted(a, c64::new(d * hs, 0.0))?;
                    let lu = m
                        .sp_lu()
                        .map_err(|e| Error::Numerical(format!("sparse LU failed: {e:?}")))?;
                    cached = Some((hs, lu));
                    &cached.as_ref().unwrap().1
                }
            };
            spmv(a, &y, &mut f0);
            let rhs = Mat::<c64>::from_fn(n, 1, |i, _| y[i] + f0[i] * (d * hs));
            let yg = lu.solve(&rhs);
            let yg: Vec<c64> = (0..n).map(|i| yg[(i, 0)]).collect();
            spmv(a, &yg, &mut fg);
            let rhs = Mat::<c64>::from_fn(n, 1, |i, _| y[i] + (f0[i] + fg[i]) * (w * hs));
            let y1 = lu.solve(&rhs);
            let y1: Vec<c64> = (0..n).map(|i| y1[(i, 0)]).collect();
            spmv(a, &y1, &mut f1);
            let e_raw = Mat::<c64>::from_fn(n, 1, |i, _| {
                (f0[i] * (bh[0] - b[0]) + fg[i] * (bh[1] - b[1]) + f1[i] * (bh[2] - b[2])) * hs
            });
            let e = lu.solve(&e_raw);
            let e: Vec<c64> = (0..n).map(|i| e[(i, 0)]).collect();
            let en = err_norm(&e, &y, &y1, tol);
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
            if en <= 1.0 {
                t = if last { tg } else { t + hs };
                y = y1;
                if !last || fac < 1.0 {
                    h = hs * fac;
                }
            } else {
                h = hs * fac;
                if h < h_min {
                    return Err(Error::Convergence {
                        what: format!("TR-BDF2 step size underflow at t={t:e}"),
                        residual: en,
                    });
                }
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Dormand–Prince 5(4) with standard PI-free step control.
pub struct Dopri5 {
    pub tol: Tolerances,
    pub h: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl Dopri5 {
    pub fn new(tol: Tolerances, h0: f64) -> Self {
        Dopri5 { tol, h: h0, h_min: 1e-14, max_steps: 10_000_000 }
    }

    /// Advances `y` from `t0` to `t1` in place.
    pub fn integrate<F>(&mut self, f: &F, t0: f64, t1: f64, y: &mut [f64]) -> Result<()>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let mut k = vec![vec![0.0; n]; 7];
        let mut tmp = vec![0.0; n];
        let mut t = t0;
        f(t, y, &mut k[0]);
        let mut steps = 0usize;
        while t < t1 {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::Convergence { what: "Dopri5 step budget".into(), residual: t1 - t });
            }
            let h = self.h.min(t1 - t);
            for s in 1..7 {
                for i in 0..n {
                    let mut acc = y[i];
                    for j in 0..s {
                        acc += h * A[s][j] * k[j][i];
                    }
                    tmp[i] = acc;
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                f(t + C[s] * h, &tmp, &mut tail[0]);
            }
            // tmp now holds the 5th-order solution (FSAL row)
            let mut err = 0.0;
            for i in 0..n {
                let mut e = 0.0;
                for s in 0..7 {
                    e += E[s] * k[s][i];
                }
                let sc = self.tol.atol + self.tol.rtol * y[i].abs().max(tmp[i].abs());
                err += (h * e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                t += h;
                y.copy_from_slice(&tmp);
                let k6 = k[6].clone();
                k[0].copy_from_slice(&k6);
                if h == self.h || fac < 1.0 {
                    self.h = h * fac;
                }
            } else {
                self.h = h * fac;
                if self.h < self.h_min {
                    return Err(Error::Convergence {
                        what: format!("Dopri5 step size underflow at t={t:e}"),
                        residual: err,
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dopri_exponential() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0];
            dy[1] = y[0] - 2.0 * y[1];
        };
        let mut y = [1.0, 0.0];
        let mut s = Dopri5::new(Tolerances { rtol: 1e-10, atol: 1e-12 }, 1e-3);
        s.integrate(&f, 0.0, 3.0, &mut y).unwrap();
        let e = (-3f64).exp();
        assert!((y[0] - e).abs() < 1e-9);
        assert!((y[1] - (e - (-6f64).exp())).abs() < 1e-9);
    }

    #[test]
    fn trbdf2_stiff_decay() {
        let t = vec![
            Triplet::new(0usize, 0usize, c64::new(-1000.0, 0.0)),
            Triplet::new(1, 1, c64::new(-0.5, 2.0)),
            Triplet::new(1, 0, c64::new(1.0, 0.0)),
        ];
        let a = SparseColMat::<usize, c64>::try_new_from_triplets(2, 2, &t).unwrap();
        let y0 = [c64::new(1.0, 0.0), c64::new(1.0, 0.0)];
        let out = trbdf2_linear(&a, &y0, &[0.0, 1.0, 2.0], Tolerances { rtol: 1e-9, atol: 1e-12 })
            .unwrap();
        assert_eq!(out[0], y0.to_vec());
        // y1 ≈ exp(λ t) + small transient from y0 coupling
        let lam = c64::new(-0.5, 2.0);
        let k = c64::new(1.0, 0.0) / (c64::new(-1000.0, 0.0) - lam);
        let exact = |t: f64| (lam * t).exp() * (c64::new(1.0, 0.0) - k) + k * (-1000.0 * t).exp();
        assert!((out[2][1] - exact(2.0)).norm() < 1e-6);
    }
}
