//! Interaction-picture GKLS generator for the two-ensemble engine.
//!
//! Density matrices are vectorized by column stacking: matrix unit
//! `|a⟩⟨b|` sits at position `a + b*d`, so `X ↦ A X B` is `Bᵀ ⊗ A`.
//! The generator conserves `q = exc(a) - exc(b)` (total excitation
//! difference), which lets us assemble it on one `q` sector at a time.

use crate::dicke::{self, CollectiveOps, SparseOp};
use crate::error::{Error, Result};
use crate::ode::{self, Tolerances};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{c64, Mat, Side};
use serde::{Deserialize, Serialize};

const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
const ONE: c64 = c64 { re: 1.0, im: 0.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    None,
    HighTemperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineParams {
    pub e1: f64,
    pub e2: f64,
    pub omega0: f64,
    pub gamma0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub n: usize,
    pub scaling: Scaling,
}

/// Parameters after the optional high-temperature rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Effective {
    pub omega0: f64,
    pub gamma0: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl EngineParams {
    /// Every violated constraint, in a fixed order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let fin = |x: f64| x.is_finite();
        if !(fin(self.e1) && self.e1 > 0.0) {
            v.push("E1 must be > 0".to_string());
        }
        if !(fin(self.e2) && self.e2 >= self.e1) {
            v.push("E2 must be ≥ E1".to_string());
        }
        if !(fin(self.omega0) && self.omega0 >= 0.0) {
            v.push("omega0 must be ≥ 0".to_string());
        }
        if !(fin(self.gamma0) && self.gamma0 > 0.0) {
            v.push("gamma0 must be > 0".to_string());
        }
        if !(fin(self.beta2) && self.beta2 > 0.0) {
            v.push("beta2 must be > 0".to_string());
        }
        if !(fin(self.beta1) && self.beta1 >= self.beta2) {
            v.push("beta1 must be ≥ beta2".to_string());
        }
        if self.n == 0 {
            v.push("N must be ≥ 1".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    pub fn delta_e(&self) -> f64 {
        self.e2 - self.e1
    }

    pub fn effective(&self) -> Effective {
        let k = match self.scaling {
            Scaling::None => 1.0,
            Scaling::HighTemperature => self.n as f64,
        };
        Effective {
            omega0: self.omega0 / k,
            gamma0: self.gamma0 / k,
            beta1: self.beta1 / k,
            beta2: self.beta2 / k,
        }
    }

    pub fn with_n(&self, n: usize) -> Self {
        EngineParams { n, ..*self }
    }

    /// Parameters from (ΔE, T̄, ΔT) with fixed E1.
    pub fn from_temperatures(e1: f64, delta_e: f64, t_bar: f64, delta_t: f64) -> Self {
        let t1 = t_bar - delta_t / 2.0;
        let t2 = t_bar + delta_t / 2.0;
        EngineParams {
            e1,
            e2: e1 + delta_e,
            omega0: 0.006,
            gamma0: 0.001,
            beta1: 1.0 / t1,
            beta2: 1.0 / t2,
            n: 1,
            scaling: Scaling::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub gamma_up: f64,
    pub gamma_down: f64,
    pub n_th: f64,
}

/// Bosonic rates for a bath at inverse temperature β acting on spacing E.
pub fn thermal_rates(gamma0: f64, beta_e: f64) -> Result<Rates> {
    if !(beta_e > 0.0) {
        return Err(Error::invalid(format!("βE must be > 0, got {beta_e}")));
    }
    if beta_e.is_infinite() {
        return Ok(Rates { gamma_up: 0.0, gamma_down: gamma0, n_th: 0.0 });
    }
    let n_th = 1.0 / beta_e.exp_m1();
    Ok(Rates { gamma_up: gamma0 * n_th, gamma_down: gamma0 * (n_th + 1.0), n_th })
}

/// Rates of ensemble `i` (1 or 2), using the effective (scaled) parameters.
pub fn rates(params: &EngineParams, i: usize) -> Result<Rates> {
    let eff = params.effective();
    match i {
        1 => thermal_rates(eff.gamma0, eff.beta1 * params.e1),
        2 => thermal_rates(eff.gamma0, eff.beta2 * params.e2),
        _ => Err(Error::invalid(format!("ensemble index must be 1 or 2, got {i}"))),
    }
}

/// Hamiltonian and jump operators on a Hilbert space with a U(1) charge.
#[derive(Debug, Clone)]
pub struct Generator {
    pub hamiltonian: SparseOp,
    pub jumps: Vec<SparseOp>,
    pub excitations: Vec<usize>,
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    fn max_charge(&self) -> i64 {
        self.excitations.iter().copied().max().unwrap_or(0) as i64
    }
}

/// Which physical system a generator describes.
#[derive(Debug, Clone)]
pub enum System {
    Pair { params: EngineParams, ops: CollectiveOps },
    /// One ensemble coupled to one bath (ω₀ = 0 benchmarks).
    Single { n: usize, beta_e: f64, gamma0: f64, scaling: Scaling },
}

/// Basis of matrix units the superoperator acts on.
#[derive(Debug, Clone)]
pub struct Units {
    pub d: usize,
    pub sector: Option<i64>,
    pub list: Vec<(usize, usize)>,
    index: Vec<u32>,
}

impl Units {
    fn new(gen: &Generator, sector: Option<i64>, max_units: usize) -> Result<Self> {
        let d = gen.dim();
        let d2 = d.checked_mul(d).ok_or_else(|| Error::Resource("dimension overflow".into()))?;
        if d2 > 60_000_000 {
            return Err(Error::Resource(format!("Hilbert dimension {d} too large for unit index")));
        }
        let mut list = Vec::new();
        for b in 0..d {
            for a in 0..d {
                let q = gen.excitations[a] as i64 - gen.excitations[b] as i64;
                if sector.is_none_or(|s| s == q) {
                    list.push((a, b));
                }
            }
        }
        if list.len() > max_units {
            return Err(Error::Resource(format!(
                "superoperator dimension {} exceeds cap {max_units}",
                list.len()
            )));
        }
        let mut index = vec![u32::MAX; d2];
        for (k, &(a, b)) in list.iter().enumerate() {
            index[a + b * d] = k as u32;
        }
        Ok(Units { d, sector, list, index })
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn find(&self, a: usize, b: usize) -> Option<usize> {
        let k = self.index[a + b * self.d];
        (k != u32::MAX).then_some(k as usize)
    }

    /// Coordinates of a dense matrix in this basis; also returns the
    /// largest entry left outside.
    pub fn gather(&self, m: &Mat<c64>) -> (Vec<c64>, f64) {
        let v = self.list.iter().map(|&(a, b)| m[(a, b)]).collect();
        let mut outside: f64 = 0.0;
        if self.sector.is_some() {
            for b in 0..self.d {
                for a in 0..self.d {
                    if self.find(a, b).is_none() {
                        outside = outside.max(m[(a, b)].norm());
                    }
                }
            }
        }
        (v, outside)
    }

    pub fn scatter(&self, v: &[c64]) -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(self.d, self.d);
        for (&(a, b), &x) in self.list.iter().zip(v) {
            m[(a, b)] = x;
        }
        m
    }

    pub fn trace(&self, v: &[c64]) -> c64 {
        self.list.iter().zip(v).filter(|((a, b), _)| a == b).map(|(_, x)| *x).sum()
    }
}

/// Default cap on the number of matrix units of one superoperator.
pub const DEFAULT_MAX_UNITS: usize = 400_000;

#[derive(Debug, Clone)]
pub struct Liouvillian {
    pub matrix: SparseColMat<usize, c64>,
    pub units: Units,
    pub generator: Generator,
    pub system: System,
}

pub fn pair_generator(params: &EngineParams) -> Result<(Generator, CollectiveOps)> {
    params.validate()?;
    let ops = dicke::pair_ops(params.n)?;
    let eff = params.effective();
    let v = ops.s_minus[0]
        .matmul(&ops.s_plus[1])
        .add(&ops.s_plus[0].matmul(&ops.s_minus[1]))
        .scale(c64::new(eff.omega0 / 2.0, 0.0));
    let r1 = rates(params, 1)?;
    let r2 = rates(params, 2)?;
    let mut jumps = Vec::new();
    for (r, i) in [(r1, 0), (r2, 1)] {
        jumps.push(ops.s_minus[i].scale(c64::new(r.gamma_down.sqrt(), 0.0)));
        if r.gamma_up > 0.0 {
            jumps.push(ops.s_plus[i].scale(c64::new(r.gamma_up.sqrt(), 0.0)));
        }
    }
    let excitations = (0..ops.dim()).map(|a| ops.excitations(a)).collect();
    Ok((Generator { hamiltonian: v, jumps, excitations }, ops))
}

pub fn single_generator(n: usize, beta_e: f64, gamma0: f64, scaling: Scaling) -> Result<Generator> {
    let o = dicke::build_single_ensemble_ops(n)?;
    let k = match scaling {
        Scaling::None => 1.0,
        Scaling::HighTemperature => n as f64,
    };
    if !(gamma0 > 0.0) {
        return Err(Error::invalid("gamma0 must be > 0"));
    }
    let r = thermal_rates(gamma0 / k, beta_e / k)?;
    let mut jumps = vec![o.s_minus.scale(c64::new(r.gamma_down.sqrt(), 0.0))];
    if r.gamma_up > 0.0 {
        jumps.push(o.s_plus.scale(c64::new(r.gamma_up.sqrt(), 0.0)));
    }
    let excitations = (0..=n).map(|i| o.basis.excitations(i)).collect();
    Ok(Generator { hamiltonian: SparseOp::zeros(n + 1), jumps, excitations })
}

fn assemble(gen: &Generator, units: &Units) -> Result<SparseColMat<usize, c64>> {
    let h = &gen.hamiltonian;
    let ks: Vec<SparseOp> = gen.jumps.iter().map(|j| j.adjoint().matmul(j)).collect();
    let k = ks.iter().fold(SparseOp::zeros(gen.dim()), |acc, x| acc.add(x));
    let mi = c64::new(0.0, -1.0);
    let mut trip: Vec<Triplet<usize, usize, c64>> = Vec::new();
    for (col, &(a, b)) in units.list.iter().enumerate() {
        let mut push = |c: usize, d: usize, v: c64| -> Result<()> {
            let row = units.find(c, d).ok_or_else(|| {
                Error::Symmetry(format!("unit ({a},{b}) couples outside sector to ({c},{d})"))
            })?;
            trip.push(Triplet::new(row, col, v));
            Ok(())
        };
        for &(c, hv) in h.col(a) {
            push(c, b, mi * hv)?;
        }
        for &(dd, hv) in h.col(b) {
            push(a, dd, -mi * hv.conj())?;
        }
        for j in &gen.jumps {
            for &(c, ja) in j.col(a) {
                for &(dd, jb) in j.col(b) {
                    push(c, dd, ja * jb.conj())?;
                }
            }
        }
        for &(c, kv) in k.col(a) {
            push(c, b, kv * -0.5)?;
        }
        for &(dd, kv) in k.col(b) {
            push(a, dd, kv.conj() * -0.5)?;
        }
    }
    SparseColMat::try_new_from_triplets(units.len(), units.len(), &trip)
        .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))
}

impl Liouvillian {
    pub fn from_generator(gen: Generator, system: System, sector: Option<i64>, max_units: usize) -> Result<Self> {
        let h = &gen.hamiltonian;
        if h.sub(&h.adjoint()).max_abs() > 1e-14 * h.max_abs().max(1.0) {
            return Err(Error::Numerical("Hamiltonian is not Hermitian".into()));
        }
        let units = Units::new(&gen, sector, max_units)?;
        let matrix = assemble(&gen, &units)?;
        Ok(Liouvillian { matrix, units, generator: gen, system })
    }

    /// Same system, restricted to charge sector `q` (`None` = full space).
    pub fn with_sector(&self, q: Option<i64>, max_units: usize) -> Result<Self> {
        Self::from_generator(self.generator.clone(), self.system.clone(), q, max_units)
    }

    pub fn dim(&self) -> usize {
        self.units.len()
    }

    pub fn hilbert_dim(&self) -> usize {
        self.units.d
    }

    pub fn pair_params(&self) -> Option<&EngineParams> {
        match &self.system {
            System::Pair { params, .. } => Some(params),
            System::Single { .. } => None,
        }
    }

    pub fn pair_ops(&self) -> Option<&CollectiveOps> {
        match &self.system {
            System::Pair { ops, .. } => Some(ops),
            System::Single { .. } => None,
        }
    }

    pub fn apply(&self, v: &[c64]) -> Vec<c64> {
        let mut y = vec![ZERO; self.dim()];
        ode::spmv(&self.matrix, v, &mut y);
        y
    }

    /// Largest |entry| of `trᵀ L`; zero for a trace-preserving generator.
    pub fn trace_defect(&self) -> f64 {
        let sym = self.matrix.symbolic();
        let vals = self.matrix.val();
        let mut worst: f64 = 0.0;
        for j in 0..self.dim() {
            let r = sym.col_range(j);
            let mut acc = ZERO;
            for (k, &i) in (r.clone()).zip(&sym.row_idx()[r]) {
                let (a, b) = self.units.list[i];
                if a == b {
                    acc += vals[k];
                }
            }
            worst = worst.max(acc.norm());
        }
        worst
    }

    pub fn max_entry(&self) -> f64 {
        self.matrix.val().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Mat<c64> {
        self.matrix.to_dense()
    }

    /// `L` with the row of the first diagonal unit replaced by the trace
    /// functional. Nonsingular when the kernel of `L` is one-dimensional.
    pub fn bordered(&self) -> Result<(SparseColMat<usize, c64>, usize)> {
        let r = self
            .units
            .list
            .iter()
            .position(|(a, b)| a == b)
            .ok_or_else(|| Error::invalid("sector contains no diagonal units"))?;
        let sym = self.matrix.symbolic();
        let vals = self.matrix.val();
        let mut t = Vec::with_capacity(vals.len() + self.units.d);
        for j in 0..self.dim() {
            let rg = sym.col_range(j);
            for (k, &i) in (rg.clone()).zip(&sym.row_idx()[rg]) {
                if i != r {
                    t.push(Triplet::new(i, j, vals[k]));
                }
            }
            let (a, b) = self.units.list[j];
            if a == b {
                t.push(Triplet::new(r, j, ONE));
            }
        }
        let m = SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &t)
            .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))?;
        Ok((m, r))
    }

    /// Solves `L x = rhs` subject to `Tr x = 0`; `rhs` must be traceless.
    pub fn solve_traceless(&self, rhs: &[c64]) -> Result<Vec<c64>> {
        let tr = self.units.trace(rhs);
        let scale = rhs.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tr.norm() > 1e-9 * scale.max(1e-300) {
            return Err(Error::Numerical(format!("right-hand side not traceless ({tr})")));
        }
        let (m, r) = self.bordered()?;
        let lu = m
            .sp_lu()
            .map_err(|_| Error::Convergence { what: "bordered LU (gap ≈ 0?)".into(), residual: f64::NAN })?;
        let b = Mat::<c64>::from_fn(self.dim(), 1, |i, _| if i == r { ZERO } else { rhs[i] });
        let x = lu.solve(&b);
        let x: Vec<c64> = (0..self.dim()).map(|i| x[(i, 0)]).collect();
        if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Convergence { what: "bordered solve".into(), residual: f64::INFINITY });
        }
        Ok(x)
    }
}

/// Builds the pair generator on the full space (`sector = None`) or on
/// one charge sector.
pub fn build_sector(params: &EngineParams, sector: Option<i64>) -> Result<Liouvillian> {
    let (gen, ops) = pair_generator(params)?;
    Liouvillian::from_generator(gen, System::Pair { params: *params, ops }, sector, DEFAULT_MAX_UNITS)
}

pub fn build(params: &EngineParams) -> Result<Liouvillian> {
    build_sector(params, None)
}

pub fn build_single(n: usize, beta_e: f64, gamma0: f64, scaling: Scaling, sector: Option<i64>) -> Result<Liouvillian> {
    let gen = single_generator(n, beta_e, gamma0, scaling)?;
    Liouvillian::from_generator(gen, System::Single { n, beta_e, gamma0, scaling }, sector, DEFAULT_MAX_UNITS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteadyMethod {
    DenseNullSpace,
    SparseShiftInvert,
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub rho: Mat<c64>,
    /// Coordinates in the unit basis of the generator that produced it.
    pub vec: Vec<c64>,
    pub residual: f64,
    pub min_eigenvalue: f64,
    pub clipped: bool,
    pub warnings: Vec<String>,
}

impl SteadyState {
    pub fn expect(&self, op: &SparseOp) -> c64 {
        op.expect(&self.rho)
    }
}

/// Scale-aware residual bound: 1e-10 for generators with O(1) entries.
pub fn residual_tolerance(l: &Liouvillian) -> f64 {
    1e-10 * l.max_entry().max(1.0)
}

fn dense_null(l: &Liouvillian) -> Result<Vec<c64>> {
    if l.dim() > 4000 {
        return Err(Error::Resource(format!("dense null space limited to dimension 4000, got {}", l.dim())));
    }
    let m = l.to_dense();
    let svd = m.svd().map_err(|e| Error::Convergence { what: format!("SVD: {e:?}"), residual: f64::NAN })?;
    let s = svd.S().column_vector();
    let n = l.dim();
    let smax = s[0].re;
    if n >= 2 && s[n - 2].re <= 1e-11 * smax {
        let dim = (0..n).filter(|&i| s[i].re <= 1e-11 * smax).count();
        return Err(Error::Degenerate { dim });
    }
    let v = svd.V();
    Ok((0..n).map(|i| v[(i, n - 1)]).collect())
}

fn shift_invert(l: &Liouvillian, tol: f64) -> Result<Vec<c64>> {
    let n = l.dim();
    let sigma = 1e-9 * l.max_entry().max(1e-300);
    let sym = l.matrix.symbolic();
    let vals = l.matrix.val();
    let mut t = Vec::with_capacity(vals.len() + n);
    for j in 0..n {
        let r = sym.col_range(j);
        for (k, &i) in (r.clone()).zip(&sym.row_idx()[r]) {
            t.push(Triplet::new(i, j, vals[k]));
        }
        t.push(Triplet::new(j, j, c64::new(-sigma, 0.0)));
    }
    let m = SparseColMat::<usize, c64>::try_new_from_triplets(n, n, &t)
        .map_err(|e| Error::Numerical(format!("sparse assembly: {e:?}")))?;
    let lu = m.sp_lu().map_err(|e| Error::Numerical(format!("sparse LU failed: {e:?}")))?;

    let diag: Vec<usize> = (0..n).filter(|&k| l.units.list[k].0 == l.units.list[k].1).collect();
    if diag.is_empty() {
        return Err(Error::invalid("sector contains no diagonal units"));
    }
    let run = |start: Vec<c64>| -> Result<Vec<c64>> {
        let mut v = start;
        let mut res = f64::INFINITY;
        for _ in 0..60 {
            let b = Mat::<c64>::from_fn(n, 1, |i, _| v[i]);
            let x = lu.solve(&b);
            let mut w: Vec<c64> = (0..n).map(|i| x[(i, 0)]).collect();
            let tr = l.units.trace(&w);
            let norm = if tr.norm() > 1e-300 { tr } else { c64::new(w.iter().map(|z| z.norm()).fold(0.0, f64::max), 0.0) };
            w.iter_mut().for_each(|z| *z /= norm);
            res = l.apply(&w).iter().map(|z| z.norm()).fold(0.0, f64::max);
            v = w;
            if res < tol * 1e-2 {
                break;
            }
        }
        if res < tol {
            Ok(v)
        } else {
            Err(Error::Convergence { what: "shift-invert iteration".into(), residual: res })
        }
    };
    let mut mixed = vec![ZERO; n];
    for &k in &diag {
        mixed[k] = c64::new(1.0 / diag.len() as f64, 0.0);
    }
    let v1 = run(mixed)?;
    let mut pure = vec![ZERO; n];
    pure[*diag.last().unwrap()] = ONE;
    let v2 = run(pure)?;
    let diff = v1.iter().zip(&v2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if diff > 1e-6 {
        return Err(Error::Degenerate { dim: 2 });
    }
    Ok(v1)
}

/// Groups basis states into blocks of equal excitation number when `rho`
/// is block diagonal in them, else one block.
fn blocks(rho: &Mat<c64>, exc: &[usize]) -> Vec<Vec<usize>> {
    let d = rho.nrows();
    let mut off: f64 = 0.0;
    for b in 0..d {
        for a in 0..d {
            if exc[a] != exc[b] {
                off = off.max(rho[(a, b)].norm());
            }
        }
    }
    if off > 0.0 {
        return vec![(0..d).collect()];
    }
    let maxe = exc.iter().copied().max().unwrap_or(0);
    let mut bl = vec![Vec::new(); maxe + 1];
    for (a, &e) in exc.iter().enumerate() {
        bl[e].push(a);
    }
    bl.retain(|b| !b.is_empty());
    bl
}

pub const POSITIVITY_TOL: f64 = 1e-8;

/// Normalizes, hermitizes and (if needed) clips a raw kernel vector.
fn finalize(l: &Liouvillian, v: Vec<c64>, tol: f64) -> Result<SteadyState> {
    let tr = l.units.trace(&v);
    if tr.norm() < 1e-300 {
        return Err(Error::Numerical("steady-state vector has zero trace".into()));
    }
    let v: Vec<c64> = v.iter().map(|z| z / tr).collect();
    let mut rho = l.units.scatter(&v);
    let d = rho.nrows();
    let mut herm: f64 = 0.0;
    for b in 0..d {
        for a in 0..d {
            herm = herm.max((rho[(a, b)] - rho[(b, a)].conj()).norm());
        }
    }
    if herm > 1e-10 {
        return Err(Error::Numerical(format!("steady state not Hermitian ({herm:e})")));
    }
    let rho_h = Mat::<c64>::from_fn(d, d, |a, b| (rho[(a, b)] + rho[(b, a)].conj()) * 0.5);
    rho = rho_h;

    let mut warnings = Vec::new();
    let mut min_eig = f64::INFINITY;
    let mut clipped = false;
    let bl = blocks(&rho, &l.generator.excitations);
    let mut repaired = rho.clone();
    for idx in &bl {
        let m = idx.len();
        let sub = Mat::<c64>::from_fn(m, m, |i, j| rho[(idx[i], idx[j])]);
        let eig = sub
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Convergence { what: format!("Hermitian eigensolver: {e:?}"), residual: f64::NAN })?;
        let s = eig.S().column_vector();
        let lo = (0..m).map(|i| s[i].re).fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(lo);
        if lo < 0.0 && lo >= -POSITIVITY_TOL {
            clipped = true;
            let u = eig.U();
            for i in 0..m {
                for j in 0..m {
                    let mut acc = ZERO;
                    for k in 0..m {
                        let lam = s[k].re.max(0.0);
                        acc += u[(i, k)] * u[(j, k)].conj() * lam;
                    }
                    repaired[(idx[i], idx[j])] = acc;
                }
            }
        }
    }
    if min_eig < -POSITIVITY_TOL {
        return Err(Error::Numerical(format!("steady state has eigenvalue {min_eig:e} < -{POSITIVITY_TOL:e}")));
    }
    if clipped {
        let t: c64 = (0..d).map(|i| repaired[(i, i)]).sum();
        for b in 0..d {
            for a in 0..d {
                repaired[(a, b)] /= t;
            }
        }
        warnings.push(format!("clipped negative eigenvalues down to {min_eig:e}"));
        rho = repaired;
    }
    let (vec, _) = l.units.gather(&rho);
    let residual = l.apply(&vec).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if residual > tol {
        return Err(Error::Convergence { what: "steady state residual".into(), residual });
    }
    Ok(SteadyState { rho, vec, residual, min_eigenvalue: min_eig, clipped, warnings })
}

pub fn steady_state(l: &Liouvillian, method: SteadyMethod) -> Result<SteadyState> {
    let tol = residual_tolerance(l);
    let v = match method {
        SteadyMethod::DenseNullSpace => dense_null(l)?,
        SteadyMethod::SparseShiftInvert => shift_invert(l, tol)?,
    };
    finalize(l, v, tol)
}

/// Builds the zero-charge sector and solves it; the engine's steady state
/// lives there.
pub fn solve_pair(params: &EngineParams) -> Result<(Liouvillian, SteadyState)> {
    let l = build_sector(params, Some(0))?;
    let method = if l.dim() <= 600 { SteadyMethod::DenseNullSpace } else { SteadyMethod::SparseShiftInvert };
    let ss = steady_state(&l, method)?;
    Ok((l, ss))
}

/// Eigenvalues of the generator restricted to one charge sector (dense).
pub fn sector_spectrum(l: &Liouvillian, q: i64, max_dim: usize) -> Result<Vec<c64>> {
    let s = l.with_sector(Some(q), usize::MAX)?;
    if s.dim() > max_dim {
        return Err(Error::Resource(format!("sector {q} has dimension {} > {max_dim}", s.dim())));
    }
    if s.dim() == 0 {
        return Ok(Vec::new());
    }
    s.to_dense()
        .eigenvalues()
        .map_err(|e| Error::Convergence { what: format!("eigensolver: {e:?}"), residual: f64::NAN })
}

/// Slowest `k` nonzero eigenvalues across all charge sectors, sorted by
/// decreasing real part. The single stationary eigenvalue is removed.
pub fn slowest_modes(l: &Liouvillian, k: usize) -> Result<Vec<c64>> {
    let qmax = l.generator.max_charge();
    let mut all = Vec::new();
    for q in -qmax..=qmax {
        let mut ev = sector_spectrum(l, q, 3000)?;
        if q == 0 {
            let (pos, _) = ev
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .ok_or_else(|| Error::Numerical("empty zero sector".into()))?;
            ev.remove(pos);
        }
        all.extend(ev);
    }
    all.sort_by(|a, b| b.re.total_cmp(&a.re));
    all.truncate(k);
    Ok(all)
}

/// `-max Re λ` over the nonzero spectrum.
pub fn gap(l: &Liouvillian, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::invalid("k must be >= 2"));
    }
    let modes = slowest_modes(l, k)?;
    let top = modes.first().ok_or_else(|| Error::Numerical("no nonzero eigenvalues".into()))?;
    Ok(-top.re)
}

/// Propagates an arbitrary vector in the unit basis of `l`.
pub fn propagate(l: &Liouvillian, v0: &[c64], t_grid: &[f64], tol: Tolerances) -> Result<Vec<Vec<c64>>> {
    ode::trbdf2_linear(&l.matrix, v0, t_grid, tol)
}

/// Time evolution of a density matrix; returns one matrix per time point.
pub fn evolve(l: &Liouvillian, rho0: &Mat<c64>, t_grid: &[f64], tol: Tolerances) -> Result<Vec<Mat<c64>>> {
    let d = l.hilbert_dim();
    if rho0.nrows() != d || rho0.ncols() != d {
        return Err(Error::invalid(format!("rho0 must be {d}x{d}")));
    }
    let tr: c64 = (0..d).map(|i| rho0[(i, i)]).sum();
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::invalid(format!("rho0 has trace {tr}")));
    }
    let (v0, outside) = l.units.gather(rho0);
    if outside > 1e-12 {
        return Err(Error::invalid("rho0 has weight outside the generator's sector"));
    }
    let traj = propagate(l, &v0, t_grid, tol)?;
    let mut out = Vec::with_capacity(traj.len());
    for v in traj {
        let m = l.units.scatter(&v);
        let tr: c64 = (0..d).map(|i| m[(i, i)]).sum();
        if (tr - ONE).norm() > 1e-8 {
            return Err(Error::Numerical(format!("trace drifted to {tr}")));
        }
        out.push(m);
    }
    Ok(out)
}

/// Trace distance ½‖a − b‖₁ between Hermitian matrices.
pub fn trace_distance(a: &Mat<c64>, b: &Mat<c64>) -> f64 {
    let d = a.nrows();
    let diff = Mat::<c64>::from_fn(d, d, |i, j| (a[(i, j)] - b[(i, j)] + (a[(j, i)] - b[(j, i)]).conj()) * 0.5);
    match diff.self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => 0.5 * ev.iter().map(|x| x.abs()).sum::<f64>(),
        Err(_) => f64::NAN,
    }
}

/// Thermal ladder populations `p_i ∝ exp(-βE·exc_i)` of one ensemble,
/// indexed like the Dicke basis.
pub fn thermal_ladder(n: usize, beta_e: f64) -> Vec<f64> {
    // exc = n - i; weights relative to the ground state avoid overflow
    let w: Vec<f64> = (0..=n).map(|i| (-(beta_e) * (n - i) as f64).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}
