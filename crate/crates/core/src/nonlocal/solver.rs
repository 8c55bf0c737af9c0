//! Operators restricted to a domain, conjugate gradients, Lanczos, and the
//! constrained minimization of the fractional Rayleigh quotient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fft::Convolver;
use super::kernel::KernelTable;
use crate::constants::FracParams;
use crate::domain::GridDomain;
use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// Symmetric positive definite operator on a fixed set of unknowns.
pub trait QuadraticOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// Discrete fractional operator acting on functions supported in a domain.
/// Convolutions run on the bounding window of the domain only.
#[derive(Debug)]
pub struct DomainOperator {
    cells: Vec<usize>,
    local: Vec<usize>,
    conv: Convolver,
    diag: f64,
}

impl DomainOperator {
    pub fn new(kernel: &KernelTable, dom: &GridDomain) -> Result<Self> {
        if dom.spec != kernel.spec {
            return Err(Error::InvalidParameter(
                "domain and kernel table live on different grids".into(),
            ));
        }
        if dom.is_empty() {
            return Err(Error::EmptyDomain("domain has no cells"));
        }
        let spec = dom.spec;
        let cells: Vec<usize> = dom.cells().collect();
        let coords: Vec<(usize, usize)> = cells.iter().map(|&k| spec.coords(k)).collect();
        let i0 = coords.iter().map(|c| c.0).min().unwrap_or(0);
        let j0 = coords.iter().map(|c| c.1).min().unwrap_or(0);
        let i1 = coords.iter().map(|c| c.0).max().unwrap_or(0);
        let j1 = coords.iter().map(|c| c.1).max().unwrap_or(0);
        let b = (i1 - i0).max(j1 - j0) + 1;
        let local = coords.iter().map(|&(i, j)| (j - j0) * b + (i - i0)).collect();
        let conv = Convolver::new(b, |di, dj| kernel.weight(di, dj));
        Ok(Self {
            cells,
            local,
            conv,
            diag: kernel.diagonal(),
        })
    }

    /// Global cell indices of the unknowns, in scan order.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
}

impl QuadraticOperator for DomainOperator {
    fn dim(&self) -> usize {
        self.cells.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let b = self.conv.window();
        let mut window = vec![0.0; b * b];
        for (&l, &v) in self.local.iter().zip(x) {
            window[l] = v;
        }
        let mut conv = vec![0.0; b * b];
        self.conv.convolve(&window, &mut conv);
        for ((o, &l), &v) in out.iter_mut().zip(&self.local).zip(x) {
            *o = 2.0 * (self.diag * v - conv[l]);
        }
    }
}

/// Five-point graph Laplacian of a domain with zero exterior values:
/// x·(Lx) = Σ over lattice edges touching the domain of (difference)^2.
#[derive(Debug)]
pub struct LocalOperator {
    cells: Vec<usize>,
    neighbors: Vec<[Option<usize>; 4]>,
}

impl LocalOperator {
    pub fn new(dom: &GridDomain) -> Result<Self> {
        if dom.is_empty() {
            return Err(Error::EmptyDomain("domain has no cells"));
        }
        let spec = dom.spec;
        let m = spec.resolution as isize;
        let cells: Vec<usize> = dom.cells().collect();
        let mut slot = vec![usize::MAX; spec.len()];
        for (k, &c) in cells.iter().enumerate() {
            slot[c] = k;
        }
        let neighbors = cells
            .iter()
            .map(|&c| {
                let (i, j) = spec.coords(c);
                let mut nb = [None; 4];
                for (t, (di, dj)) in [(1, 0), (-1, 0), (0, 1), (0, -1)].into_iter().enumerate() {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni >= 0 && nj >= 0 && ni < m && nj < m {
                        let s = slot[spec.index(ni as usize, nj as usize)];
                        if s != usize::MAX {
                            nb[t] = Some(s);
                        }
                    }
                }
                nb
            })
            .collect();
        Ok(Self { cells, neighbors })
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }
}

impl QuadraticOperator for LocalOperator {
    fn dim(&self) -> usize {
        self.cells.len()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (k, nb) in self.neighbors.iter().enumerate() {
            let mut acc = 4.0 * x[k];
            for n in nb.iter().flatten() {
                acc -= x[*n];
            }
            out[k] = acc;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final ‖b - Ax‖ / ‖b‖.
    pub residual: f64,
}

/// Solves Ax = b to relative residual `rel_tol`.
pub fn conjugate_gradient<O: QuadraticOperator + ?Sized>(
    op: &O,
    rhs: &[f64],
    x0: Option<&[f64]>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = op.dim();
    let bnorm = norm(rhs);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(CgOutcome {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut ax = vec![0.0; n];
    op.apply(&x, &mut ax);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        let res = rr.sqrt() / bnorm;
        if res <= rel_tol {
            return Ok(CgOutcome {
                x,
                iterations: it,
                residual: res,
            });
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::CgBreakdown {
                iteration: it,
                residual: res,
            });
        }
        let alpha = rr / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for k in 0..n {
            p[k] = r[k] + beta * p[k];
        }
    }
    let res = rr.sqrt() / bnorm;
    if res <= rel_tol {
        Ok(CgOutcome {
            x,
            iterations: max_iter,
            residual: res,
        })
    } else {
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// Number of eigenvalues of the symmetric tridiagonal (a, b) below x.
fn sturm_count(a: &[f64], b: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for k in 0..a.len() {
        let off = if k == 0 { 0.0 } else { b[k - 1] * b[k - 1] };
        d = a[k] - x - if d != 0.0 { off / d } else { off / f64::EPSILON };
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

fn tridiagonal_min(a: &[f64], b: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..a.len() {
        let r = if k > 0 { b[k - 1].abs() } else { 0.0 } + b.get(k).map_or(0.0, |v| v.abs());
        lo = lo.min(a[k] - r);
        hi = hi.max(a[k] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(a, b, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Smallest eigenvalue of an SPD operator by Lanczos with full
/// reorthogonalization, started from the constant vector.
pub fn lanczos_smallest<O: QuadraticOperator + ?Sized>(op: &O, max_steps: usize, rel_tol: f64) -> Result<f64> {
    let n = op.dim();
    if n == 0 {
        return Err(Error::EmptyDomain("operator has no unknowns"));
    }
    let steps = max_steps.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(steps);
    let mut q = vec![1.0 / (n as f64).sqrt(); n];
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut w = vec![0.0; n];
    let mut prev = f64::INFINITY;
    for k in 0..steps {
        op.apply(&q, &mut w);
        let alpha = dot(&q, &w);
        a.push(alpha);
        basis.push(q.clone());
        for v in &basis {
            let c = dot(v, &w);
            for t in 0..n {
                w[t] -= c * v[t];
            }
        }
        let theta = tridiagonal_min(&a, &b);
        let beta = norm(&w);
        if (theta - prev).abs() <= rel_tol * theta.abs() || beta <= 1e-14 * alpha.abs() || k + 1 == steps {
            if (theta - prev).abs() <= rel_tol * theta.abs() || beta <= 1e-14 * alpha.abs() || steps == n {
                return Ok(theta);
            }
            return Err(Error::NonConvergence {
                iterations: steps,
                residual: (theta - prev).abs() / theta.abs(),
            });
        }
        prev = theta;
        b.push(beta);
        for t in 0..n {
            q[t] = w[t] / beta;
        }
    }
    Err(Error::NonConvergence {
        iterations: steps,
        residual: f64::NAN,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOpts {
    /// Stationarity tolerance: ‖Au - λ h^N u^{q-1}‖ ≤ tol λ ‖h^N u^{q-1}‖.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Number of initializations; 0 picks 1 for q <= 2 and 3 otherwise.
    pub starts: usize,
    /// For q = 2, also compute the eigenvalue by Lanczos.
    pub cross_check: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 5000,
            seed: 0,
            starts: 0,
            cross_check: false,
        }
    }
}

impl SolverOpts {
    fn start_count(&self, q: f64) -> usize {
        if self.starts > 0 {
            self.starts
        } else if q <= 2.0 {
            1
        } else {
            3
        }
    }
}

#[derive(Clone, Debug)]
pub struct RayleighOutcome {
    /// Nonnegative minimizer with h^N Σ u^q = 1.
    pub u: Vec<f64>,
    /// u·Au.
    pub value: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn normalize_q(u: &mut [f64], weight: f64, q: f64) -> f64 {
    let nq = (weight * u.iter().map(|v| v.abs().powf(q)).sum::<f64>()).powf(1.0 / q);
    if nq > 0.0 {
        for v in u.iter_mut() {
            *v /= nq;
        }
    }
    nq
}

fn power_q(u: &[f64], weight: f64, q: f64) -> Vec<f64> {
    if q == 1.0 {
        vec![weight; u.len()]
    } else if q == 2.0 {
        u.iter().map(|v| weight * v).collect()
    } else {
        u.iter().map(|v| weight * v.max(0.0).powf(q - 1.0)).collect()
    }
}

/// Minimizes x·Ax over x >= 0 with `weight` Σ x^q = 1.
///
/// Each step solves A v = weight·u^{q-1} and moves along the preconditioned
/// descent direction: u <- P(normalize((1 - 2η) u + 2η λ v)). With η = 1/2
/// this is inverse iteration; η is halved until the quotient decreases.
pub fn minimize_rayleigh<O: QuadraticOperator + ?Sized>(
    op: &O,
    weight: f64,
    q: f64,
    opts: &SolverOpts,
    initial: Vec<f64>,
) -> Result<RayleighOutcome> {
    let n = op.dim();
    let mut u: Vec<f64> = initial.into_iter().map(|v| v.max(0.0)).collect();
    if normalize_q(&mut u, weight, q) == 0.0 {
        return Err(Error::Degenerate("initial guess vanishes on the domain".into()));
    }
    let mut au = vec![0.0; n];
    op.apply(&u, &mut au);
    let mut lambda = dot(&u, &au);
    let mut residual = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let g = power_q(&u, weight, q);
        let gnorm = norm(&g);
        let diff: Vec<f64> = au.iter().zip(&g).map(|(a, b)| a - lambda * b).collect();
        residual = norm(&diff) / (lambda * gnorm);
        if residual <= opts.tol {
            return Ok(RayleighOutcome {
                u,
                value: lambda,
                iterations: it,
                residual,
            });
        }
        if it == opts.max_iter {
            break;
        }
        let guess: Vec<f64> = u.iter().map(|v| v / lambda).collect();
        let cg_tol = (0.05 * residual).min(1e-3).max(0.01 * opts.tol);
        let v = conjugate_gradient(op, &g, Some(&guess), cg_tol, 20_000)?.x;
        let mut eta = 0.5;
        loop {
            let mut cand: Vec<f64> = u
                .iter()
                .zip(&v)
                .map(|(a, b)| ((1.0 - 2.0 * eta) * a + 2.0 * eta * lambda * b).max(0.0))
                .collect();
            if normalize_q(&mut cand, weight, q) == 0.0 {
                eta *= 0.5;
                continue;
            }
            let mut ac = vec![0.0; n];
            op.apply(&cand, &mut ac);
            let lc = dot(&cand, &ac);
            if lc <= lambda * (1.0 + 1e-13) || eta < 1.0 / 4096.0 {
                u = cand;
                au = ac;
                lambda = lc;
                break;
            }
            eta *= 0.5;
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        residual,
    })
}

#[derive(Clone, Debug)]
pub struct LambdaResult {
    pub lambda: f64,
    pub u: GridFunction,
    pub iterations: usize,
    pub residual: f64,
    /// λ of every start, in start order.
    pub start_values: Vec<f64>,
    /// Set when two starts differ by more than 1e-4 relative.
    pub starts_disagree: bool,
    /// Lanczos eigenvalue for q = 2 when requested.
    pub cross_check: Option<f64>,
}

fn check_problem(dom: &GridDomain, params: &FracParams) -> Result<()> {
    params.validate()?;
    if params.n != 2 {
        return Err(Error::InvalidParameter(format!(
            "grid solvers are planar; got N = {}",
            params.n
        )));
    }
    if dom.is_empty() {
        return Err(Error::EmptyDomain("domain has no cells"));
    }
    Ok(())
}

fn lift(dom: &GridDomain, cells: &[usize], x: &[f64]) -> GridFunction {
    let mut values = vec![0.0; dom.spec.len()];
    for (&c, &v) in cells.iter().zip(x) {
        values[c] = v;
    }
    GridFunction {
        spec: dom.spec,
        values,
        support: Some(dom.clone()),
    }
}

/// λ_{s,q}(Ω) = min [u]^2 over u >= 0 supported in Ω with ‖u‖_q = 1.
pub fn minimize_lambda(dom: &GridDomain, params: &FracParams, opts: &SolverOpts) -> Result<LambdaResult> {
    check_problem(dom, params)?;
    let kernel = KernelTable::new(dom.spec, params.s)?;
    minimize_lambda_with(&kernel, dom, params, opts)
}

pub(crate) fn minimize_lambda_with(
    kernel: &KernelTable,
    dom: &GridDomain,
    params: &FracParams,
    opts: &SolverOpts,
) -> Result<LambdaResult> {
    check_problem(dom, params)?;
    let op = DomainOperator::new(kernel, dom)?;
    let weight = dom.spec.cell_area();
    let n = op.dim();
    let base = conjugate_gradient(&op, &vec![weight; n], None, 1e-6, 20_000)?.x;
    let starts = opts.start_count(params.q);
    let runs: Vec<Result<RayleighOutcome>> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let init = if k == 0 {
                base.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
                base.iter().map(|v| v * (1.0 + 0.5 * rng.gen_range(-1.0..1.0))).collect()
            };
            minimize_rayleigh(&op, weight, params.q, opts, init)
        })
        .collect();
    let mut outcomes = Vec::with_capacity(starts);
    for r in runs {
        outcomes.push(r?);
    }
    let start_values: Vec<f64> = outcomes.iter().map(|o| o.value).collect();
    let lo = start_values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = start_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let best = outcomes
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .map(|(_, o)| o)
        .ok_or(Error::Degenerate("no solver start".into()))?;
    let u = lift(dom, op.cells(), &best.u);
    let lambda = kernel.seminorm_sq(&u)?;
    let cross_check = if opts.cross_check && params.q == 2.0 {
        Some(lanczos_smallest(&op, 400, 1e-12)? / weight)
    } else {
        None
    };
    Ok(LambdaResult {
        lambda,
        u,
        iterations: best.iterations,
        residual: best.residual,
        starts_disagree: hi - lo > 1e-4 * lo,
        start_values,
        cross_check,
    })
}

#[derive(Clone, Debug)]
pub struct TorsionResult {
    pub w: GridFunction,
    pub torsion: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Torsion function: h^{-N} (A w) = 1 on Ω, w = 0 elsewhere; T = h^N Σ w.
pub fn torsion_solve(dom: &GridDomain, s: f64) -> Result<TorsionResult> {
    let kernel = KernelTable::new(dom.spec, s)?;
    torsion_solve_with(&kernel, dom)
}

pub(crate) fn torsion_solve_with(kernel: &KernelTable, dom: &GridDomain) -> Result<TorsionResult> {
    let op = DomainOperator::new(kernel, dom)?;
    let weight = dom.spec.cell_area();
    let cg = conjugate_gradient(&op, &vec![weight; op.dim()], None, 1e-10, 50_000)?;
    let torsion = weight * cg.x.iter().sum::<f64>();
    Ok(TorsionResult {
        w: lift(dom, op.cells(), &cg.x),
        torsion,
        iterations: cg.iterations,
        residual: cg.residual,
    })
}
