//! Matrix-free iterative linear algebra on flat `f64` vectors.
//!
//! - [`minres`]: preconditioned MINRES for symmetric, possibly indefinite
//!   systems, wrapped in residual-correction passes so the returned solution
//!   meets the tolerance in the plain Euclidean residual.
//! - [`lobpcg`]: block preconditioned eigensolver for the algebraically
//!   smallest eigenpairs of a symmetric operator.
//! - [`lanczos_largest`]: largest eigenvalue of a symmetric positive
//!   semi-definite operator, with full reorthogonalization.
//!
//! Operators are closures `&[f64] -> Vec<f64>`; preconditioners must be
//! symmetric positive definite.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::dot;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovConfig {
    /// Relative tolerance on `||A x - b|| / ||b||`.
    pub tol: f64,
    /// Cap on the total number of operator applications.
    pub max_iters: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinresOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// True relative residual `||A x - b|| / ||b||` of the returned solution.
    pub relative_residual: f64,
    pub converged: bool,
}

const MAX_PASSES: usize = 6;

pub fn minres<A, M>(apply: A, precond: M, rhs: &[f64], cfg: &KrylovConfig) -> MinresOutcome
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = rhs.len();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return MinresOutcome {
            solution: vec![0.0; n],
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }

    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut rel = 1.0;
    let mut used = 0;
    for _ in 0..MAX_PASSES {
        if used >= cfg.max_iters {
            break;
        }
        // the inner solve measures the residual in the preconditioner norm,
        // so ask for a margin below the target
        let inner_tol = (0.1 * cfg.tol / rel).min(0.5);
        let (dx, its) = minres_pass(&apply, &precond, &r, inner_tol, cfg.max_iters - used);
        used += its;
        axpy(1.0, &dx, &mut x);
        let ax = apply(&x);
        for i in 0..n {
            r[i] = rhs[i] - ax[i];
        }
        let new_rel = norm(&r) / b_norm;
        let stalled = new_rel > 0.5 * rel;
        rel = new_rel;
        if rel <= cfg.tol || stalled {
            break;
        }
    }
    MinresOutcome {
        solution: x,
        iterations: used,
        relative_residual: rel,
        converged: rel <= cfg.tol,
    }
}

/// One preconditioned MINRES run from a zero initial guess (Paige-Saunders
/// recurrences). Stops when the preconditioned residual falls below
/// `tol * beta1`.
fn minres_pass<A, M>(apply: &A, precond: &M, b: &[f64], tol: f64, max_iters: usize) -> (Vec<f64>, usize)
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r1 = b.to_vec();
    let mut y = precond(&r1);
    let beta1_sq = dot(&r1, &y);
    if beta1_sq <= 0.0 {
        return (x, 0);
    }
    let beta1 = beta1_sq.sqrt();

    let mut r2 = r1.clone();
    let mut w = vec![0.0; n];
    let mut w1 = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];

    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0f64, 0.0f64);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);

    let mut its = 0;
    while its < max_iters {
        its += 1;
        let s = 1.0 / beta;
        for i in 0..n {
            v[i] = s * y[i];
        }
        y = apply(&v);
        if its >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        y = precond(&r2);
        oldb = beta;
        let beta_sq = dot(&r2, &y);
        beta = beta_sq.max(0.0).sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;

        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        std::mem::swap(&mut w1, &mut w2);
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }

        if phibar <= tol * beta1 || beta == 0.0 {
            break;
        }
    }
    (x, its)
}

#[derive(Debug, Clone)]
pub struct EigenOutcome {
    /// Ascending eigenvalues of the requested pairs.
    pub values: Vec<f64>,
    /// Euclidean-normalized eigenvectors.
    pub vectors: Vec<Vec<f64>>,
    /// `||A v - lambda v||` for each returned pair.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Block LOBPCG for the `count` algebraically smallest eigenpairs, carrying
/// `guard` extra vectors to keep clusters at the block edge from stalling.
pub fn lobpcg<A, M>(
    apply: A,
    precond: M,
    dim: usize,
    count: usize,
    guard: usize,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> EigenOutcome
where
    A: Fn(&[f64]) -> Vec<f64>,
    M: Fn(&[f64]) -> Vec<f64>,
{
    let block = (count + guard).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    x = orthonormalize(&[], x);

    let mut ax: Vec<Vec<f64>> = x.iter().map(|v| apply(v)).collect();
    let (mut values, rot) = rayleigh_ritz(&x, &ax, block);
    x = combine(&x, &rot);
    ax = combine(&ax, &rot);
    let mut p: Vec<Vec<f64>> = Vec::new();

    let mut residuals = vec![f64::INFINITY; block];
    let mut iterations = 0;
    loop {
        let r: Vec<Vec<f64>> = (0..block)
            .map(|j| {
                let mut rj = ax[j].clone();
                axpy(-values[j], &x[j], &mut rj);
                rj
            })
            .collect();
        for j in 0..block {
            residuals[j] = norm(&r[j]);
        }
        let done = residuals[..count].iter().all(|&res| res <= tol);
        if done || iterations >= max_iters {
            break;
        }
        iterations += 1;

        let w: Vec<Vec<f64>> = (0..block)
            .filter(|&j| residuals[j] > tol)
            .map(|j| precond(&r[j]))
            .collect();

        let mut extra = w;
        extra.extend(p.iter().cloned());
        let extra = orthonormalize(&x, extra);
        let a_extra: Vec<Vec<f64>> = extra.iter().map(|v| apply(v)).collect();

        let mut basis = x.clone();
        basis.extend(extra);
        let mut a_basis = ax.clone();
        a_basis.extend(a_extra);

        let (vals, rot) = rayleigh_ritz(&basis, &a_basis, block);
        let new_x = combine(&basis, &rot);
        let new_ax = combine(&a_basis, &rot);
        // search direction: the part of the update outside the old block
        let tail = rot.rows(block, rot.nrows() - block).into_owned();
        p = if tail.nrows() > 0 {
            combine(&basis[block..], &tail)
        } else {
            Vec::new()
        };
        x = new_x;
        ax = new_ax;
        values = vals;
    }

    EigenOutcome {
        values: values[..count].to_vec(),
        vectors: x[..count].to_vec(),
        residuals: residuals[..count].to_vec(),
        iterations,
        converged: residuals[..count].iter().all(|&res| res <= tol),
    }
}

#[derive(Debug, Clone)]
pub struct LanczosOutcome {
    pub value: f64,
    pub iterations: usize,
    /// Ritz residual bound `beta_k |s_k|` at exit.
    pub residual: f64,
    pub converged: bool,
}

/// Largest eigenvalue of a symmetric positive semi-definite operator.
/// Stops when the Ritz residual is at most `tol * theta`.
pub fn lanczos_largest<A>(apply: A, dim: usize, tol: f64, max_iters: usize, seed: u64) -> LanczosOutcome
where
    A: Fn(&[f64]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let qn = norm(&q);
    scale(1.0 / qn, &mut q);

    let mut basis: Vec<Vec<f64>> = vec![q];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut theta = 0.0;
    let mut residual = f64::INFINITY;

    for k in 0..max_iters.min(dim) {
        let mut z = apply(&basis[k]);
        let alpha = dot(&basis[k], &z);
        alphas.push(alpha);
        // full reorthogonalization, twice
        for _ in 0..2 {
            for qj in &basis {
                let c = dot(qj, &z);
                axpy(-c, qj, &mut z);
            }
        }
        let beta = norm(&z);

        let m = alphas.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alphas[i];
            if i + 1 < m {
                t[(i, i + 1)] = betas[i];
                t[(i + 1, i)] = betas[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let (imax, &top) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty tridiagonal");
        theta = top;
        residual = beta * eig.eigenvectors[(m - 1, imax)].abs();
        if residual <= tol * theta.abs() || beta <= f64::EPSILON * theta.abs() {
            return LanczosOutcome {
                value: theta,
                iterations: k + 1,
                residual,
                converged: true,
            };
        }
        betas.push(beta);
        scale(1.0 / beta, &mut z);
        basis.push(z);
    }
    LanczosOutcome {
        value: theta,
        iterations: alphas.len(),
        residual,
        converged: false,
    }
}

/// Ritz values (ascending, first `keep`) and coefficient matrix for an
/// orthonormal `basis` with images `a_basis`.
fn rayleigh_ritz(basis: &[Vec<f64>], a_basis: &[Vec<f64>], keep: usize) -> (Vec<f64>, DMatrix<f64>) {
    let k = basis.len();
    let mut g = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = 0.5 * (dot(&basis[i], &a_basis[j]) + dot(&basis[j], &a_basis[i]));
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let keep = keep.min(k);
    let values = order[..keep].iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut rot = DMatrix::<f64>::zeros(k, keep);
    for (col, &i) in order[..keep].iter().enumerate() {
        rot.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, rot)
}

fn combine(vectors: &[Vec<f64>], coeffs: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let dim = vectors.first().map_or(0, Vec::len);
    (0..coeffs.ncols())
        .map(|col| {
            let mut out = vec![0.0; dim];
            for (row, v) in vectors.iter().enumerate() {
                axpy(coeffs[(row, col)], v, &mut out);
            }
            out
        })
        .collect()
}

/// Orthonormalizes `candidates` against the orthonormal set `fixed` and each
/// other (two Gram-Schmidt passes), dropping nearly dependent vectors.
fn orthonormalize(fixed: &[Vec<f64>], candidates: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
    for mut c in candidates {
        let n0 = norm(&c);
        if n0 == 0.0 {
            continue;
        }
        scale(1.0 / n0, &mut c);
        for _ in 0..2 {
            for q in fixed.iter().chain(out.iter()) {
                let proj = dot(q, &c);
                axpy(-proj, q, &mut c);
            }
        }
        let n1 = norm(&c);
        if n1 > 1e-10 {
            scale(1.0 / n1, &mut c);
            out.push(c);
        }
    }
    out
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x {
        *xi *= alpha;
    }
}
