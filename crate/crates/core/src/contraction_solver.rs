//! The map `t`: `u = L0^-1 [a (1 - 3 w0) v^2 - a v^3 - eps sigma1 (w0 + v)]`,
//! and its Picard iteration to the perturbation `w_p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::base_pulse::BasePulse;
use crate::error::{PulseError, Result};
use crate::grid::{GridSpec, RealField};
use crate::linearized::LinearizedOperator;
use crate::problem::CoefficientFields;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    /// Radius of the ball in H2 that every iterate must stay inside.
    pub rho: f64,
    /// Stop once `||v^{n+1} - v^n||_H2` is at most this.
    pub tol: f64,
    pub max_iters: usize,
}

impl PicardConfig {
    pub fn new(rho: f64) -> Self {
        Self {
            rho,
            tol: 1e-12,
            max_iters: 200,
        }
    }
}

/// Consecutive growing steps tolerated before giving up.
const GROWTH_STREAK: usize = 3;

/// Step ratios averaged into `measured_ratio`.
const RATIO_WINDOW: usize = 5;

#[derive(Debug, Clone)]
pub struct PerturbationResult {
    pub eps: f64,
    pub w_p: RealField,
    /// `w0 + w_p`.
    pub w: RealField,
    pub iterations: usize,
    /// `||v^{n+1} - v^n||_H2` for each step.
    pub step_norms: Vec<f64>,
    /// Geometric mean of the last few successive step ratios (0 when the
    /// iteration stopped before any ratio was available).
    pub measured_ratio: f64,
    /// L2 norm of `L0 w_p - a (1 - 3 w0) w_p^2 + a w_p^3 + eps sigma1 (w0 + w_p)`.
    pub residual_l2: f64,
    pub rho_used: f64,
}

impl PerturbationResult {
    /// Ratios `step_norms[n+1] / step_norms[n]`.
    pub fn step_ratios(&self) -> Vec<f64> {
        step_ratios(&self.step_norms)
    }
}

/// Right side of the auxiliary problem for a given `v`.
pub fn map_t_rhs(base: &BasePulse, coeffs: &CoefficientFields, eps: f64, v: &RealField) -> Result<RealField> {
    let w0 = &base.w0;
    v.same_grid(w0)?;
    w0.same_grid(&coeffs.sigma1)?;
    let a = coeffs.a;
    let values = w0
        .values()
        .iter()
        .zip(v.values())
        .zip(coeffs.sigma1.values())
        .map(|((&w, &v), &s1)| a * (1.0 - 3.0 * w) * v * v - a * v * v * v - eps * s1 * (w + v))
        .collect();
    RealField::new(w0.grid(), values)
}

pub fn apply_map_t(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    eps: f64,
    v: &RealField,
) -> Result<RealField> {
    let rhs = map_t_rhs(base, coeffs, eps, v)?;
    op.solve(&rhs, op.krylov().tol)
}

/// Picard iteration from `v = 0`.
pub fn picard_solve(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    eps: f64,
    cfg: &PicardConfig,
) -> Result<PerturbationResult> {
    picard_solve_from(op, base, coeffs, eps, cfg, RealField::zeros(base.w0.grid()))
}

/// Picard iteration from an arbitrary start inside the ball.
pub fn picard_solve_from(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    eps: f64,
    cfg: &PicardConfig,
    start: RealField,
) -> Result<PerturbationResult> {
    if !(eps >= 0.0) {
        return Err(PulseError::InvalidInput(format!("eps must be non-negative, got {eps}")));
    }
    let start_norm = start.h2_norm();
    if start_norm > cfg.rho {
        return Err(PulseError::BallEscape {
            iteration: 0,
            norm: start_norm,
            rho: cfg.rho,
        });
    }

    let mut v = start;
    let mut step_norms = Vec::new();
    let mut streak = 0;
    loop {
        if step_norms.len() == cfg.max_iters {
            return Err(PulseError::PicardCap {
                iterations: cfg.max_iters,
                last_step: *step_norms.last().unwrap_or(&f64::NAN),
            });
        }
        let next = apply_map_t(op, base, coeffs, eps, &v)?;
        let iteration = step_norms.len() + 1;
        let norm = next.h2_norm();
        if norm > cfg.rho {
            return Err(PulseError::BallEscape {
                iteration,
                norm,
                rho: cfg.rho,
            });
        }
        let step = next.sub(&v)?.h2_norm();
        if let Some(&prev) = step_norms.last() {
            streak = if step > prev { streak + 1 } else { 0 };
        }
        step_norms.push(step);
        v = next;
        if streak >= GROWTH_STREAK {
            return Err(PulseError::NoContraction {
                iteration,
                ratios: step_ratios(&step_norms),
            });
        }
        if step <= cfg.tol {
            break;
        }
    }

    let residual_l2 = fixed_point_residual(op, base, coeffs, eps, &v)?.l2_norm();
    let measured_ratio = geometric_tail_mean(&step_ratios(&step_norms), RATIO_WINDOW);
    let w = base.w0.add(&v)?;
    Ok(PerturbationResult {
        eps,
        w,
        w_p: v,
        iterations: step_norms.len(),
        step_norms,
        measured_ratio,
        residual_l2,
        rho_used: cfg.rho,
    })
}

/// `L0 v - rhs(v)`, the residual of the perturbation equation.
pub fn fixed_point_residual(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    eps: f64,
    v: &RealField,
) -> Result<RealField> {
    op.apply(v)?.sub(&map_t_rhs(base, coeffs, eps, v)?)
}

fn step_ratios(steps: &[f64]) -> Vec<f64> {
    steps
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0])
        .collect()
}

fn geometric_tail_mean(ratios: &[f64], window: usize) -> f64 {
    let tail = &ratios[ratios.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    if tail.contains(&0.0) {
        return 0.0;
    }
    (tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp()
}

/// Smooth random field: white noise filtered by `exp(-|k|^2 / 4)`, with unit
/// H2 norm.
pub fn random_direction<R: Rng>(grid: &GridSpec, rng: &mut R) -> RealField {
    let noise: Vec<f64> = (0..grid.len()).map(|_| StandardNormal.sample(rng)).collect();
    let f = RealField::from_raw(grid, noise).apply_symbol(|k2| (-k2 / 4.0).exp());
    let n = f.h2_norm();
    f.scaled(1.0 / n)
}

/// Random element of the ball: a random direction at an H2 radius drawn
/// uniformly from `(0, rho]`.
pub fn random_ball_element<R: Rng>(grid: &GridSpec, rho: f64, rng: &mut R) -> RealField {
    let dir = random_direction(grid, rng);
    let radius = rho * (1.0 - rng.random::<f64>());
    dir.scaled(radius)
}

/// Largest observed `||t v1 - t v2||_H2 / ||v1 - v2||_H2` over `n_pairs`
/// random pairs in the ball.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_probe(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    eps: f64,
    rho: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if n_pairs == 0 {
        return Err(PulseError::InvalidInput("lipschitz_probe needs at least one pair".into()));
    }
    let grid = base.w0.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_pairs {
        let (v1, v2, gap) = loop {
            let v1 = random_ball_element(&grid, rho, &mut rng);
            let v2 = random_ball_element(&grid, rho, &mut rng);
            let gap = v1.sub(&v2)?.h2_norm();
            if gap >= 1e-14 {
                break (v1, v2, gap);
            }
        };
        // t is L0^-1 applied to the right side, so one solve on the difference
        let diff = map_t_rhs(base, coeffs, eps, &v1)?.sub(&map_t_rhs(base, coeffs, eps, &v2)?)?;
        let du = op.solve(&diff, op.krylov().tol)?;
        worst = worst.max(du.h2_norm() / gap);
    }
    Ok(worst)
}

/// `w = w0 + w_p` and the margin `||w||_H2 - (||w0||_H2 - rho)`.
pub fn assemble_and_check(base: &BasePulse, result: &PerturbationResult) -> Result<(RealField, f64)> {
    let w0_h2 = base.w0.h2_norm();
    if !(result.rho_used < w0_h2) {
        return Err(PulseError::RadiusTooLarge {
            rho: result.rho_used,
            w0_h2,
        });
    }
    let w = base.w0.add(&result.w_p)?;
    let w_h2 = w.h2_norm();
    let margin = w_h2 - (w0_h2 - result.rho_used);
    let triangle = w0_h2 - result.w_p.h2_norm();
    if margin < 0.0 || w_h2 < triangle - 1e-12 * w0_h2 {
        return Err(PulseError::InvariantViolation(format!(
            "assembled pulse too small: ||w||_H2 = {w_h2:.6e}, margin {margin:.3e}"
        )));
    }
    Ok((w, margin))
}
