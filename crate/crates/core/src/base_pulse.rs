//! Newton–Krylov solver for the unperturbed pulse
//! `Laplacian(w) + a w^2 (1 - w) - sigma0 w = 0`, plus the exponential decay fit.

use crate::error::{PulseError, Result};
use crate::grid::RealField;
use crate::krylov::KrylovConfig;
use crate::linearized::SchrodingerOperator;
use crate::problem::{stationary_residual, CoefficientFields};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    /// Absolute tolerance on `||F(w)||_L2`.
    pub tol: f64,
    pub max_iters: usize,
    pub krylov: KrylovConfig,
    pub max_halvings: usize,
    /// Upper bound on the relative spectral tail of the converged pulse.
    pub tail_tol: Option<f64>,
    /// Pulses with a smaller H2 norm are reported as trivial.
    pub trivial_threshold: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 50,
            krylov: KrylovConfig::default(),
            max_halvings: 8,
            tail_tol: Some(1e-12),
            trivial_threshold: 1e-8,
        }
    }
}

/// Relative Krylov residual above which a Newton step is abandoned.
pub const JACOBIAN_STAGNATION: f64 = 1e-3;

/// Lower bound on the pulse values tolerated in the far field.
pub const POSITIVITY_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone)]
pub struct BasePulse {
    pub w0: RealField,
    pub residual_l2: f64,
    pub decay_c: f64,
    pub decay_alpha: f64,
    pub newton_iterations: usize,
    /// `||F||_L2` at the start of each step and after the last one.
    pub history: Vec<f64>,
}

impl BasePulse {
    /// Wraps a known pulse (for example one loaded from disk) after checking
    /// its residual, positivity and decay.
    pub fn from_field(w0: RealField, coeffs: &CoefficientFields) -> Result<Self> {
        let residual_l2 = stationary_residual(&w0, coeffs, 0.0)?.l2_norm();
        check_positive(&w0)?;
        let (decay_c, decay_alpha) = decay_fit(&w0)?;
        Ok(Self {
            w0,
            residual_l2,
            decay_c,
            decay_alpha,
            newton_iterations: 0,
            history: vec![residual_l2],
        })
    }
}

pub fn solve_base(coeffs: &CoefficientFields, initial_guess: &RealField, cfg: &NewtonConfig) -> Result<BasePulse> {
    initial_guess.same_grid(&coeffs.sigma0)?;
    let a = coeffs.a;
    let residual = |w: &RealField| stationary_residual(w, coeffs, 0.0);

    let mut w = initial_guess.clone();
    let mut f = residual(&w)?;
    let mut f_norm = f.l2_norm();
    let mut history = vec![f_norm];
    let mut iterations = 0;

    while f_norm > cfg.tol {
        if iterations == cfg.max_iters {
            return Err(PulseError::NonConvergence {
                iterations,
                residual: f_norm,
            });
        }
        iterations += 1;

        // -J = -Laplacian + a (3 w^2 - 2 w) + sigma0
        let potential = w.zip_map(&coeffs.sigma0, |w, s| a * (3.0 * w * w - 2.0 * w) + s)?;
        let jac = SchrodingerOperator::new(potential, coeffs.delta);
        let out = jac.minres(&f, &cfg.krylov)?;
        if out.relative_residual > JACOBIAN_STAGNATION {
            return Err(PulseError::SingularJacobian {
                relative_residual: out.relative_residual,
            });
        }
        let step = RealField::new(w.grid(), out.solution)?;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial = w.add(&step.scaled(t))?;
            let f_trial = residual(&trial)?;
            let n_trial = f_trial.l2_norm();
            if n_trial < f_norm {
                accepted = Some((trial, f_trial, n_trial));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, f_trial, n_trial)) = accepted else {
            return Err(PulseError::NonConvergence {
                iterations,
                residual: f_norm,
            });
        };
        w = trial;
        f = f_trial;
        f_norm = n_trial;
        history.push(f_norm);
    }

    let h2 = w.h2_norm();
    if h2 < cfg.trivial_threshold {
        return Err(PulseError::TrivialSolution { h2_norm: h2 });
    }
    check_positive(&w)?;
    if let Some(tol) = cfg.tail_tol {
        let tail = w.spectral_tail();
        if tail > tol {
            return Err(PulseError::UnderResolved { tail, tol });
        }
    }
    let (decay_c, decay_alpha) = decay_fit(&w)?;
    Ok(BasePulse {
        w0: w,
        residual_l2: f_norm,
        decay_c,
        decay_alpha,
        newton_iterations: iterations,
        history,
    })
}

fn check_positive(w: &RealField) -> Result<()> {
    let min = w.min_value();
    if min < POSITIVITY_FLOOR {
        return Err(PulseError::InvariantViolation(format!(
            "pulse is negative somewhere (min {min:.3e})"
        )));
    }
    Ok(())
}

/// Fits `w(x) <= C exp(-alpha |x|)` by least squares on the logarithm of the
/// per-shell maxima over the annulus `L/3 <= |x| <= 2L/3`.
pub fn decay_fit(w: &RealField) -> Result<(f64, f64)> {
    let grid = w.grid();
    let l = grid.half_period();
    let (r_lo, r_hi) = (l / 3.0, 2.0 * l / 3.0);
    let width = grid.spacing();
    let bins = ((r_hi - r_lo) / width).ceil() as usize;

    // (max value, radius at the max) per shell
    let mut shells = vec![(f64::NEG_INFINITY, 0.0); bins];
    for (idx, &v) in w.values().iter().enumerate() {
        let r = grid.radius(idx);
        if r < r_lo || r > r_hi {
            continue;
        }
        let b = (((r - r_lo) / width) as usize).min(bins - 1);
        if v > shells[b].0 {
            shells[b] = (v, r);
        }
    }
    let points: Vec<(f64, f64)> = shells
        .into_iter()
        .filter(|&(v, _)| v.is_finite())
        .map(|(v, r)| {
            if v > 1e-13 {
                Ok((r, v.ln()))
            } else {
                Err(PulseError::InvalidInput(format!(
                    "shell maximum {v:.3e} at r = {r:.3} is below the fit floor"
                )))
            }
        })
        .collect::<Result<_>>()?;
    if points.len() < 2 {
        return Err(PulseError::InvalidInput("decay annulus holds fewer than two shells".into()));
    }

    let (slope, intercept) = least_squares(&points);
    if !(slope < 0.0) {
        return Err(PulseError::NonDecaying { slope });
    }
    Ok((intercept.exp(), -slope))
}

/// Ordinary least-squares line `y = slope x + intercept`.
pub fn least_squares(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::problem::{eval_coefficients, CoefficientSpec, Sigma0Spec};

    fn small_fixture(n: usize) -> (CoefficientFields, RealField) {
        let mut spec = CoefficientSpec::fixture();
        if let Sigma0Spec::Manufactured { bump, .. } = &mut spec.sigma0 {
            *bump = None;
        }
        let g = make_grid(2, n, 12.0).unwrap();
        let coeffs = eval_coefficients(&spec, &g).unwrap();
        let target = coeffs.target.clone().unwrap();
        (coeffs, target)
    }

    fn loose() -> NewtonConfig {
        NewtonConfig {
            tail_tol: None,
            ..NewtonConfig::default()
        }
    }

    #[test]
    fn recovers_manufactured_target() {
        let (coeffs, target) = small_fixture(128);
        let base = solve_base(&coeffs, &target.scaled(1.2), &loose()).unwrap();
        let err = base.w0.sub(&target).unwrap().h2_norm() / target.h2_norm();
        assert!(err <= 1e-6, "relative error {err:.3e}");
        assert!(base.newton_iterations <= 12);
        assert!(base.residual_l2 <= 1e-10);
        for pair in base.history.windows(2).skip(1) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn exact_guess_converges_immediately() {
        let (coeffs, target) = small_fixture(128);
        let base = solve_base(&coeffs, &target, &loose()).unwrap();
        assert!(base.newton_iterations <= 2);
        assert!(base.history[0] <= 1e-8);
    }

    #[test]
    fn zero_guess_is_trivial() {
        let (coeffs, target) = small_fixture(32);
        let zero = RealField::zeros(target.grid());
        assert!(matches!(
            solve_base(&coeffs, &zero, &loose()),
            Err(PulseError::TrivialSolution { .. })
        ));
    }

    #[test]
    fn decay_rate_of_sech() {
        let g = make_grid(2, 128, 16.0).unwrap();
        let w = RealField::from_fn(&g, |x| 0.4 / (x[0] * x[0] + x[1] * x[1]).sqrt().cosh());
        let (c, alpha) = decay_fit(&w).unwrap();
        assert!((0.9..=1.1).contains(&alpha), "alpha {alpha}");
        let (c2, alpha2) = decay_fit(&w.scaled(2.0)).unwrap();
        assert!((alpha2 - alpha).abs() < 1e-12);
        assert!((c2 / c - 2.0).abs() < 1e-9);
    }

    #[test]
    fn constant_does_not_decay() {
        let g = make_grid(2, 64, 8.0).unwrap();
        assert!(matches!(
            decay_fit(&RealField::constant(&g, 0.3)),
            Err(PulseError::NonDecaying { .. })
        ));
    }

    #[test]
    fn least_squares_exact_line() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let (s, b) = least_squares(&pts);
        assert!((s + 2.0).abs() < 1e-14 && (b - 3.0).abs() < 1e-14);
    }
}
