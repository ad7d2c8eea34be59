//! First-order response `w1 = -L0^-1 [sigma1 w0]` and the sweep that measures
//! how fast `w_p(eps) - eps w1` vanishes.

use std::io::Write;

use crate::base_pulse::{least_squares, BasePulse};
use crate::constants::ConstantsReport;
use crate::contraction_solver::{picard_solve, PerturbationResult, PicardConfig};
use crate::error::{PulseError, Result};
use crate::grid::RealField;
use crate::linearized::LinearizedOperator;
use crate::problem::CoefficientFields;

/// Sweeps need at least this many points...
pub const MIN_SWEEP_POINTS: usize = 6;
/// ...spanning at least this ratio `eps_max / eps_min`.
pub const MIN_SWEEP_SPAN: f64 = 10.0;

pub fn first_order_term(op: &LinearizedOperator, base: &BasePulse, coeffs: &CoefficientFields) -> Result<RealField> {
    let source = coeffs.sigma1.mul(&base.w0)?;
    Ok(op.solve(&source, op.krylov().tol)?.scaled(-1.0))
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub eps: f64,
    pub wp_h2: f64,
    pub remainder_h2: f64,
    pub residual_l2: f64,
    /// Upper bound on the remainder from the measured constants.
    pub bound: f64,
    pub iterations: usize,
    pub measured_ratio: f64,
    pub certified: bool,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Log-log slope of the remainder against eps.
    pub slope: f64,
    /// Log-log slope of `||w_p||_H2` against eps.
    pub slope_first: f64,
    pub w1_h2: f64,
    pub results: Vec<PerturbationResult>,
}

impl SweepReport {
    pub fn eps_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.eps).collect()
    }

    pub fn wp_norms(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.wp_h2).collect()
    }

    pub fn remainder_norms(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.remainder_h2).collect()
    }

    /// Every remainder sits below its bound.
    pub fn bounds_hold(&self) -> bool {
        self.points.iter().all(|p| p.remainder_h2 <= p.bound)
    }

    /// `w_p` norms and remainders increase with eps.
    pub fn is_monotone(&self) -> bool {
        self.points
            .windows(2)
            .all(|w| w[1].wp_h2 >= w[0].wp_h2 - 1e-10 && w[1].remainder_h2 > w[0].remainder_h2)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "eps,wp_h2,remainder_h2,residual_l2,bound_remainder,iterations,measured_ratio,certified")?;
        for p in &self.points {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{}",
                p.eps, p.wp_h2, p.remainder_h2, p.residual_l2, p.bound, p.iterations, p.measured_ratio, p.certified as u8
            )?;
        }
        Ok(())
    }

    /// Two whitespace-separated columns `eps remainder` for a log-log plot.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# eps remainder_h2")?;
        for p in &self.points {
            writeln!(out, "{:.16e} {:.16e}", p.eps, p.remainder_h2)?;
        }
        Ok(())
    }
}

pub fn remainder_sweep(
    op: &LinearizedOperator,
    base: &BasePulse,
    coeffs: &CoefficientFields,
    consts: &ConstantsReport,
    eps_values: &[f64],
    picard: &PicardConfig,
) -> Result<SweepReport> {
    if eps_values.len() < MIN_SWEEP_POINTS {
        return Err(PulseError::DegenerateSweep(format!(
            "need at least {MIN_SWEEP_POINTS} points, got {}",
            eps_values.len()
        )));
    }
    if eps_values.iter().any(|&e| !(e > 0.0)) || eps_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PulseError::DegenerateSweep("eps values must be positive and increasing".into()));
    }
    let span = eps_values[eps_values.len() - 1] / eps_values[0];
    if span < MIN_SWEEP_SPAN * (1.0 - 1e-9) {
        return Err(PulseError::DegenerateSweep(format!("eps values span only a factor {span:.3}")));
    }
    if coeffs.sigma1_is_zero() {
        return Err(PulseError::DegenerateSweep("sigma1 vanishes, so every remainder is zero".into()));
    }

    let w1 = first_order_term(op, base, coeffs)?;
    let mut points = Vec::with_capacity(eps_values.len());
    let mut results = Vec::with_capacity(eps_values.len());
    for &eps in eps_values {
        let result = picard_solve(op, base, coeffs, eps, picard).map_err(|e| PulseError::SweepPoint {
            eps,
            source: Box::new(e),
        })?;
        let wp_h2 = result.w_p.h2_norm();
        let remainder_h2 = result.w_p.sub(&w1.scaled(eps))?.h2_norm();
        points.push(SweepPoint {
            eps,
            wp_h2,
            remainder_h2,
            residual_l2: result.residual_l2,
            bound: consts.remainder_bound(eps, wp_h2),
            iterations: result.iterations,
            measured_ratio: result.measured_ratio,
            certified: consts.certifies(picard.rho, eps),
        });
        results.push(result);
    }

    let log_fit = |f: fn(&SweepPoint) -> f64| {
        let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.eps.ln(), f(p).ln())).collect();
        least_squares(&pts).0
    };
    let slope = log_fit(|p| p.remainder_h2);
    let slope_first = log_fit(|p| p.wp_h2);
    Ok(SweepReport {
        points,
        slope,
        slope_first,
        w1_h2: w1.h2_norm(),
        results,
    })
}
