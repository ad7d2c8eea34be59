//! Measured values of the constants in the existence argument and the
//! `(rho, eps)` region where both the map-into-ball and contraction
//! inequalities hold.

use std::io::Write;

use crate::base_pulse::BasePulse;
use crate::error::{PulseError, Result};
use crate::grid::GridSpec;
use crate::linearized::LinearizedOperator;
use crate::problem::CoefficientFields;

/// Added to the left side of strict inequalities.
pub const STRICT_SLACK: f64 = 1e-12;

/// Rows in the default radius grid.
pub const DEFAULT_RHO_POINTS: usize = 64;

/// Smallest radius in the default grid.
pub const DEFAULT_RHO_MIN: f64 = 1e-4;

/// Sharp constant of `||u||_inf <= c_e ||u||_H2` on the grid's trigonometric
/// polynomials: `sqrt(sum_k (1 + |k|^4)^-1 / (2L)^d)`.
pub fn embedding_constant(grid: &GridSpec) -> f64 {
    let sum: f64 = grid.wavenumber_sq().iter().map(|k2| 1.0 / (1.0 + k2 * k2)).sum();
    (sum / grid.box_volume()).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsReport {
    pub c_e: f64,
    /// `||L0^-1||` from L2 to H2.
    pub inv_norm: f64,
    pub w0_h2: f64,
    pub sigma1_sup: f64,
    pub a: f64,
}

impl ConstantsReport {
    /// Collects the constants; computes the inverse norm if the operator
    /// does not carry one yet.
    pub fn measure(op: &mut LinearizedOperator, base: &BasePulse, coeffs: &CoefficientFields) -> Result<Self> {
        let inv_norm = match op.inv_norm() {
            Some(m) => m,
            None => op.l2_to_h2_norm()?,
        };
        let report = Self {
            c_e: embedding_constant(base.w0.grid()),
            inv_norm,
            w0_h2: base.w0.h2_norm(),
            sigma1_sup: coeffs.sigma1.sup_norm(),
            a: coeffs.a,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("c_e", self.c_e), ("inv_norm", self.inv_norm), ("w0_h2", self.w0_h2)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PulseError::InvariantViolation(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.sigma1_sup >= 0.0) || !(self.a >= 0.0) {
            return Err(PulseError::InvariantViolation("sigma1_sup and a must be non-negative".into()));
        }
        Ok(())
    }

    fn quad(&self) -> f64 {
        self.a * self.c_e * (1.0 + 3.0 * self.c_e * self.w0_h2)
    }

    fn cubic(&self) -> f64 {
        self.a * self.c_e * self.c_e
    }

    /// Bound on `||t v||_H2` over the ball of radius `rho`; the ball maps
    /// into itself when this is at most `rho`.
    pub fn ball_bound(&self, rho: f64, eps: f64) -> f64 {
        self.inv_norm
            * (self.quad() * rho * rho + self.cubic() * rho.powi(3) + eps * self.sigma1_sup * (rho + self.w0_h2))
    }

    /// Lipschitz bound of `t` on the ball; a contraction when below 1.
    pub fn contraction_bound(&self, rho: f64, eps: f64) -> f64 {
        self.inv_norm * (2.0 * self.quad() * rho + 3.0 * self.cubic() * rho * rho + eps * self.sigma1_sup)
    }

    /// Upper bound on `||w_p - eps w1||_H2` given the measured `||w_p||_H2`.
    pub fn remainder_bound(&self, eps: f64, wp_h2: f64) -> f64 {
        self.inv_norm * (self.quad() * wp_h2 + self.cubic() * wp_h2 * wp_h2 + eps * self.sigma1_sup) * wp_h2
    }

    /// Both inequalities hold at `(rho, eps)` and `rho < ||w0||_H2`.
    pub fn certifies(&self, rho: f64, eps: f64) -> bool {
        rho > 0.0
            && eps >= 0.0
            && rho + STRICT_SLACK < self.w0_h2
            && self.ball_bound(rho, eps) <= rho
            && self.contraction_bound(rho, eps) + STRICT_SLACK < 1.0
    }

    /// `DEFAULT_RHO_POINTS` log-spaced radii in `[1e-4, ||w0||_H2)`.
    pub fn default_rho_grid(&self) -> Vec<f64> {
        log_grid(DEFAULT_RHO_MIN, self.w0_h2, DEFAULT_RHO_POINTS)
    }

    pub fn admissible_region(&self, rho_grid: &[f64]) -> Region {
        let rows = rho_grid.iter().map(|&rho| self.region_row(rho)).collect();
        Region {
            rows,
            unbounded: self.sigma1_sup == 0.0,
        }
    }

    fn region_row(&self, rho: f64) -> RegionRow {
        let ball_num = rho / self.inv_norm - self.quad() * rho * rho - self.cubic() * rho.powi(3);
        let contr_num = 1.0 / self.inv_norm - 2.0 * self.quad() * rho - 3.0 * self.cubic() * rho * rho - STRICT_SLACK;
        let (eps_ball, eps_contr) = if self.sigma1_sup == 0.0 {
            (unbounded_limit(ball_num), unbounded_limit(contr_num))
        } else {
            (
                ball_num / (self.sigma1_sup * (rho + self.w0_h2)),
                contr_num / self.sigma1_sup,
            )
        };
        let in_radius = rho + STRICT_SLACK < self.w0_h2;
        let eps_star = if in_radius { eps_ball.min(eps_contr).max(0.0) } else { 0.0 };
        RegionRow {
            rho,
            eps_ball,
            eps_contr,
            eps_star,
            admissible: in_radius && eps_star > 0.0,
        }
    }
}

fn unbounded_limit(numerator: f64) -> f64 {
    if numerator >= 0.0 {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    }
}

/// `points` geometric values from `lo` up to (excluding) `hi`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let ratio = (hi / lo).ln();
    (0..points)
        .map(|i| lo * (ratio * i as f64 / points as f64).exp())
        .collect()
}

/// `points` geometric values from `lo` to `hi` inclusive.
pub fn geometric_points(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).ln();
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo * (ratio * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionRow {
    pub rho: f64,
    pub eps_ball: f64,
    pub eps_contr: f64,
    pub eps_star: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub rows: Vec<RegionRow>,
    /// `sigma1 = 0`: eps is unconstrained wherever the row is admissible.
    pub unbounded: bool,
}

impl Region {
    /// Largest admissible radius on the grid.
    pub fn rho_star(&self) -> Option<f64> {
        self.rows.iter().filter(|r| r.admissible).map(|r| r.rho).reduce(f64::max)
    }

    /// Admissible row with the largest `eps_star`.
    pub fn best(&self) -> Option<RegionRow> {
        self.rows
            .iter()
            .filter(|r| r.admissible)
            .copied()
            .reduce(|a, b| if b.eps_star > a.eps_star { b } else { a })
    }

    /// The admissible rows form one contiguous block and `eps_contr` does
    /// not grow with `rho`.
    pub fn is_well_formed(&self) -> bool {
        let flags: Vec<bool> = self.rows.iter().map(|r| r.admissible).collect();
        let switches = flags.windows(2).filter(|w| w[0] != w[1]).count();
        let contiguous = switches <= 2 && !(switches == 2 && flags[0]);
        let nested = self.rows.windows(2).all(|w| w[1].rho < w[0].rho || w[1].eps_contr <= w[0].eps_contr);
        contiguous && nested
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rho,eps_ball,eps_contr,eps_star,admissible")?;
        for r in &self.rows {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.rho, r.eps_ball, r.eps_contr, r.eps_star, r.admissible as u8
            )?;
        }
        Ok(())
    }
}
