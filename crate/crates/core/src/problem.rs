//! Coefficients `a`, `sigma0`, `sigma1` of the stationary equation
//!
//! ```text
//! Laplacian(w) + a w^2 (1 - w) - (sigma0 + eps sigma1) w = 0
//! ```
//!
//! and the manufactured-solution fixture that supplies an exact pulse.
//!
//! The manufactured target is `A sech(kappa |x|) (1 + bump)`, `kappa =
//! sqrt(delta)`, summed over the nearest periodic images so that it is smooth
//! on the torus. `sigma0` is then recovered in closed form from the analytic
//! Laplacian, which keeps it well defined where the target underflows.

use crate::error::{PulseError, Result};
use crate::grid::{GridSpec, RealField};

/// Relative position of the boundary shell: points with `max |x_i| >= 0.9 L`.
pub const SHELL_FRACTION: f64 = 0.9;

/// Positivity floor for division in [`manufactured_sigma0`].
const DIVISION_FLOOR: f64 = 1e-300;

/// Fixed asymmetric Gaussian bump `height * exp(-|x - center|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub height: f64,
    pub center: [f64; 3],
}

impl Default for Bump {
    fn default() -> Self {
        Self {
            height: 0.05,
            center: [1.0, 0.5, 0.25],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sigma0Spec {
    /// `sigma0` reverse-engineered from the target `A sech(sqrt(delta)|x|)`,
    /// optionally multiplied by `1 + bump` to break radial symmetry.
    Manufactured {
        amplitude: f64,
        bump: Option<Bump>,
    },
    /// `delta - depth * exp(-|x|^2 / width^2)`.
    GaussianWell { depth: f64, width: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sigma1Spec {
    /// `gamma * exp(-|x|^2 / width^2)`.
    Gaussian { gamma: f64, width: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSpec {
    pub a: f64,
    pub delta: f64,
    pub sigma0: Sigma0Spec,
    pub sigma1: Sigma1Spec,
}

impl CoefficientSpec {
    /// The acceptance fixture: `a = 1`, `delta = 1`, `A = 0.4` with the
    /// symmetry-breaking bump, `sigma1 = exp(-|x|^2)`.
    pub fn fixture() -> Self {
        Self {
            a: 1.0,
            delta: 1.0,
            sigma0: Sigma0Spec::Manufactured {
                amplitude: 0.4,
                bump: Some(Bump::default()),
            },
            sigma1: Sigma1Spec::Gaussian {
                gamma: 1.0,
                width: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PulseError::InvalidInput(msg));
        if !(self.a.is_finite() && self.a > 0.0) {
            return bad(format!("a must be positive, got {}", self.a));
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        match &self.sigma0 {
            Sigma0Spec::Manufactured { amplitude, bump } => {
                if !(*amplitude > 0.0 && *amplitude < 1.0) {
                    return bad(format!("manufactured amplitude must lie in (0, 1), got {amplitude}"));
                }
                if let Some(b) = bump {
                    if !(b.height > -1.0 && b.height.is_finite()) {
                        return bad(format!("bump height must exceed -1, got {}", b.height));
                    }
                }
            }
            Sigma0Spec::GaussianWell { depth, width } => {
                if !(depth.is_finite() && *width > 0.0) {
                    return bad("gaussian well needs finite depth and positive width".into());
                }
            }
        }
        if let Sigma1Spec::Gaussian { gamma, width } = self.sigma1 {
            if !(gamma.is_finite() && width > 0.0) {
                return bad("sigma1 gaussian needs finite gamma and positive width".into());
            }
        }
        Ok(())
    }

    pub fn target(&self) -> Option<ManufacturedTarget> {
        match self.sigma0 {
            Sigma0Spec::Manufactured { amplitude, bump } => Some(ManufacturedTarget {
                amplitude,
                kappa: self.delta.sqrt(),
                bump,
            }),
            Sigma0Spec::GaussianWell { .. } => None,
        }
    }
}

/// Sampled coefficients on one grid.
#[derive(Debug, Clone)]
pub struct CoefficientFields {
    pub sigma0: RealField,
    pub sigma1: RealField,
    pub a: f64,
    pub delta: f64,
    /// Exact pulse when `sigma0` was manufactured.
    pub target: Option<RealField>,
}

impl CoefficientFields {
    pub fn grid(&self) -> &GridSpec {
        self.sigma0.grid()
    }

    pub fn sigma1_is_zero(&self) -> bool {
        self.sigma1.sup_norm() == 0.0
    }
}

/// Exact pulse `A sech(kappa r) (1 + bump)` of the manufactured fixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedTarget {
    pub amplitude: f64,
    pub kappa: f64,
    pub bump: Option<Bump>,
}

impl ManufacturedTarget {
    /// Value and Laplacian of a single (non-periodized) copy in `d` dimensions.
    pub fn value_and_laplacian(&self, x: [f64; 3], d: usize) -> (f64, f64) {
        let kappa = self.kappa;
        let r = norm(x, d);
        let s = sech(kappa * r);
        let t = (kappa * r).tanh();
        // tanh(kappa r) / r, continuous at the origin
        let t_over_r = if r > 1e-8 { t / r } else { kappa };
        let f = self.amplitude * s;
        let lap_f = f * (kappa * kappa * (1.0 - 2.0 * s * s) - (d as f64 - 1.0) * kappa * t_over_r);

        match self.bump {
            None => (f, lap_f),
            Some(bump) => {
                let mut dist2 = 0.0;
                for axis in 0..d {
                    let dx = x[axis] - bump.center[axis];
                    dist2 += dx * dx;
                }
                let b = bump.height * (-dist2).exp();
                let g = 1.0 + b;
                let lap_g = b * (4.0 * dist2 - 2.0 * d as f64);
                // grad f = -f kappa tanh(kappa r)/r x ; grad g = -2 b (x - c)
                let mut cross = 0.0;
                for axis in 0..d {
                    let grad_f = -f * kappa * t_over_r * x[axis];
                    let grad_g = -2.0 * b * (x[axis] - bump.center[axis]);
                    cross += grad_f * grad_g;
                }
                (f * g, g * lap_f + 2.0 * cross + f * lap_g)
            }
        }
    }

    /// Target and its exact Laplacian, summed over the `3^d` nearest periodic
    /// images.
    pub fn periodized(&self, grid: &GridSpec) -> (RealField, RealField) {
        let d = grid.dim();
        let period = 2.0 * grid.half_period();
        let shifts = image_shifts(d);
        let mut w = Vec::with_capacity(grid.len());
        let mut lap = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let x = grid.point(idx);
            let (mut sw, mut sl) = (0.0, 0.0);
            for m in &shifts {
                let mut y = x;
                for axis in 0..d {
                    y[axis] += period * m[axis];
                }
                let (v, l) = self.value_and_laplacian(y, d);
                sw += v;
                sl += l;
            }
            w.push(sw);
            lap.push(sl);
        }
        (
            RealField::new(grid, w).expect("finite target"),
            RealField::new(grid, lap).expect("finite laplacian"),
        )
    }

    pub fn field(&self, grid: &GridSpec) -> RealField {
        self.periodized(grid).0
    }
}

/// Evaluates the analytic descriptors on `grid` and checks that `sigma0`
/// settles to `delta` and `sigma1` to zero on the boundary shell.
pub fn eval_coefficients(spec: &CoefficientSpec, grid: &GridSpec) -> Result<CoefficientFields> {
    spec.validate()?;
    let d = grid.dim();

    let (sigma0, target) = match &spec.sigma0 {
        Sigma0Spec::Manufactured { .. } => {
            let target = spec.target().expect("manufactured spec has a target");
            let (w, lap) = target.periodized(grid);
            let values = w
                .values()
                .iter()
                .zip(lap.values())
                .map(|(&w, &l)| l / w + spec.a * w * (1.0 - w))
                .collect();
            (RealField::new(grid, values)?, Some(w))
        }
        Sigma0Spec::GaussianWell { depth, width } => {
            let (delta, depth, width) = (spec.delta, *depth, *width);
            let f = RealField::from_fn(grid, |x| delta - depth * (-norm2(x, d) / (width * width)).exp());
            (f, None)
        }
    };

    let sigma1 = match spec.sigma1 {
        Sigma1Spec::Gaussian { gamma, width } => {
            RealField::from_fn(grid, |x| gamma * (-norm2(x, d) / (width * width)).exp())
        }
        Sigma1Spec::Zero => RealField::zeros(grid),
    };

    let kappa = spec.delta.sqrt();
    let sigma0_envelope = |r: f64| match &spec.sigma0 {
        Sigma0Spec::Manufactured { .. } => (d as f64 - 1.0) * kappa / r + 1e-5,
        Sigma0Spec::GaussianWell { .. } => 1e-6,
    };
    check_far_field(&sigma0, spec.delta, sigma0_envelope)?;
    check_far_field(&sigma1, 0.0, |_| 1e-6)?;

    Ok(CoefficientFields {
        sigma0,
        sigma1,
        a: spec.a,
        delta: spec.delta,
        target,
    })
}

/// Indices of the boundary shell, `max |x_i| >= 0.9 L`.
pub fn boundary_shell(grid: &GridSpec) -> Vec<usize> {
    let edge = SHELL_FRACTION * grid.half_period();
    (0..grid.len())
        .filter(|&i| {
            let x = grid.point(i);
            x[..grid.dim()].iter().any(|c| c.abs() >= edge)
        })
        .collect()
}

fn check_far_field(f: &RealField, limit: f64, envelope: impl Fn(f64) -> f64) -> Result<()> {
    let grid = f.grid();
    for idx in boundary_shell(grid) {
        let r = grid.radius(idx);
        let deviation = (f.values()[idx] - limit).abs();
        let bound = envelope(r);
        if deviation > bound {
            return Err(PulseError::BoxTooSmall {
                deviation,
                envelope: bound,
                radius: r,
            });
        }
    }
    Ok(())
}

/// `sigma0 = Laplacian(w)/w + a w (1 - w)` with the spectral Laplacian, so
/// that `w` solves the discrete unperturbed equation exactly.
pub fn manufactured_sigma0(w0_target: &RealField, a: f64) -> Result<RealField> {
    if let Some((index, &value)) = w0_target
        .values()
        .iter()
        .enumerate()
        .find(|(_, &v)| v.is_nan() || v < DIVISION_FLOOR)
    {
        return Err(PulseError::NonPositiveTarget { index, value });
    }
    let lap = w0_target.laplacian();
    w0_target.zip_map(&lap, |w, l| l / w + a * w * (1.0 - w))
}

/// `Laplacian(w) + a w^2 (1 - w) - (sigma0 + eps sigma1) w`, pointwise.
pub fn stationary_residual(w: &RealField, coeffs: &CoefficientFields, eps: f64) -> Result<RealField> {
    w.same_grid(&coeffs.sigma0)?;
    let lap = w.laplacian();
    let a = coeffs.a;
    let values = w
        .values()
        .iter()
        .zip(lap.values())
        .zip(coeffs.sigma0.values().iter().zip(coeffs.sigma1.values()))
        .map(|((&w, &l), (&s0, &s1))| l + a * w * w * (1.0 - w) - (s0 + eps * s1) * w)
        .collect();
    RealField::new(w.grid(), values)
}

fn image_shifts(d: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for i in -1..=1 {
        for j in -1..=1 {
            if d == 2 {
                out.push([i as f64, j as f64, 0.0]);
            } else {
                for k in -1..=1 {
                    out.push([i as f64, j as f64, k as f64]);
                }
            }
        }
    }
    out
}

fn sech(x: f64) -> f64 {
    let e = (-x.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

fn norm2(x: [f64; 3], d: usize) -> f64 {
    x[..d].iter().map(|c| c * c).sum()
}

fn norm(x: [f64; 3], d: usize) -> f64 {
    norm2(x, d).sqrt()
}
