//! Periodic spectral discretization of the box `[-L, L)^d`.
//!
//! Fields are sampled on a uniform tensor grid with `n` points per axis and
//! stored row-major (the last axis is contiguous). Differential operators act
//! as Fourier multipliers. The forward transform divides by `n^d`, so the
//! zero mode of a constant field `c` is exactly `c`.
//!
//! Two quadratures live side by side and must agree (Parseval): the
//! rectangle rule `h^d * sum(f^2)` in physical space and
//! `(2L)^d * sum(|f_k|^2)` in spectral space.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{PulseError, Result};

/// Fraction of the spectrum (per axis, at the top end) inspected by
/// [`RealField::spectral_tail`].
const TAIL_BAND: usize = 16;

pub struct Grid {
    dim: usize,
    n: usize,
    half_period: f64,
    spacing: f64,
    axis_k: Vec<f64>,
    k2: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Shared handle to a grid. Cloning is cheap; equality compares `(d, n, L)`.
#[derive(Clone)]
pub struct GridSpec(Arc<Grid>);

impl Deref for GridSpec {
    type Target = Grid;

    fn deref(&self) -> &Grid {
        &self.0
    }
}

impl PartialEq for GridSpec {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.dim == other.dim
                && self.n == other.n
                && self.half_period.to_bits() == other.half_period.to_bits())
    }
}

impl fmt::Debug for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GridSpec")
            .field("d", &self.dim)
            .field("n", &self.n)
            .field("L", &self.half_period)
            .finish()
    }
}

/// Builds the grid for `[-L, L)^d` with `n` points per axis.
pub fn make_grid(d: usize, n: usize, half_period: f64) -> Result<GridSpec> {
    GridSpec::new(d, n, half_period)
}

impl GridSpec {
    pub fn new(d: usize, n: usize, half_period: f64) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(PulseError::InvalidGrid(format!("dimension must be 2 or 3, got {d}")));
        }
        if n < 8 || n % 2 != 0 {
            return Err(PulseError::InvalidGrid(format!(
                "points per axis must be even and at least 8, got {n}"
            )));
        }
        if !(half_period.is_finite() && half_period > 0.0) {
            return Err(PulseError::InvalidGrid(format!(
                "half-period must be positive, got {half_period}"
            )));
        }

        let base = std::f64::consts::PI / half_period;
        let axis_k: Vec<f64> = (0..n)
            .map(|m| {
                let m = m as i64;
                let signed = if m < (n / 2) as i64 { m } else { m - n as i64 };
                base * signed as f64
            })
            .collect();

        let len = n.pow(d as u32);
        let mut k2 = vec![0.0; len];
        for (idx, slot) in k2.iter_mut().enumerate() {
            let mut rest = idx;
            let mut acc = 0.0;
            for _ in 0..d {
                let k = axis_k[rest % n];
                acc += k * k;
                rest /= n;
            }
            *slot = acc;
        }

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);

        Ok(Self(Arc::new(Grid {
            dim: d,
            n,
            half_period,
            spacing: 2.0 * half_period / n as f64,
            axis_k,
            k2,
            forward,
            inverse,
        })))
    }
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn half_period(&self) -> f64 {
        self.half_period
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.k2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k2.is_empty()
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    /// Box volume `(2L)^d`.
    pub fn box_volume(&self) -> f64 {
        (2.0 * self.half_period).powi(self.dim as i32)
    }

    /// Per-axis wavenumbers `(pi/L) * (0, 1, ..., n/2-1, -n/2, ..., -1)`.
    pub fn axis_wavenumbers(&self) -> &[f64] {
        &self.axis_k
    }

    /// `|k|^2` for every mode, in the same row-major order as the samples.
    pub fn wavenumber_sq(&self) -> &[f64] {
        &self.k2
    }

    /// Multi-index of a flat index, most significant axis first.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = idx;
        for axis in (0..self.dim).rev() {
            out[axis] = rest % self.n;
            rest /= self.n;
        }
        out
    }

    /// Physical coordinates of a grid point; unused components are zero.
    pub fn point(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let mut x = [0.0; 3];
        for axis in 0..self.dim {
            x[axis] = -self.half_period + self.spacing * mi[axis] as f64;
        }
        x
    }

    pub fn radius(&self, idx: usize) -> f64 {
        let x = self.point(idx);
        (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    }

    /// Wavenumber vector of a spectral index; unused components are zero.
    pub fn wavevector(&self, idx: usize) -> [f64; 3] {
        let mi = self.multi_index(idx);
        let mut k = [0.0; 3];
        for axis in 0..self.dim {
            k[axis] = self.axis_k[mi[axis]];
        }
        k
    }

    /// Flat index of the grid point nearest to the origin (exactly the origin).
    pub fn origin_index(&self) -> usize {
        let half = self.n / 2;
        (0..self.dim).fold(0, |acc, _| acc * self.n + half)
    }

    fn is_nyquist(&self, idx: usize, axis: usize) -> bool {
        self.multi_index(idx)[axis] == self.n / 2
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let total = data.len();
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];

        // contiguous last axis: every chunk of n is one line
        fft.process_with_scratch(data, &mut scratch);

        // remaining axes: transpose each (n x stride) block so lines become contiguous
        let mut block = Vec::new();
        for axis in 0..self.dim - 1 {
            let stride = n.pow((self.dim - 1 - axis) as u32);
            let span = stride * n;
            block.resize(span, Complex64::new(0.0, 0.0));
            for start in (0..total).step_by(span) {
                let chunk = &mut data[start..start + span];
                for j in 0..n {
                    for s in 0..stride {
                        block[s * n + j] = chunk[j * stride + s];
                    }
                }
                fft.process_with_scratch(&mut block, &mut scratch);
                for j in 0..n {
                    for s in 0..stride {
                        chunk[j * stride + s] = block[s * n + j];
                    }
                }
            }
        }
    }
}

/// Fourier coefficients of a real field, normalized so a constant `c` maps
/// to zero-mode `c`.
#[derive(Clone)]
pub struct Spectrum {
    grid: GridSpec,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn from_coeffs(grid: &GridSpec, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(PulseError::InvalidInput(format!(
                "expected {} coefficients, got {}",
                grid.len(),
                coeffs.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            coeffs,
        })
    }

    /// Multiplies each coefficient by a real symbol evaluated at `|k|^2`.
    pub fn scale_by(&mut self, symbol: impl Fn(f64) -> f64) {
        for (c, &k2) in self.coeffs.iter_mut().zip(self.grid.k2.iter()) {
            *c *= symbol(k2);
        }
    }

    /// Back to physical space; the imaginary part (roundoff for real data)
    /// is discarded.
    pub fn to_field(&self) -> RealField {
        let mut data = self.coeffs.clone();
        self.grid.transform(&mut data, &self.grid.inverse);
        RealField {
            grid: self.grid.clone(),
            values: data.into_iter().map(|c| c.re).collect(),
        }
    }

    /// `(2L)^d * sum(weight(|k|^2) * |f_k|^2)`.
    pub fn weighted_energy(&self, weight: impl Fn(f64) -> f64) -> f64 {
        let sum: f64 = self
            .coeffs
            .iter()
            .zip(self.grid.k2.iter())
            .map(|(c, &k2)| weight(k2) * c.norm_sqr())
            .sum();
        self.grid.box_volume() * sum
    }
}

/// Samples of a real function on a grid.
#[derive(Clone)]
pub struct RealField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl fmt::Debug for RealField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RealField")
            .field("grid", &self.grid)
            .field("sup", &self.sup_norm())
            .finish()
    }
}

impl RealField {
    pub fn new(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(PulseError::InvalidInput(format!(
                "expected {} samples, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(PulseError::NonFinite(idx));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Wraps samples produced by internal arithmetic on finite inputs.
    pub(crate) fn from_raw(grid: &GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &GridSpec, c: f64) -> Self {
        Self {
            grid: grid.clone(),
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f(x)` at every grid point.
    pub fn from_fn(grid: &GridSpec, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.point(i))).collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn same_grid(&self, other: &RealField) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(PulseError::GridMismatch)
        }
    }

    pub fn to_spectral(&self) -> Spectrum {
        let mut data: Vec<Complex64> =
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.grid.transform(&mut data, &self.grid.forward);
        let scale = 1.0 / self.grid.len() as f64;
        for c in &mut data {
            *c *= scale;
        }
        Spectrum {
            grid: self.grid.clone(),
            coeffs: data,
        }
    }

    /// Applies a real, radially symmetric Fourier multiplier `symbol(|k|^2)`.
    pub fn apply_symbol(&self, symbol: impl Fn(f64) -> f64) -> RealField {
        let mut spec = self.to_spectral();
        spec.scale_by(symbol);
        spec.to_field()
    }

    pub fn laplacian(&self) -> RealField {
        self.apply_symbol(|k2| -k2)
    }

    /// Spectral derivative along `axis` (Nyquist mode dropped).
    pub fn partial(&self, axis: usize) -> RealField {
        assert!(axis < self.grid.dim, "axis out of range");
        let mut spec = self.to_spectral();
        for (idx, c) in spec.coeffs.iter_mut().enumerate() {
            if self.grid.is_nyquist(idx, axis) {
                *c = Complex64::new(0.0, 0.0);
            } else {
                let k = self.grid.wavevector(idx)[axis];
                *c *= Complex64::new(0.0, k);
            }
        }
        spec.to_field()
    }

    /// Multiplies `f_k` by `sqrt(1 + |k|^4)`, so that
    /// `l2_norm(sobolev_scale(f)) == h2_norm(f)`.
    pub fn sobolev_scale(&self) -> RealField {
        self.apply_symbol(|k2| (1.0 + k2 * k2).sqrt())
    }

    /// `sqrt(||f||^2 + ||Laplacian f||^2)`, evaluated in Fourier space.
    pub fn h2_norm(&self) -> f64 {
        self.to_spectral()
            .weighted_energy(|k2| 1.0 + k2 * k2)
            .sqrt()
    }

    /// The same norm by physical-space quadrature of `f^2 + (Laplacian f)^2`.
    pub fn h2_norm_quadrature(&self) -> f64 {
        let lap = self.laplacian();
        let sum: f64 = self
            .values
            .iter()
            .zip(lap.values.iter())
            .map(|(f, g)| f * f + g * g)
            .sum();
        (self.grid.cell_volume() * sum).sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        (self.grid.cell_volume() * dot(&self.values, &self.values)).sqrt()
    }

    pub fn l2_inner(&self, other: &RealField) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.cell_volume() * dot(&self.values, &other.values))
    }

    /// Largest relative coefficient magnitude in the outermost band of the
    /// spectrum (any axis index within `n/16` of Nyquist).
    pub fn spectral_tail(&self) -> f64 {
        let spec = self.to_spectral();
        let n = self.grid.n;
        let cutoff = n / 2 - n / TAIL_BAND;
        let mut peak: f64 = 0.0;
        let mut tail: f64 = 0.0;
        for (idx, c) in spec.coeffs.iter().enumerate() {
            let mag = c.norm();
            peak = peak.max(mag);
            let mi = self.grid.multi_index(idx);
            let outer = (0..self.grid.dim).any(|axis| {
                let m = mi[axis];
                let signed = if m < n / 2 { m } else { n - m };
                signed >= cutoff
            });
            if outer {
                tail = tail.max(mag);
            }
        }
        if peak == 0.0 {
            0.0
        } else {
            tail / peak
        }
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> Result<RealField> {
        self.same_grid(other)?;
        Ok(RealField {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(other.values.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> RealField {
        self.map(|v| s * v)
    }

    pub fn add(&self, other: &RealField) -> Result<RealField> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &RealField) -> Result<RealField> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &RealField) -> Result<RealField> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn laplacian(f: &RealField) -> RealField {
    f.laplacian()
}

pub fn h2_norm(f: &RealField) -> f64 {
    f.h2_norm()
}

pub fn sup_norm(f: &RealField) -> f64 {
    f.sup_norm()
}

pub fn l2_norm(f: &RealField) -> f64 {
    f.l2_norm()
}

pub fn l2_inner(f: &RealField, g: &RealField) -> Result<f64> {
    f.l2_inner(g)
}

pub fn sobolev_scale(f: &RealField) -> RealField {
    f.sobolev_scale()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
