//! The linearization `L0 = -Laplacian + W(x)` around the unperturbed pulse,
//! with `W = a (3 w0^2 - 2 w0) + sigma0`.
//!
//! Solves use preconditioned MINRES with the Fourier multiplier
//! `(-Laplacian + delta)^-1`; MINRES is required because `L0` is typically
//! indefinite (it has a negative eigenvalue along the pulse itself). Before
//! any solve the operator must pass the kernel check, which runs the
//! eigensolver and records `lambda_min`.

use std::cell::RefCell;
use std::io::Write;

use crate::base_pulse::BasePulse;
use crate::error::{PulseError, Result};
use crate::grid::{GridSpec, RealField};
use crate::krylov::{self, KrylovConfig, MinresOutcome};
use crate::problem::{boundary_shell, CoefficientFields};

/// Smallest admissible `|lambda_min|`; below it the kernel is treated as
/// nontrivial.
pub const KERNEL_THRESHOLD: f64 = 1e-6;

/// Residual target for each returned eigenpair.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-7;

/// Relative convergence of the inverse-norm estimate.
pub const INV_NORM_TOL: f64 = 1e-6;

/// Relative tolerance of the solves inside the inverse-norm iteration. The
/// right sides there carry the `1 + |k|^4` weight, which puts 1e-12 below
/// round-off on fine grids.
pub const INV_NORM_SOLVE_TOL: f64 = 1e-10;

/// `-Laplacian + potential`, without any kernel bookkeeping. Used directly by
/// the Newton solver, whose Jacobians change every step.
#[derive(Debug, Clone)]
pub struct SchrodingerOperator {
    potential: RealField,
    shift: f64,
}

impl SchrodingerOperator {
    /// `shift` is the `delta` of the preconditioner `(-Laplacian + delta)^-1`.
    pub fn new(potential: RealField, shift: f64) -> Self {
        assert!(shift > 0.0, "preconditioner shift must be positive");
        Self { potential, shift }
    }

    pub fn grid(&self) -> &GridSpec {
        self.potential.grid()
    }

    pub fn potential(&self) -> &RealField {
        &self.potential
    }

    pub(crate) fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        let grid = self.grid();
        let f = RealField::from_raw(grid, v.to_vec());
        let lap = f.laplacian();
        lap.values()
            .iter()
            .zip(self.potential.values())
            .zip(v)
            .map(|((l, w), x)| -l + w * x)
            .collect()
    }

    pub(crate) fn precondition_raw(&self, r: &[f64]) -> Vec<f64> {
        let shift = self.shift;
        RealField::from_raw(self.grid(), r.to_vec())
            .apply_symbol(|k2| 1.0 / (k2 + shift))
            .into_values()
    }

    pub fn apply(&self, f: &RealField) -> Result<RealField> {
        f.same_grid(&self.potential)?;
        Ok(RealField::from_raw(f.grid(), self.apply_raw(f.values())))
    }

    pub fn minres(&self, rhs: &RealField, cfg: &KrylovConfig) -> Result<MinresOutcome> {
        rhs.same_grid(&self.potential)?;
        Ok(krylov::minres(
            |v| self.apply_raw(v),
            |r| self.precondition_raw(r),
            rhs.values(),
            cfg,
        ))
    }
}

/// One eigenpair of `L0` with diagnostics.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// L2-normalized eigenfield.
    pub field: RealField,
    /// `||L0 v - lambda v||_L2`.
    pub residual: f64,
    /// Norm of the projection onto `span{d w0 / d x_k}`, in `[0, 1]`.
    pub translation_overlap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    op: SchrodingerOperator,
    delta: f64,
    lambda_min: Option<f64>,
    inv_norm: Option<f64>,
    krylov: KrylovConfig,
    seed: u64,
}

/// `L0` at the converged base pulse.
pub fn build_linearized(base: &BasePulse, coeffs: &CoefficientFields, krylov: KrylovConfig) -> Result<LinearizedOperator> {
    LinearizedOperator::new(base, coeffs, krylov)
}

impl LinearizedOperator {
    pub fn new(base: &BasePulse, coeffs: &CoefficientFields, krylov: KrylovConfig) -> Result<Self> {
        let w0 = &base.w0;
        w0.same_grid(&coeffs.sigma0)?;
        let a = coeffs.a;
        let potential = w0.zip_map(&coeffs.sigma0, |w, s| a * (3.0 * w * w - 2.0 * w) + s)?;

        Ok(Self::from_potential(potential, coeffs.delta, krylov))
    }

    /// Operator with an explicit potential, e.g. the constant-coefficient
    /// case `W = delta`.
    pub fn from_potential(potential: RealField, delta: f64, krylov: KrylovConfig) -> Self {
        Self {
            op: SchrodingerOperator::new(potential, delta),
            delta,
            lambda_min: None,
            inv_norm: None,
            krylov,
            seed: 0x5eed,
        }
    }

    /// Seed of the random start vectors used by the iterative eigensolvers.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn grid(&self) -> &GridSpec {
        self.op.grid()
    }

    pub fn potential(&self) -> &RealField {
        self.op.potential()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lambda_min(&self) -> Option<f64> {
        self.lambda_min
    }

    pub fn inv_norm(&self) -> Option<f64> {
        self.inv_norm
    }

    pub fn krylov(&self) -> &KrylovConfig {
        &self.krylov
    }

    pub fn schrodinger(&self) -> &SchrodingerOperator {
        &self.op
    }

    /// Largest `|W - sigma0|` on the boundary shell, i.e. how far the pulse
    /// terms of the potential are from having decayed.
    pub fn far_field_gap(&self, sigma0: &RealField) -> Result<f64> {
        self.potential().same_grid(sigma0)?;
        let (w, s) = (self.potential().values(), sigma0.values());
        Ok(boundary_shell(self.grid())
            .into_iter()
            .map(|i| (w[i] - s[i]).abs())
            .fold(0.0, f64::max))
    }

    /// Records an externally computed `lambda_min`, e.g. from a dense solve.
    pub fn set_lambda_min(&mut self, lambda_min: f64) {
        self.lambda_min = Some(lambda_min);
    }

    /// Passes when `|lambda_min| > KERNEL_THRESHOLD`.
    pub fn kernel_check(&self) -> Result<()> {
        match self.lambda_min {
            None => Err(PulseError::KernelNotChecked),
            Some(l) if l.abs() <= KERNEL_THRESHOLD => Err(PulseError::KernelCheckFailed { lambda_min: l }),
            Some(_) => Ok(()),
        }
    }

    pub fn apply(&self, f: &RealField) -> Result<RealField> {
        self.op.apply(f)
    }

    /// `u` with `||L0 u - rhs||_L2 <= tol ||rhs||_L2`.
    pub fn solve(&self, rhs: &RealField, tol: f64) -> Result<RealField> {
        self.kernel_check()?;
        let cfg = KrylovConfig {
            tol,
            max_iters: self.krylov.max_iters,
        };
        let out = self.op.minres(rhs, &cfg)?;
        if !out.converged {
            return Err(PulseError::Stagnation {
                iterations: out.iterations,
                relative_residual: out.relative_residual,
            });
        }
        Ok(RealField::from_raw(rhs.grid(), out.solution))
    }

    /// The `m` algebraically smallest eigenpairs; sets `lambda_min`.
    pub fn smallest_eigenpairs(&mut self, m: usize) -> Result<Vec<EigenPair>> {
        if !(1..=10).contains(&m) {
            return Err(PulseError::InvalidInput(format!("eigenpair count must be in 1..=10, got {m}")));
        }
        let grid = self.grid().clone();
        let guard = m.max(4);
        let out = krylov::lobpcg(
            |v| self.op.apply_raw(v),
            |r| self.op.precondition_raw(r),
            grid.len(),
            m,
            guard,
            0.1 * EIGEN_RESIDUAL_TOL,
            1000,
            self.seed,
        );

        let mut pairs = Vec::with_capacity(m);
        let mut residuals = Vec::with_capacity(m);
        for (value, vector) in out.values.iter().zip(out.vectors) {
            let field = RealField::from_raw(&grid, vector);
            let field = field.scaled(1.0 / field.l2_norm());
            let mut r = self.op.apply(&field)?;
            r = r.sub(&field.scaled(*value))?;
            let residual = r.l2_norm();
            residuals.push(residual);
            pairs.push(EigenPair {
                value: *value,
                field,
                residual,
                translation_overlap: None,
            });
        }
        if residuals.iter().any(|&r| !(r <= EIGEN_RESIDUAL_TOL)) {
            return Err(PulseError::EigenNonConvergence { residuals });
        }
        self.lambda_min = Some(pairs[0].value);
        Ok(pairs)
    }

    /// Largest singular value of `S o L0^-1`, `S = sobolev_scale`: the
    /// discrete `L2 -> H2` norm of the inverse. Sets `inv_norm`.
    pub fn l2_to_h2_norm(&mut self) -> Result<f64> {
        self.kernel_check()?;
        let grid = self.grid().clone();
        let failure: RefCell<Option<PulseError>> = RefCell::new(None);
        let tol = self.krylov.tol.max(INV_NORM_SOLVE_TOL);
        let solve = |v: &[f64]| -> Vec<f64> {
            if failure.borrow().is_some() {
                return vec![0.0; v.len()];
            }
            match self.solve(&RealField::from_raw(&grid, v.to_vec()), tol) {
                Ok(u) => u.into_values(),
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    vec![0.0; v.len()]
                }
            }
        };
        // (S L^-1)^T (S L^-1) = L^-1 S^2 L^-1
        let normal = |v: &[f64]| {
            let u = solve(v);
            let s2u = RealField::from_raw(&grid, u).apply_symbol(|k2| 1.0 + k2 * k2);
            solve(s2u.values())
        };
        let out = krylov::lanczos_largest(normal, grid.len(), INV_NORM_TOL, 300, self.seed ^ 0xa5a5);
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        if !out.converged {
            return Err(PulseError::Stagnation {
                iterations: out.iterations,
                relative_residual: out.residual / out.value.abs().max(f64::MIN_POSITIVE),
            });
        }
        let norm = out.value.max(0.0).sqrt();
        self.inv_norm = Some(norm);
        Ok(norm)
    }

    /// `<L0 f, f> / <f, f>`.
    pub fn rayleigh_quotient(&self, f: &RealField) -> Result<f64> {
        let lf = self.apply(f)?;
        Ok(lf.l2_inner(f)? / f.l2_inner(f)?)
    }
}

/// L2-orthonormal basis of `span{d w0 / d x_k}` (spectral derivatives).
pub fn translation_modes(w0: &RealField) -> Vec<RealField> {
    let mut basis: Vec<RealField> = Vec::new();
    for axis in 0..w0.grid().dim() {
        let mut g = w0.partial(axis);
        for q in &basis {
            let c = q.l2_inner(&g).expect("same grid");
            g = g.sub(&q.scaled(c)).expect("same grid");
        }
        let n = g.l2_norm();
        if n > 0.0 {
            basis.push(g.scaled(1.0 / n));
        }
    }
    basis
}

/// Fills `translation_overlap` of each pair with the norm of its projection
/// onto the translation modes of `w0`.
pub fn annotate_translation_overlap(pairs: &mut [EigenPair], w0: &RealField) {
    let modes = translation_modes(w0);
    for pair in pairs.iter_mut() {
        let overlap = modes
            .iter()
            .map(|q| q.l2_inner(&pair.field).expect("same grid").powi(2))
            .sum::<f64>()
            .sqrt();
        pair.translation_overlap = Some(overlap);
    }
}

/// Projection of each translation mode onto the span of `pairs`: values
/// close to 1 mean the eigensolver found the translational near-kernel.
pub fn translation_capture(pairs: &[EigenPair], w0: &RealField) -> Vec<f64> {
    translation_modes(w0)
        .iter()
        .map(|q| {
            pairs
                .iter()
                .map(|p| q.l2_inner(&p.field).expect("same grid").powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Eigenvalue report: `index,lambda,residual,overlap_dw0`.
pub fn write_eigen_csv<W: Write>(mut out: W, pairs: &[EigenPair]) -> std::io::Result<()> {
    writeln!(out, "index,lambda,residual,overlap_dw0")?;
    for (i, p) in pairs.iter().enumerate() {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{:.16e}",
            i,
            p.value,
            p.residual,
            p.translation_overlap.unwrap_or(f64::NAN)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn constant_operator(d: usize, n: usize, l: f64, delta: f64) -> LinearizedOperator {
        let g = make_grid(d, n, l).unwrap();
        LinearizedOperator::from_potential(RealField::constant(&g, delta), delta, KrylovConfig::default())
    }

    fn random_smooth(g: &GridSpec, seed: u64) -> RealField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        RealField::new(g, v).unwrap().apply_symbol(|k2| (-k2 / 4.0).exp())
    }

    #[test]
    fn zero_and_constant_inputs() {
        let op = constant_operator(2, 16, 4.0, 0.7);
        let g = op.grid().clone();
        assert_eq!(op.apply(&RealField::zeros(&g)).unwrap().sup_norm(), 0.0);
        let c = op.apply(&RealField::constant(&g, 2.0)).unwrap();
        assert!(c.sub(&RealField::constant(&g, 1.4)).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn solve_requires_kernel_check() {
        let op = constant_operator(2, 16, 4.0, 1.0);
        let rhs = RealField::constant(op.grid(), 1.0);
        assert!(matches!(op.solve(&rhs, 1e-10), Err(PulseError::KernelNotChecked)));
    }

    #[test]
    fn kernel_check_rejects_tiny_lambda() {
        let mut op = constant_operator(2, 16, 4.0, 1.0);
        op.set_lambda_min(1e-9);
        assert!(matches!(op.kernel_check(), Err(PulseError::KernelCheckFailed { .. })));
    }

    #[test]
    fn constant_coefficient_spectrum_bottom_is_delta() {
        let mut op = constant_operator(2, 32, 8.0, 1.0);
        let pairs = op.smallest_eigenpairs(4).unwrap();
        assert!((pairs[0].value - 1.0).abs() < 1e-10);
        let next = 1.0 + (std::f64::consts::PI / 8.0).powi(2);
        for p in &pairs[1..] {
            assert!((p.value - next).abs() < 1e-10);
            assert!(p.residual <= EIGEN_RESIDUAL_TOL);
        }
        assert_eq!(op.lambda_min(), Some(pairs[0].value));
    }

    #[test]
    fn constant_coefficient_mode_inverse() {
        let mut op = constant_operator(3, 16, 3.0, 0.6);
        op.set_lambda_min(0.6);
        let g = op.grid().clone();
        let k = std::f64::consts::PI / 3.0;
        let e = RealField::from_fn(&g, |x| (2.0 * k * x[1]).cos() * (k * x[2]).sin());
        let u = op.solve(&e, 1e-12).unwrap();
        let expected = e.scaled(1.0 / (5.0 * k * k + 0.6));
        assert!(u.sub(&expected).unwrap().sup_norm() < 1e-12);
        assert_eq!(op.solve(&RealField::zeros(&g), 1e-12).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn constant_coefficient_inverse_norm_matches_scan() {
        for delta in [1.0, 0.5] {
            let mut op = constant_operator(2, 32, 8.0, delta);
            op.set_lambda_min(delta);
            let scan = op
                .grid()
                .wavenumber_sq()
                .iter()
                .map(|&k2| (1.0 + k2 * k2).sqrt() / (k2 + delta))
                .fold(0.0, f64::max);
            let norm = op.l2_to_h2_norm().unwrap();
            assert!((norm - scan).abs() <= 1e-6 * scan, "{norm} vs {scan}");
        }
    }

    #[test]
    fn symmetric_and_invertible_with_varying_potential() {
        let g = make_grid(2, 32, 6.0).unwrap();
        let pot = RealField::from_fn(&g, |x| 1.0 - 6.0 * (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp());
        let mut op = LinearizedOperator::from_potential(pot, 1.0, KrylovConfig::default());
        let f = random_smooth(&g, 1);
        for seed in 0..20 {
            let f = random_smooth(&g, 2 * seed + 100);
            let h = random_smooth(&g, 2 * seed + 101);
            let lhs = op.apply(&f).unwrap().l2_inner(&h).unwrap();
            let rhs = f.l2_inner(&op.apply(&h).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * f.l2_norm() * h.l2_norm());
        }

        op.smallest_eigenpairs(2).unwrap();
        assert!(op.lambda_min().unwrap() < 0.0, "well should bind a state");
        let lf = op.apply(&f).unwrap();
        let back = op.solve(&lf, 1e-12).unwrap();
        assert!(back.sub(&f).unwrap().h2_norm() <= 1e-8 * f.h2_norm());
    }

    /// Dense `-D2 (x) I - I (x) D2 + diag(W)` with the spectral second-derivative
    /// matrix `D2[j][l] = (1/n) sum_k (-k^2) cos(k (x_j - x_l))`.
    fn dense_operator(g: &GridSpec, potential: &RealField) -> nalgebra::DMatrix<f64> {
        let n = g.points_per_axis();
        let h = g.spacing();
        let ks = g.axis_wavenumbers();
        let d2 = nalgebra::DMatrix::from_fn(n, n, |j, l| {
            let dx = (j as f64 - l as f64) * h;
            -ks.iter().map(|k| k * k * (k * dx).cos()).sum::<f64>() / n as f64
        });
        let eye = nalgebra::DMatrix::<f64>::identity(n, n);
        let mut m = -(d2.kronecker(&eye) + eye.kronecker(&d2));
        for (i, w) in potential.values().iter().enumerate() {
            m[(i, i)] += w;
        }
        m
    }

    #[test]
    fn matches_dense_eigensolve() {
        let g = make_grid(2, 32, 6.0).unwrap();
        let pot = RealField::from_fn(&g, |x| {
            1.0 - 1.2 * (-(x[0] * x[0] + 2.0 * x[1] * x[1]) / 2.0).exp() + 0.3 * (-(x[0] - 1.0).powi(2)).exp()
        });
        let dense = dense_operator(&g, &pot);
        let mut vals = nalgebra::SymmetricEigen::new(dense.clone()).eigenvalues.as_slice().to_vec();
        vals.sort_by(f64::total_cmp);

        let mut op = LinearizedOperator::from_potential(pot, 1.0, KrylovConfig::default());
        let f = random_smooth(&g, 7);
        let mf = &dense * nalgebra::DVector::from_column_slice(f.values());
        let af = op.apply(&f).unwrap();
        for (x, y) in mf.iter().zip(af.values()) {
            assert!((x - y).abs() < 1e-10);
        }

        let pairs = op.smallest_eigenpairs(4).unwrap();
        for (p, v) in pairs.iter().zip(&vals) {
            assert!((p.value - v).abs() < 1e-8, "{} vs {}", p.value, v);
        }
    }

    #[test]
    fn shell_bumps_see_the_essential_floor() {
        let g = make_grid(2, 64, 10.0).unwrap();
        let delta = 0.8;
        let pot = RealField::from_fn(&g, |x| delta - 0.9 * (-(x[0] * x[0] + x[1] * x[1])).exp());
        let op = LinearizedOperator::from_potential(pot, delta, KrylovConfig::default());
        for c in [[-9.5, 0.0], [9.5, 4.0], [3.0, -9.6], [-9.5, -9.5]] {
            let bump = RealField::from_fn(&g, |x| {
                let dx = wrap(x[0] - c[0], 20.0);
                let dy = wrap(x[1] - c[1], 20.0);
                (-(dx * dx + dy * dy) / 0.5).exp()
            });
            assert!(op.rayleigh_quotient(&bump).unwrap() >= delta - 1e-3);
        }
    }

    fn wrap(x: f64, period: f64) -> f64 {
        x - period * (x / period).round()
    }

    #[test]
    fn translation_modes_are_orthonormal() {
        let g = make_grid(2, 64, 8.0).unwrap();
        let w = RealField::from_fn(&g, |x| (-(x[0] * x[0] + 0.5 * x[1] * x[1])).exp());
        let modes = translation_modes(&w);
        assert_eq!(modes.len(), 2);
        for (i, a) in modes.iter().enumerate() {
            for (j, b) in modes.iter().enumerate() {
                let ip = a.l2_inner(b).unwrap();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12);
            }
        }
        let mut pairs = vec![EigenPair {
            value: 0.0,
            field: modes[1].clone(),
            residual: 0.0,
            translation_overlap: None,
        }];
        annotate_translation_overlap(&mut pairs, &w);
        assert!((pairs[0].translation_overlap.unwrap() - 1.0).abs() < 1e-12);
        let capture = translation_capture(&pairs, &w);
        assert!(capture[0].abs() < 1e-12 && (capture[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_count_is_validated() {
        let mut op = constant_operator(2, 16, 4.0, 1.0);
        assert!(op.smallest_eigenpairs(0).is_err());
        assert!(op.smallest_eigenpairs(11).is_err());
    }

    #[test]
    fn eigen_csv_layout() {
        let g = make_grid(2, 8, 1.0).unwrap();
        let pairs = vec![EigenPair {
            value: -0.5,
            field: RealField::zeros(&g),
            residual: 1e-9,
            translation_overlap: Some(0.25),
        }];
        let mut out = Vec::new();
        write_eigen_csv(&mut out, &pairs).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "index,lambda,residual,overlap_dw0\n0,-5.0000000000000000e-1,1.0000000000000001e-9,2.5000000000000000e-1\n"
        );
    }
}
