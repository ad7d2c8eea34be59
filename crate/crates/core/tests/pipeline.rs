use std::sync::OnceLock;

use pulse_core::asymptotics::{first_order_term, remainder_sweep};
use pulse_core::base_pulse::{solve_base, BasePulse, NewtonConfig};
use pulse_core::constants::{geometric_points, ConstantsReport, Region};
use pulse_core::contraction_solver::{
    apply_map_t, assemble_and_check, fixed_point_residual, lipschitz_probe, map_t_rhs, picard_solve,
    picard_solve_from, random_ball_element, PerturbationResult, PicardConfig,
};
use pulse_core::krylov::KrylovConfig;
use pulse_core::linearized::LinearizedOperator;
use pulse_core::problem::{eval_coefficients, CoefficientFields, CoefficientSpec};
use pulse_core::{make_grid, PulseError, RealField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Fixture {
    coeffs: CoefficientFields,
    base: BasePulse,
    op: LinearizedOperator,
    consts: ConstantsReport,
    region: Region,
}

fn newton() -> NewtonConfig {
    NewtonConfig {
        tail_tol: Some(1e-9),
        ..NewtonConfig::default()
    }
}

fn solve(n: usize, l: f64) -> (CoefficientFields, BasePulse) {
    let grid = make_grid(2, n, l).unwrap();
    let coeffs = eval_coefficients(&CoefficientSpec::fixture(), &grid).unwrap();
    let guess = coeffs.target.as_ref().unwrap().scaled(1.2);
    let base = solve_base(&coeffs, &guess, &newton()).unwrap();
    (coeffs, base)
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let (coeffs, base) = solve(128, 12.0);
        let mut op = LinearizedOperator::new(&base, &coeffs, KrylovConfig::default()).unwrap();
        op.smallest_eigenpairs(2).unwrap();
        let consts = ConstantsReport::measure(&mut op, &base, &coeffs).unwrap();
        let region = consts.admissible_region(&consts.default_rho_grid());
        Fixture {
            coeffs,
            base,
            op,
            consts,
            region,
        }
    })
}

fn certified_point(fx: &Fixture, frac: f64) -> (f64, f64) {
    let best = fx.region.best().unwrap();
    (best.rho, frac * best.eps_star)
}

fn picard(fx: &Fixture, eps: f64, rho: f64) -> PerturbationResult {
    picard_solve(&fx.op, &fx.base, &fx.coeffs, eps, &PicardConfig::new(rho)).unwrap()
}

#[test]
fn potential_matches_pointwise_formula() {
    let fx = fixture();
    let w = fx.base.w0.values();
    let s0 = fx.coeffs.sigma0.values();
    let grid = fx.base.w0.grid();
    for idx in [grid.origin_index(), 17, 4000, grid.len() - 1] {
        let want = 3.0 * w[idx] * w[idx] - 2.0 * w[idx] + s0[idx];
        assert!((fx.op.potential().values()[idx] - want).abs() < 1e-15);
    }

    let zero = BasePulse {
        w0: RealField::zeros(grid),
        ..fx.base.clone()
    };
    let free = LinearizedOperator::new(&zero, &fx.coeffs, KrylovConfig::default()).unwrap();
    assert_eq!(free.potential().values(), fx.coeffs.sigma0.values());

    let mut linear = fx.coeffs.clone();
    linear.a = 0.0;
    let op = LinearizedOperator::new(&fx.base, &linear, KrylovConfig::default()).unwrap();
    assert_eq!(op.potential().values(), fx.coeffs.sigma0.values());

    let other = make_grid(2, 64, 12.0).unwrap();
    let mismatched = BasePulse {
        w0: RealField::zeros(&other),
        ..fx.base.clone()
    };
    assert!(matches!(
        LinearizedOperator::new(&mismatched, &fx.coeffs, KrylovConfig::default()),
        Err(PulseError::GridMismatch)
    ));
}

#[test]
fn base_pulse_properties() {
    let fx = fixture();
    let target = fx.coeffs.target.as_ref().unwrap();
    let err = fx.base.w0.sub(target).unwrap().h2_norm() / target.h2_norm();
    assert!(err < 1e-6);
    assert!(fx.base.w0.min_value() >= -1e-8);
    assert!((0.9..=1.1).contains(&fx.base.decay_alpha));
    // quadratic convergence once the residual is small
    for pair in fx.base.history.windows(2) {
        if pair[0] <= 1e-3 && pair[1] > 1e-12 {
            assert!(pair[1] <= 10.0 * pair[0] * pair[0], "{pair:?}");
        }
    }
}

#[test]
fn inverse_norm_dominates_smallest_eigenvalue() {
    let fx = fixture();
    let lambda = fx.op.lambda_min().unwrap();
    assert!(lambda < 0.0);
    assert!(fx.consts.inv_norm >= 1.0 / lambda.abs());
}

#[test]
fn zero_eps_and_zero_sigma1_give_no_perturbation() {
    let fx = fixture();
    let r = picard(fx, 0.0, 0.01);
    assert_eq!(r.iterations, 1);
    assert_eq!(r.w_p.sup_norm(), 0.0);

    let mut unforced = fx.coeffs.clone();
    unforced.sigma1 = RealField::zeros(fx.base.w0.grid());
    let r = picard_solve(&fx.op, &fx.base, &unforced, 0.3, &PicardConfig::new(0.01)).unwrap();
    assert_eq!(r.w_p.sup_norm(), 0.0);
    assert_eq!(first_order_term(&fx.op, &fx.base, &unforced).unwrap().sup_norm(), 0.0);

    let eps = geometric_points(1e-4, 1e-3, 6);
    assert!(matches!(
        remainder_sweep(&fx.op, &fx.base, &unforced, &fx.consts, &eps, &PicardConfig::new(0.01)),
        Err(PulseError::DegenerateSweep(_))
    ));
}

#[test]
fn first_iterate_is_first_order_term() {
    let fx = fixture();
    let (rho, eps) = certified_point(fx, 0.5);
    let w1 = first_order_term(&fx.op, &fx.base, &fx.coeffs).unwrap();
    let bound = fx.consts.inv_norm * fx.consts.sigma1_sup * fx.consts.w0_h2;
    assert!(w1.h2_norm() <= bound + 1e-10);

    let zero = RealField::zeros(fx.base.w0.grid());
    let t0 = apply_map_t(&fx.op, &fx.base, &fx.coeffs, eps, &zero).unwrap();
    let expected = w1.scaled(eps);
    assert!(t0.sub(&expected).unwrap().h2_norm() <= 1e-10 * expected.h2_norm());

    let r = picard(fx, eps, rho);
    let first_step = r.step_norms[0];
    assert!((first_step - expected.h2_norm()).abs() <= 1e-10 * first_step);
}

#[test]
fn map_output_solves_the_auxiliary_problem() {
    let fx = fixture();
    let eps = 0.05;
    let zero = RealField::zeros(fx.base.w0.grid());
    let v = apply_map_t(&fx.op, &fx.base, &fx.coeffs, eps, &zero).unwrap();
    let u = apply_map_t(&fx.op, &fx.base, &fx.coeffs, eps, &v).unwrap();
    let rhs = map_t_rhs(&fx.base, &fx.coeffs, eps, &v).unwrap();
    let defect = fx.op.apply(&u).unwrap().sub(&rhs).unwrap().l2_norm();
    assert!(defect <= 1e-11 * rhs.l2_norm());
    assert!(u.h2_norm() <= fx.consts.ball_bound(0.9 * fx.consts.w0_h2, eps));
}

#[test]
fn picard_converges_geometrically_inside_the_region() {
    let fx = fixture();
    let (rho, eps) = certified_point(fx, 0.9);
    let r = picard(fx, eps, rho);
    assert!(r.measured_ratio < 1.0);
    assert!(r.measured_ratio <= fx.consts.contraction_bound(rho, eps));
    assert!(r.w_p.h2_norm() <= rho);
    assert!(r.residual_l2 <= 1e-8 * fx.base.w0.l2_norm().max(1.0));
    let direct = fixed_point_residual(&fx.op, &fx.base, &fx.coeffs, eps, &r.w_p).unwrap().l2_norm();
    assert!((direct - r.residual_l2).abs() < 1e-20);
    for (n, ratio) in r.step_ratios().iter().enumerate().skip(1) {
        if r.step_norms[n + 1] > 1e-14 {
            assert!(*ratio <= r.measured_ratio + 0.05);
        }
    }
    for pair in r.step_norms.windows(2) {
        assert!(pair[1] < pair[0]);
    }
}

#[test]
fn contraction_and_ball_bounds_hold_on_samples() {
    let fx = fixture();
    let (rho, eps) = certified_point(fx, 0.9);
    let probe = lipschitz_probe(&fx.op, &fx.base, &fx.coeffs, eps, rho, 20, 11).unwrap();
    assert!(probe < 1.0 && probe <= fx.consts.contraction_bound(rho, eps));

    let grid = fx.base.w0.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let bound = fx.consts.ball_bound(rho, eps);
    for _ in 0..50 {
        let v = random_ball_element(&grid, rho, &mut rng);
        let tv = apply_map_t(&fx.op, &fx.base, &fx.coeffs, eps, &v).unwrap();
        assert!(tv.h2_norm() <= bound);
    }

    // a larger ball and eps outside the region: the bound chain still holds
    let (rho, eps) = (0.1, 0.01);
    let bound = fx.consts.ball_bound(rho, eps);
    for _ in 0..10 {
        let v = random_ball_element(&grid, rho, &mut rng);
        let tv = apply_map_t(&fx.op, &fx.base, &fx.coeffs, eps, &v).unwrap();
        assert!(tv.h2_norm() <= bound);
    }
}

#[test]
fn linear_problem_without_forcing_has_zero_lipschitz_ratio() {
    let fx = fixture();
    let mut linear = fx.coeffs.clone();
    linear.a = 0.0;
    let probe = lipschitz_probe(&fx.op, &fx.base, &linear, 0.0, 0.1, 3, 5).unwrap();
    assert_eq!(probe, 0.0);
    assert!(lipschitz_probe(&fx.op, &fx.base, &linear, 0.0, 0.1, 0, 5).is_err());
}

#[test]
fn restarts_reach_the_same_fixed_point() {
    let fx = fixture();
    let (rho, eps) = certified_point(fx, 0.5);
    let canonical = picard(fx, eps, rho);
    let grid = fx.base.w0.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let start = random_ball_element(&grid, rho, &mut rng);
        let r = picard_solve_from(&fx.op, &fx.base, &fx.coeffs, eps, &PicardConfig::new(rho), start).unwrap();
        assert!(r.w_p.sub(&canonical.w_p).unwrap().h2_norm() <= 1e-8);
    }
}

#[test]
fn iteration_failures_are_reported() {
    let fx = fixture();
    let (_, eps) = certified_point(fx, 0.9);
    assert!(matches!(
        picard_solve(&fx.op, &fx.base, &fx.coeffs, eps, &PicardConfig::new(1e-6)),
        Err(PulseError::BallEscape { iteration: 1, .. })
    ));
    let capped = PicardConfig {
        max_iters: 2,
        ..PicardConfig::new(0.5)
    };
    assert!(matches!(
        picard_solve(&fx.op, &fx.base, &fx.coeffs, 0.01, &capped),
        Err(PulseError::PicardCap { iterations: 2, .. })
    ));
    let big = random_ball_element(fx.base.w0.grid(), 1.0, &mut ChaCha8Rng::seed_from_u64(1)).scaled(10.0);
    assert!(matches!(
        picard_solve_from(&fx.op, &fx.base, &fx.coeffs, eps, &PicardConfig::new(0.1), big),
        Err(PulseError::BallEscape { iteration: 0, .. })
    ));
}

#[test]
fn assembly_margin() {
    let fx = fixture();
    let rho = 0.05;
    let zero = picard(fx, 0.0, rho);
    let (w, margin) = assemble_and_check(&fx.base, &zero).unwrap();
    assert_eq!(w.values(), fx.base.w0.values());
    assert!((margin - rho).abs() < 1e-15);

    let too_big = PerturbationResult {
        rho_used: fx.consts.w0_h2,
        ..zero
    };
    assert!(matches!(
        assemble_and_check(&fx.base, &too_big),
        Err(PulseError::RadiusTooLarge { .. })
    ));

    let (rho, eps) = certified_point(fx, 0.9);
    let (_, margin) = assemble_and_check(&fx.base, &picard(fx, eps, rho)).unwrap();
    assert!(margin > 0.0);
}

#[test]
fn certified_sweep_is_second_order() {
    let fx = fixture();
    let (rho, hi) = certified_point(fx, 0.9);
    let eps = geometric_points(hi / 10.0, hi, 7);
    let s = remainder_sweep(&fx.op, &fx.base, &fx.coeffs, &fx.consts, &eps, &PicardConfig::new(rho)).unwrap();
    assert!(s.points.iter().all(|p| p.certified));
    assert!((1.9..=2.1).contains(&s.slope), "{}", s.slope);
    assert!((0.95..=1.05).contains(&s.slope_first), "{}", s.slope_first);
    assert!(s.bounds_hold());
    assert!(s.is_monotone());
    assert!(s.points[0].wp_h2 >= 0.5 * s.points[0].eps * s.w1_h2);
    assert_eq!(s.eps_values(), eps);

    let mut csv = Vec::new();
    s.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 8);

    let short = remainder_sweep(&fx.op, &fx.base, &fx.coeffs, &fx.consts, &[hi], &PicardConfig::new(rho));
    assert!(matches!(short, Err(PulseError::DegenerateSweep(_))));
    let narrow = geometric_points(hi / 2.0, hi, 7);
    let narrow = remainder_sweep(&fx.op, &fx.base, &fx.coeffs, &fx.consts, &narrow, &PicardConfig::new(rho));
    assert!(matches!(narrow, Err(PulseError::DegenerateSweep(_))));
}

#[test]
fn region_is_nested_and_sampled_points_work() {
    let fx = fixture();
    assert!(fx.region.is_well_formed());
    let rows: Vec<_> = fx.region.rows.iter().filter(|r| r.admissible).collect();
    for row in [rows[0], rows[rows.len() / 2], rows[rows.len() - 1]] {
        let eps = 0.5 * row.eps_star;
        let r = picard(fx, eps, row.rho);
        assert!(r.w_p.h2_norm() <= row.rho);
        let probe = lipschitz_probe(&fx.op, &fx.base, &fx.coeffs, eps, row.rho, 3, 17).unwrap();
        assert!(probe < 1.0);
    }
}

#[test]
fn grid_refinement_is_stable() {
    let (c1, b1) = solve(128, 12.0);
    let (c2, b2) = solve(256, 12.0);
    let (n1, n2) = (b1.w0.h2_norm(), b2.w0.h2_norm());
    assert!((n1 - n2).abs() <= 1e-6 * n2, "{n1} vs {n2}");

    let mut ops = Vec::new();
    for (c, b) in [(&c1, &b1), (&c2, &b2)] {
        let mut op = LinearizedOperator::new(b, c, KrylovConfig::default()).unwrap();
        let values: Vec<f64> = op.smallest_eigenpairs(4).unwrap().iter().map(|p| p.value).collect();
        let norm = op.l2_to_h2_norm().unwrap();
        ops.push((values, norm));
    }
    for (a, b) in ops[0].0.iter().zip(&ops[1].0) {
        assert!((a - b).abs() <= 1e-4, "{a} vs {b}");
    }
    assert!((ops[0].1 - ops[1].1).abs() <= 1e-3 * ops[1].1);
}
