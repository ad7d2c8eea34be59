//! Experiment driver behind the `pulse` binary.
//!
//! Each stage recomputes what it depends on, writes its files under the
//! output directory and prints one summary line (also appended to
//! `run.log`). CSV files start with a single `#` line holding the creation
//! time; everything after it depends only on the config.

pub mod config;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::asymptotics::{remainder_sweep, SweepReport};
use crate::base_pulse::{solve_base, BasePulse};
use crate::constants::{geometric_points, ConstantsReport, Region};
use crate::contraction_solver::{assemble_and_check, picard_solve, PerturbationResult};
use crate::error::{PulseError, Result};
use crate::grid::{make_grid, RealField};
use crate::linearized::{annotate_translation_overlap, write_eigen_csv, EigenPair, LinearizedOperator};
use crate::problem::{eval_coefficients, CoefficientFields};
use crate::puls;

pub use config::ExperimentConfig;

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NON_CONVERGENCE: i32 = 3;
pub const EXIT_KERNEL: i32 = 4;
pub const EXIT_INVARIANT: i32 = 5;

pub const LOCK_FILE: &str = ".pulse.lock";

/// Exit status for a failed run.
pub fn exit_code(err: &PulseError) -> i32 {
    use PulseError::*;
    match err {
        Config { .. } | InvalidInput(_) | InvalidGrid(_) | BoxTooSmall { .. } | NonPositiveTarget { .. }
        | DegenerateSweep(_) | RadiusTooLarge { .. } => EXIT_CONFIG,
        NonConvergence { .. }
        | SingularJacobian { .. }
        | TrivialSolution { .. }
        | Stagnation { .. }
        | EigenNonConvergence { .. }
        | BallEscape { .. }
        | NoContraction { .. }
        | PicardCap { .. }
        | Uncertified { .. } => EXIT_NON_CONVERGENCE,
        KernelNotChecked | KernelCheckFailed { .. } => EXIT_KERNEL,
        InvariantViolation(_) | UnderResolved { .. } | NonDecaying { .. } => EXIT_INVARIANT,
        SweepPoint { source, .. } => exit_code(source),
        GridMismatch | NonFinite(_) | Format(_) | Io(_) => EXIT_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stage {
    SolveBase,
    Spectrum,
    Constants,
    Perturb { eps: f64 },
    Sweep,
    /// Every stage in order; perturb runs when an eps is known.
    All { eps: Option<f64> },
}

/// Holds the output-directory lock for the lifetime of a run.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(PulseError::Io(std::io::Error::new(
                e.kind(),
                format!("{} exists; another run is using this directory", path.display()),
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Runs `stage` with the lock held.
pub fn run(stage: Stage, cfg: &ExperimentConfig) -> Result<()> {
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let mut session = Session::new(cfg)?;
    let outcome = session.run(stage);
    if let Err(e) = &outcome {
        session.log(&format!("error: {e}"));
    }
    outcome
}

pub struct Session<'a> {
    cfg: &'a ExperimentConfig,
    log: BufWriter<File>,
    coeffs: Option<CoefficientFields>,
    base: Option<BasePulse>,
    op: Option<LinearizedOperator>,
    eigen: Option<Vec<EigenPair>>,
    consts: Option<(ConstantsReport, Region)>,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output_dir)?;
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(cfg.output_dir.join("run.log"))?;
        Ok(Self {
            cfg,
            log: BufWriter::new(log),
            coeffs: None,
            base: None,
            op: None,
            eigen: None,
            consts: None,
        })
    }

    pub fn run(&mut self, stage: Stage) -> Result<()> {
        self.log(&format!("# run started at unix time {}", unix_time()));
        match stage {
            Stage::SolveBase => self.solve_base().map(|_| ()),
            Stage::Spectrum => self.spectrum(),
            Stage::Constants => self.constants().map(|_| ()),
            Stage::Perturb { eps } => self.perturb(eps).map(|_| ()),
            Stage::Sweep => self.sweep().map(|_| ()),
            Stage::All { eps } => {
                self.solve_base()?;
                self.spectrum()?;
                self.constants()?;
                if let Some(eps) = eps.or(self.cfg.perturb.eps) {
                    self.perturb(eps)?;
                }
                self.sweep()?;
                Ok(())
            }
        }
    }

    fn log(&mut self, line: &str) {
        let _ = writeln!(self.log, "{line}");
        let _ = self.log.flush();
    }

    fn summary(&mut self, stage: &str, start: Instant, body: String) {
        let line = format!("[{stage}] {body} ({:.1} s)", start.elapsed().as_secs_f64());
        println!("{line}");
        self.log(&line);
    }

    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output_dir.join(name)
    }

    fn coefficients(&mut self) -> Result<&CoefficientFields> {
        if self.coeffs.is_none() {
            let g = &self.cfg.grid;
            let grid = make_grid(g.d, g.n, g.half_period)?;
            self.coeffs = Some(eval_coefficients(&self.cfg.coefficient_spec(), &grid)?);
        }
        Ok(self.coeffs.as_ref().expect("just set"))
    }

    fn solve_base(&mut self) -> Result<&BasePulse> {
        if self.base.is_none() {
            let start = Instant::now();
            let cfg = self.cfg;
            let coeffs = self.coefficients()?.clone();
            let guess = match &coeffs.target {
                Some(t) => t.scaled(cfg.newton.guess_scale),
                None => {
                    let (amp, kappa, d) = (cfg.newton.guess_amplitude, coeffs.delta.sqrt(), cfg.grid.d);
                    RealField::from_fn(coeffs.grid(), |x| {
                        let r = x[..d].iter().map(|c| c * c).sum::<f64>().sqrt();
                        amp / (kappa * r).cosh()
                    })
                }
            };
            let base = solve_base(&coeffs, &guess, &cfg.newton_config())?;
            let scale = base.w0.l2_norm().max(1.0);
            if base.residual_l2 > 1e-9 * scale {
                return Err(PulseError::InvariantViolation(format!(
                    "base residual {:.3e} above 1e-9 * {scale:.3}",
                    base.residual_l2
                )));
            }
            let target_error = coeffs
                .target
                .as_ref()
                .map(|t| base.w0.sub(t).map(|e| e.h2_norm() / t.h2_norm()))
                .transpose()?;

            puls::save(self.path("w0.puls"), &base.w0)?;
            let row = format!(
                "{:.16e},{},{:.16e},{:.16e},{:.16e},{}",
                base.residual_l2,
                base.newton_iterations,
                base.decay_c,
                base.decay_alpha,
                base.w0.h2_norm(),
                fmt_opt(target_error)
            );
            write_csv(
                &self.path("base.csv"),
                "residual_l2,newton_iterations,decay_c,decay_alpha,w0_h2,target_rel_error_h2",
                &[row],
            )?;
            let body = format!(
                "residual {:.3e} after {} Newton steps, ||w0||_H2 = {:.6}, decay C = {:.4} alpha = {:.4}{}",
                base.residual_l2,
                base.newton_iterations,
                base.w0.h2_norm(),
                base.decay_c,
                base.decay_alpha,
                target_error.map(|e| format!(", error vs target {e:.3e}")).unwrap_or_default()
            );
            self.base = Some(base);
            self.summary("solve-base", start, body);
        }
        Ok(self.base.as_ref().expect("just set"))
    }

    fn spectrum(&mut self) -> Result<()> {
        if self.eigen.is_some() {
            return Ok(());
        }
        self.solve_base()?;
        let start = Instant::now();
        let coeffs = self.coeffs.as_ref().expect("coefficients computed");
        let base = self.base.as_ref().expect("base computed");
        let mut op = LinearizedOperator::new(base, coeffs, self.cfg.krylov_config())?.with_seed(self.cfg.seed);
        let gap = op.far_field_gap(&coeffs.sigma0)?;
        let mut pairs = op.smallest_eigenpairs(self.cfg.spectrum.count)?;
        annotate_translation_overlap(&mut pairs, &base.w0);
        let mut buf = Vec::new();
        write_eigen_csv(&mut buf, &pairs)?;
        write_csv_bytes(&self.path("eigen.csv"), &buf)?;

        let values: Vec<String> = pairs.iter().map(|p| format!("{:.6}", p.value)).collect();
        let checked = op.kernel_check();
        self.op = Some(op);
        self.eigen = Some(pairs);
        self.summary(
            "spectrum",
            start,
            format!(
                "smallest eigenvalues [{}], far-field |W - sigma0| = {gap:.2e}, kernel check {}",
                values.join(", "),
                if checked.is_ok() { "passed" } else { "FAILED" }
            ),
        );
        checked
    }

    fn constants(&mut self) -> Result<(ConstantsReport, Region)> {
        if let Some(c) = &self.consts {
            return Ok(c.clone());
        }
        self.spectrum()?;
        let start = Instant::now();
        let coeffs = self.coeffs.as_ref().expect("coefficients computed");
        let base = self.base.as_ref().expect("base computed");
        let op = self.op.as_mut().expect("operator built");
        let consts = ConstantsReport::measure(op, base, coeffs)?;
        let region = consts.admissible_region(&consts.default_rho_grid());
        if !region.is_well_formed() {
            return Err(PulseError::InvariantViolation("admissible region is not a single block".into()));
        }
        let best = region.best();
        let row = format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{}",
            consts.c_e,
            consts.inv_norm,
            consts.w0_h2,
            consts.sigma1_sup,
            consts.a,
            op.lambda_min().unwrap_or(f64::NAN),
            fmt_opt(region.rho_star()),
            fmt_opt(best.map(|b| b.rho)),
            fmt_opt(best.map(|b| b.eps_star)),
        );
        write_csv(
            &self.path("constants.csv"),
            "c_e,inv_norm,w0_h2,sigma1_sup,a,lambda_min,rho_star,rho_best,eps_star_best",
            &[row],
        )?;
        let mut buf = Vec::new();
        region.write_csv(&mut buf)?;
        write_csv_bytes(&self.path("region.csv"), &buf)?;
        let body = match best {
            Some(b) => format!(
                "c_e = {:.6}, ||L0^-1|| = {:.6}, eps_star = {:.4e} at rho = {:.4e}",
                consts.c_e, consts.inv_norm, b.eps_star, b.rho
            ),
            None => format!(
                "c_e = {:.6}, ||L0^-1|| = {:.6}, no admissible radius",
                consts.c_e, consts.inv_norm
            ),
        };
        self.summary("constants", start, body);
        self.consts = Some((consts, region.clone()));
        Ok((consts, region))
    }

    /// Ball radius in force and a check that `eps` is certified for it.
    fn certified_radius(&mut self, eps: f64) -> Result<f64> {
        let (consts, region) = self.constants()?;
        let rho = match self.cfg.picard.rho {
            Some(rho) => {
                if rho >= consts.w0_h2 {
                    return Err(PulseError::RadiusTooLarge {
                        rho,
                        w0_h2: consts.w0_h2,
                    });
                }
                rho
            }
            None => {
                region
                    .best()
                    .ok_or_else(|| PulseError::Uncertified {
                        eps,
                        eps_star: 0.0,
                        rho: f64::NAN,
                    })?
                    .rho
            }
        };
        if !consts.certifies(rho, eps) {
            let eps_star = consts.admissible_region(&[rho]).rows[0].eps_star;
            return Err(PulseError::Uncertified { eps, eps_star, rho });
        }
        Ok(rho)
    }

    fn perturb(&mut self, eps: f64) -> Result<PerturbationResult> {
        let rho = self.certified_radius(eps)?;
        let start = Instant::now();
        let coeffs = self.coeffs.as_ref().expect("coefficients computed");
        let base = self.base.as_ref().expect("base computed");
        let op = self.op.as_ref().expect("operator built");
        let result = picard_solve(op, base, coeffs, eps, &self.cfg.picard_config(rho))?;
        check_perturbation(base, &result)?;
        let (w, margin) = assemble_and_check(base, &result)?;

        let tag = eps_tag(eps);
        puls::save(self.path(&format!("wp_{tag}.puls")), &result.w_p)?;
        puls::save(self.path(&format!("w_{tag}.puls")), &w)?;
        let ratios = result.step_ratios();
        let trace: Vec<String> = result
            .step_norms
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let ratio = if i == 0 { None } else { ratios.get(i - 1).copied() };
                format!("{},{:.16e},{}", i + 1, s, fmt_opt(ratio))
            })
            .collect();
        write_csv(&self.path(&format!("trace_{tag}.csv")), "n,step_h2,ratio", &trace)?;
        let row = format!(
            "{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            eps,
            rho,
            result.iterations,
            result.measured_ratio,
            result.w_p.h2_norm(),
            w.h2_norm(),
            margin,
            result.residual_l2
        );
        write_csv(
            &self.path(&format!("perturb_{tag}.csv")),
            "eps,rho,iterations,measured_ratio,wp_h2,w_h2,margin,residual_l2",
            &[row],
        )?;
        self.summary(
            "perturb",
            start,
            format!(
                "eps = {eps:.4e}: {} Picard steps, ratio {:.3e}, ||w_p||_H2 = {:.4e}, margin {:.4e}",
                result.iterations,
                result.measured_ratio,
                result.w_p.h2_norm(),
                margin
            ),
        );
        Ok(result)
    }

    fn sweep(&mut self) -> Result<SweepReport> {
        let cfg = self.cfg;
        let s = &cfg.sweep;
        let eps_values = geometric_points(s.eps_min, s.eps_max, s.points);
        // every point must be certified before any work starts
        let mut rho = f64::NAN;
        for &eps in &eps_values {
            rho = self.certified_radius(eps)?;
        }
        let start = Instant::now();
        let (consts, _) = self.constants()?;
        let coeffs = self.coeffs.as_ref().expect("coefficients computed");
        let base = self.base.as_ref().expect("base computed");
        let op = self.op.as_ref().expect("operator built");
        let report = remainder_sweep(op, base, coeffs, &consts, &eps_values, &self.cfg.picard_config(rho))?;
        for result in &report.results {
            check_perturbation(base, result)?;
            assemble_and_check(base, result)?;
            puls::save(self.path(&format!("wp_{}.puls", eps_tag(result.eps))), &result.w_p)?;
        }
        let mut buf = Vec::new();
        report.write_csv(&mut buf)?;
        write_csv_bytes(&self.path("sweep.csv"), &buf)?;
        let mut buf = Vec::new();
        report.write_plot_data(&mut buf)?;
        write_csv_bytes(&self.path("sweep.dat"), &buf)?;

        check_sweep(&report)?;
        self.summary(
            "sweep",
            start,
            format!(
                "{} points in [{:.3e}, {:.3e}]: slope ||w_p|| = {:.4}, slope remainder = {:.4}",
                report.points.len(),
                s.eps_min,
                s.eps_max,
                report.slope_first,
                report.slope
            ),
        );
        Ok(report)
    }
}

fn check_perturbation(base: &BasePulse, result: &PerturbationResult) -> Result<()> {
    let scale = base.w0.l2_norm().max(1.0);
    if result.residual_l2 > 1e-8 * scale {
        return Err(PulseError::InvariantViolation(format!(
            "perturbation residual {:.3e} at eps = {:.4e}",
            result.residual_l2, result.eps
        )));
    }
    let norm = result.w_p.h2_norm();
    if norm > result.rho_used {
        return Err(PulseError::InvariantViolation(format!(
            "||w_p||_H2 = {norm:.4e} outside the ball of radius {:.4e}",
            result.rho_used
        )));
    }
    Ok(())
}

fn check_sweep(report: &SweepReport) -> Result<()> {
    if !report.bounds_hold() {
        return Err(PulseError::InvariantViolation("a remainder exceeds its bound".into()));
    }
    if !report.is_monotone() {
        return Err(PulseError::InvariantViolation("sweep norms are not increasing in eps".into()));
    }
    if !(0.95..=1.05).contains(&report.slope_first) {
        return Err(PulseError::InvariantViolation(format!(
            "||w_p|| slope {:.4} is not close to 1",
            report.slope_first
        )));
    }
    let first = &report.points[0];
    if first.wp_h2 < 0.5 * first.eps * report.w1_h2 {
        return Err(PulseError::InvariantViolation("w_p is too small at the smallest eps".into()));
    }
    Ok(())
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.16e}"),
        None => "nan".into(),
    }
}

/// File-name tag for an eps value, e.g. `1.000000e-3`.
pub fn eps_tag(eps: f64) -> String {
    format!("{eps:.6e}")
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut body = format!("{header}\n");
    for r in rows {
        body.push_str(r);
        body.push('\n');
    }
    write_csv_bytes(path, body.as_bytes())
}

fn write_csv_bytes(path: &Path, payload: &[u8]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# generated at unix time {}", unix_time())?;
    f.write_all(payload)?;
    f.flush()?;
    Ok(())
}
