//! TOML experiment configuration.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [grid]
//! d = 2
//! n = 256
//! half_period = 16.0
//!
//! [coefficients.sigma0]
//! kind = "manufactured"
//! amplitude = 0.4
//! bump = { height = 0.05, center = [1.0, 0.5] }
//!
//! [sweep]
//! eps_min = 1.2e-4
//! eps_max = 1.2e-3
//! points = 7
//! ```
//!
//! Every section and key is optional; omitted values take the defaults
//! below.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::base_pulse::NewtonConfig;
use crate::contraction_solver::PicardConfig;
use crate::error::{PulseError, Result};
use crate::krylov::KrylovConfig;
use crate::problem::{Bump, CoefficientSpec, Sigma0Spec, Sigma1Spec};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridSection,
    pub coefficients: CoefficientsSection,
    pub newton: NewtonSection,
    pub krylov: KrylovSection,
    pub picard: PicardSection,
    pub spectrum: SpectrumSection,
    pub perturb: PerturbSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("out"),
            grid: GridSection::default(),
            coefficients: CoefficientsSection::default(),
            newton: NewtonSection::default(),
            krylov: KrylovSection::default(),
            picard: PicardSection::default(),
            spectrum: SpectrumSection::default(),
            perturb: PerturbSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub n: usize,
    pub half_period: f64,
    /// Largest accepted relative spectral tail of `w0`; `inf` disables the check.
    pub tail_tol: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            d: 2,
            n: 256,
            half_period: 16.0,
            tail_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientsSection {
    pub a: f64,
    pub delta: f64,
    pub sigma0: Sigma0Section,
    pub sigma1: Sigma1Section,
}

impl Default for CoefficientsSection {
    fn default() -> Self {
        Self {
            a: 1.0,
            delta: 1.0,
            sigma0: Sigma0Section::Manufactured {
                amplitude: 0.4,
                bump: Some(BumpSection::default()),
            },
            sigma1: Sigma1Section::Gaussian { gamma: 1.0, width: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sigma0Section {
    Manufactured {
        amplitude: f64,
        #[serde(default)]
        bump: Option<BumpSection>,
    },
    GaussianWell {
        depth: f64,
        width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BumpSection {
    pub height: f64,
    pub center: Vec<f64>,
}

impl Default for BumpSection {
    fn default() -> Self {
        let b = Bump::default();
        Self {
            height: b.height,
            center: b.center.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sigma1Section {
    Gaussian { gamma: f64, width: f64 },
    Zero,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSection {
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    /// Manufactured runs start from `guess_scale * target`.
    pub guess_scale: f64,
    /// Other runs start from `guess_amplitude * sech(sqrt(delta) |x|)`.
    pub guess_amplitude: f64,
}

impl Default for NewtonSection {
    fn default() -> Self {
        let n = NewtonConfig::default();
        Self {
            tol: n.tol,
            max_iters: n.max_iters,
            max_halvings: n.max_halvings,
            guess_scale: 1.2,
            guess_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KrylovSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for KrylovSection {
    fn default() -> Self {
        let k = KrylovConfig::default();
        Self {
            tol: k.tol,
            max_iters: k.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardSection {
    /// Ball radius; when absent the region row with the largest `eps_star`
    /// is used.
    pub rho: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        let p = PicardConfig::new(1.0);
        Self {
            rho: None,
            tol: p.tol,
            max_iters: p.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    /// Number of smallest eigenpairs to report.
    pub count: usize,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { count: 4 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbSection {
    /// Used by `all` when `--eps` is not given; no perturb stage otherwise.
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub eps_min: f64,
    pub eps_max: f64,
    pub points: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            eps_min: 1.2e-4,
            eps_max: 1.2e-3,
            points: 7,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PulseError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let cfg: Self = toml::from_str(&text).map_err(|e| PulseError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| PulseError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(PulseError::InvalidInput(msg.to_string()));
        let positive = [
            ("newton.tol", self.newton.tol),
            ("krylov.tol", self.krylov.tol),
            ("picard.tol", self.picard.tol),
            ("grid.tail_tol", self.grid.tail_tol),
            ("sweep.eps_min", self.sweep.eps_min),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(PulseError::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sweep.eps_min < self.sweep.eps_max) {
            return bad("sweep.eps_min must be below sweep.eps_max");
        }
        if self.sweep.points < 6 {
            return bad("sweep.points must be at least 6");
        }
        if !(1..=10).contains(&self.spectrum.count) {
            return bad("spectrum.count must lie in 1..=10");
        }
        if let Some(rho) = self.picard.rho {
            if !(rho > 0.0) {
                return bad("picard.rho must be positive");
            }
        }
        if let Some(eps) = self.perturb.eps {
            if !(eps >= 0.0) {
                return bad("perturb.eps must be non-negative");
            }
        }
        if let Sigma0Section::Manufactured { bump: Some(b), .. } = &self.coefficients.sigma0 {
            if b.center.len() < self.grid.d {
                return bad("bump.center needs one coordinate per dimension");
            }
        }
        self.coefficient_spec().validate()
    }

    pub fn coefficient_spec(&self) -> CoefficientSpec {
        let c = &self.coefficients;
        let sigma0 = match &c.sigma0 {
            Sigma0Section::Manufactured { amplitude, bump } => Sigma0Spec::Manufactured {
                amplitude: *amplitude,
                bump: bump.as_ref().map(|b| {
                    let mut center = [0.0; 3];
                    for (dst, src) in center.iter_mut().zip(&b.center) {
                        *dst = *src;
                    }
                    Bump {
                        height: b.height,
                        center,
                    }
                }),
            },
            Sigma0Section::GaussianWell { depth, width } => Sigma0Spec::GaussianWell {
                depth: *depth,
                width: *width,
            },
        };
        let sigma1 = match c.sigma1 {
            Sigma1Section::Gaussian { gamma, width } => Sigma1Spec::Gaussian { gamma, width },
            Sigma1Section::Zero => Sigma1Spec::Zero,
        };
        CoefficientSpec {
            a: c.a,
            delta: c.delta,
            sigma0,
            sigma1,
        }
    }

    pub fn krylov_config(&self) -> KrylovConfig {
        KrylovConfig {
            tol: self.krylov.tol,
            max_iters: self.krylov.max_iters,
        }
    }

    pub fn newton_config(&self) -> NewtonConfig {
        NewtonConfig {
            tol: self.newton.tol,
            max_iters: self.newton.max_iters,
            krylov: self.krylov_config(),
            max_halvings: self.newton.max_halvings,
            tail_tol: Some(self.grid.tail_tol),
            ..NewtonConfig::default()
        }
    }

    pub fn picard_config(&self, rho: f64) -> PicardConfig {
        PicardConfig {
            rho,
            tol: self.picard.tol,
            max_iters: self.picard.max_iters,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_fixture() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.coefficient_spec(), CoefficientSpec::fixture());
        assert_eq!((cfg.grid.d, cfg.grid.n, cfg.grid.half_period), (2, 256, 16.0));
    }

    #[test]
    fn parses_sections() {
        let text = r#"
            seed = 3
            [grid]
            d = 3
            n = 64
            half_period = 10.0
            tail_tol = inf
            [coefficients.sigma0]
            kind = "gaussian_well"
            depth = 2.0
            width = 1.5
            [coefficients.sigma1]
            kind = "zero"
            [picard]
            rho = 0.05
        "#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(cfg.grid.tail_tol.is_infinite());
        assert_eq!(cfg.picard.rho, Some(0.05));
        let spec = cfg.coefficient_spec();
        assert_eq!(spec.sigma0, Sigma0Spec::GaussianWell { depth: 2.0, width: 1.5 });
        assert_eq!(spec.sigma1, Sigma1Spec::Zero);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(toml::from_str::<ExperimentConfig>("[grid]\nsize = 3").is_err());
        for text in [
            "[sweep]\neps_min = 0.1\neps_max = 0.01",
            "[sweep]\npoints = 3",
            "[krylov]\ntol = 0.0",
            "[coefficients]\na = -1.0",
        ] {
            let cfg: ExperimentConfig = toml::from_str(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
    }
}
