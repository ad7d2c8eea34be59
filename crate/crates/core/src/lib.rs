pub mod asymptotics;
pub mod base_pulse;
pub mod cli;
pub mod constants;
pub mod contraction_solver;
pub mod error;
pub mod grid;
pub mod krylov;
pub mod linearized;
pub mod problem;
pub mod puls;

pub use error::{PulseError, Result};
pub use grid::{make_grid, GridSpec, RealField, Spectrum};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/base-pulse.md")]
    mod base_pulse {}
    #[doc = include_str!("../../../book/src/linearization.md")]
    mod linearization {}
    #[doc = include_str!("../../../book/src/constants.md")]
    mod constants {}
    #[doc = include_str!("../../../book/src/contraction.md")]
    mod contraction {}
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    mod asymptotics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
