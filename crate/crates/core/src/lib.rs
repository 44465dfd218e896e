//! Simulator and verification toolkit for a parabolic system in which a
//! population diffuses with a motility set by the local level of a signal
//! it consumes:
//!
//! ```text
//! du/dt = laplacian(u * gamma(v))        (zero-flux walls)
//! dv/dt = laplacian(v) - u v
//! ```
//!
//! The semi-implicit scheme conserves the population mass exactly, keeps
//! both fields nonnegative, and obeys a per-step dissipation inequality for
//! the signal. The diagnostics layer tracks the norm decay, a composite
//! decreasing functional, and the slack of the supporting inequalities, so
//! a run doubles as a numerical certificate that the long-time limit is the
//! flat state `(mean(u), 0)`.

pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod grid;
mod linsolve;
pub mod motility;
pub mod scenario;
pub mod stepper;

pub use diagnostics::{DiagnosticsRecord, WindowIntegrals, CSV_HEADER};
pub use elliptic::{poincare_constant, DerivedConstants, PoissonWorkspace};
pub use error::Error;
pub use grid::{Field, Grid, Norms};
pub use motility::Motility;
pub use scenario::{RateFit, RunMode, RunOutput, ScenarioConfig, Summary};
pub use stepper::{SimState, StepConfig};

pub(crate) mod fmt {
    /// Scientific notation with 17 significant digits: round-trips f64 bits.
    pub fn sci17(x: f64) -> String {
        format!("{x:.16e}")
    }

}
