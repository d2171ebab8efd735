//! Numerical toolkit for one-dimensional parabolic equations whose diffusion
//! coefficient vanishes at an interior point `x0`.
//!
//! The crate is organised bottom-up:
//!
//! * [`coeff`] builds coefficient profiles `a(x)` and checks the structural
//!   hypotheses (weak/strong degeneracy, monotone quotients, integrability).
//! * [`mesh`] places grids, assembles the divergence `(a u_x)_x` and
//!   non-divergence `a u_xx` operators and the weighted inner products.
//! * [`pde`] time-steps the controlled forward problem and its adjoint with a
//!   theta-scheme whose adjoint is exact in the discrete inner product.
//! * [`weights`] evaluates Carleman weights, Hardy–Poincaré constants and the
//!   two sides of the weighted inequalities on discrete solutions.
//! * [`control`] estimates observability constants and synthesizes null
//!   controls by penalized HUM.

pub mod coeff;
pub mod control;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod pde;
pub mod quad;
pub mod weights;

pub use coeff::{
    check_degeneracy_hypotheses, check_nondegenerate_pair, make_prototype_profile,
    CoefficientProfile, DegeneracyKind, HypothesisReport, NonDegeneratePair, Verdict,
};
pub use control::{
    estimate_observability_constant, hum_null_control, regional_control_cutoff,
    semilinear_null_control, two_piece_control, ControlOptions, ControlResult,
    ObservabilityMethod, ObservabilityOptions, ObservabilityReport, PicardOptions,
    RegionalResult, SemilinearResult,
};
pub use error::{Error, Result};
pub use mesh::{DiscreteOperator, Form, NormKind, SpaceGrid, TimeGrid, WeightedNorm};
pub use pde::{ControlRegion, Field, ProblemSpec};
pub use weights::{CarlemanWeight, InequalityReport, WeightVariant};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
