//! Numerical laboratory for linear kinetic equations
//! `∂_t f + v·∇_x f − ∇φ·∇_v f = σ(x) ℒ f` with degenerate thermalisation.
//!
//! Modules follow the data flow: [`phase`] builds grids and equilibria,
//! [`collision`] and [`transport`] provide the two halves of the generator,
//! [`control`] checks geometric control, [`evolve`] runs and certifies decay,
//! [`funineq`] implements the weighted divergence/Korn/Stokes machinery and
//! [`hypo`] the commutator suite and the degenerate gap scan.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod collision;
pub mod control;
pub mod error;
pub mod evolve;
pub mod funineq;
pub mod hypo;
pub mod linalg;
pub mod phase;
pub mod transport;

pub use collision::{CheegerReport, CollisionOperator, Gamma2Report, SpectralGapReport};
pub use control::{ControlConfig, GccMode, GccReport, PsiWeight};
pub use error::{Error, Result};
pub use evolve::{DecayReport, EvolutionConfig, GeneratorMatrix, Model, Splitting};
pub use funineq::{DivergenceSolution, InequalityReport, WeightedDomain};
pub use hypo::{CommutatorSystem, GapScan};
pub use phase::{
    DegeneracyWeight, Field, PhaseGrid, Potential, Region, SpatialDomain, VelocityGrid,
    VelocitySpace,
};
pub use transport::{BoundaryOperator, CharacteristicState};

/// Crate version recorded in provenance headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
