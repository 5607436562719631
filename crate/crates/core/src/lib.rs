//! Learning polynomial vector fields from noisy trajectory samples while
//! enforcing side information (equilibria, symmetry, sign and monotonicity
//! conditions, invariant sets, gradient and Hamiltonian structure).
//!
//! Side information compiles to affine equalities and Putinar-type sum of
//! squares certificates; together with the loss they form a conic program
//! that is solved by the bundled interior-point method in [`conic`].

pub mod conic;
pub mod dynamics;
pub mod experiments;
pub mod field;
pub mod learn;
pub mod poly;
pub mod semialg;
pub mod sideinfo;
pub mod sos;

pub use dynamics::{ClosedForm, Dataset, FieldHandle, Trajectory};
pub use experiments::{ExperimentConfig, ExperimentError, GroundTruthModel, ModelId};
pub use field::VectorField;
pub use learn::{LearnError, LearnedModel, ModelFile};
pub use poly::{monomial_basis, Monomial, MultiPoly, PolyError, PolyVec};
pub use semialg::{BasicSemialgebraicSet, Grid, SetError};
pub use sideinfo::{SideInfo, SideInfoItem};
