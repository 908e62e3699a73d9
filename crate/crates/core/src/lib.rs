//! Numerical laboratory for parameterized iterated function systems and
//! fiberwise-unipotent skew-products.
//!
//! The crate is organized bottom-up:
//!
//! * [`symbolic`]: words, shifts, cylinders, the sequence metric and pair strata.
//! * [`affine_ifs`]: parameterized affine contractions of `[-1, 1]` and their coding maps.
//! * [`skewprod`]: fiber systems over the full shift, unipotency checks, eigenvalue
//!   products, perturbations and the planar blender builder.
//! * [`thermo`]: partition sums, pressure, similarity dimension and Gibbs weights.
//! * [`transversality`]: empirical transversality scans and the density integral.
//! * [`measure_lab`]: pushforward measures, lower densities and cover measures.
//! * [`jets`]: jet index sets, jet transport and induced jet systems.

pub mod affine_ifs;
pub mod error;
pub mod expr;
pub mod jets;
pub mod measure_lab;
pub mod param;
pub mod rng;
pub mod skewprod;
pub mod symbolic;
pub mod system;
pub mod thermo;
pub mod transversality;

pub use affine_ifs::{build_interval_example, AffineBranch, AffineContraction, AffineIfsFamily};
pub use error::{LabError, Result};
pub use expr::Expr;
pub use param::ParamBox;
pub use skewprod::{build_planar_blender, FiberSystem, UnipotencyReport};
pub use symbolic::{Alphabet, BackwardSeq, FiniteWord, Letter, Orientation, Tail};
pub use system::{CodedPoint, CodedSystem};
