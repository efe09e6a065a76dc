//! Numerical continuation of homoclinic orbits for parameterized
//! diffeomorphisms, with the Hénon family as the reference system.
//!
//! The crate is organized along the pipeline:
//!
//! * [`map`] — map abstraction, Hénon instance, fixed points and
//!   hyperbolic splittings,
//! * [`linalg`] — bordered block-bidiagonal solver used by all Newton
//!   systems on orbit segments,
//! * [`orbit`] — finite orbit segments, the boundary value operator and
//!   its Newton solver,
//! * [`seed`] — manifold shooting to produce initial homoclinic orbits,
//! * [`continuation`] — pseudo-arclength branch tracing, fold location
//!   and classification,
//! * [`tangency`] — kernel/adjoint solutions and the tangency constants
//!   at a fold, quadratic fold-law fits,
//! * [`multihump`] — pseudo-orbits from symbol sequences, shadowing,
//!   catalog enumeration and empirical cycle extraction,
//! * [`graph`] — the labeled transition graph, LR-cycle partitions and
//!   their mechanical verification.

pub mod continuation;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod map;
pub mod multihump;
pub mod orbit;
pub mod seed;
pub mod tangency;

pub use error::Error;
pub use map::{FixedPointData, HenonMap, HyperbolicSplitting, ParameterizedMap};
pub use orbit::{BoundaryKind, NewtonSettings, OrbitSegment};

/// Default homoclinic reference parameter for the Hénon family.
pub const LAMBDA_TILDE: f64 = 0.35;

/// Default orbit segment interval.
pub const DEFAULT_J: (i64, i64) = (-20, 21);
