//! Projection-based Wasserstein distances between finitely supported
//! distributions, their distributional limits, and rescaled-bootstrap inference.
//!
//! The crate covers two distances built from projections `E` on the Stiefel
//! manifold `S_{d,k}`:
//!
//! * the integral projection robust distance `IW_p` ([`iprw`]), averaging
//!   `W_p^p` over a fixed set of frames (sliced Wasserstein for `k = 1`);
//! * the entropically regularized projection robust distance `PW_{p,lambda}`
//!   ([`prw`]), maximizing the Sinkhorn cost over frames.
//!
//! For both it provides samplers of the asymptotic laws of the empirical
//! distances and an m-out-of-n bootstrap ([`resampling`]) for tests and
//! confidence intervals.

pub mod error;
pub mod exact_transport;
pub mod entropic_transport;
pub mod iprw;
pub mod ks;
pub mod measures;
pub mod numeric;
pub mod projections;
pub mod prw;
pub mod resampling;
pub mod rng;
pub mod simplex;

mod network_simplex;

pub use error::{Error, Result};
pub use measures::{DirectionVector, GroundSpace, ProbVector};
pub use rng::SeedStream;
