//! Monte Carlo laboratory for surface measures on level sets {g = r} of the
//! squared-L2-norm functional g(x) = (1/2) ||x||_H^2 of n-dimensional
//! Brownian motion: Malliavin density representations, slab-limit surface
//! measures, the level-set integration-by-parts identity, and the Girsanov
//! extension to gradient-system SDEs.

pub mod density;
pub mod ensemble_io;
pub mod error;
pub mod grid;
pub mod gridfn;
pub mod laplace;
pub mod malliavin;
pub mod path;
pub mod rng;
pub mod runner;
pub mod sde;
pub mod stats;
pub mod surface;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use gridfn::GridFunctionH;
pub use malliavin::{CylindricalFunctional, MalliavinRecord};
pub use path::{backward_ito, forward_ito, BrownianPath, PathEnsemble};
pub use rng::RngSpec;
