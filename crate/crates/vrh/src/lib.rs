//! Toolkit for studying phonon-assisted variable-range hopping numerically.
//!
//! The model is a continuous-time random walk on a marked point process:
//! points carry energy marks, and the walk hops between points x, y at the
//! symmetric rate exp(-|x-y| - beta(|E_x - E_y| + |E_x| + |E_y|)). The crate
//! provides four routes to the diffusivity of that walk and the glue to
//! compare them:
//!
//! * [`point_process`]: marked Poisson and perturbed-lattice environments,
//!   energy randomization and thinning, Palm conditioning.
//! * [`hopping_walk`]: event-driven kinetic Monte Carlo, mean-square
//!   displacement estimators, and the zero-corrector variational upper bound.
//! * [`resistor_network`]: the periodized two-terminal conductance network
//!   whose conductance converts into a diffusivity lower bound.
//! * [`percolation`]: coarse-grained site fields, disjoint left-right
//!   crossing counts, and the scale-selection criteria that make the
//!   resistor bound non-trivial.
//! * [`mott`]: the low-temperature schedule tying the pieces together and
//!   producing the stretched-exponential (Mott law) lower-bound data.
//!
//! [`io`] holds the plain-text, JSON-lines, and CSV formats used by the
//! command-line driver; [`rng`] the splittable seeding scheme that makes
//! every experiment reproducible under parallel execution.

pub mod error;
pub mod geometry;
pub mod hopping_walk;
pub mod io;
pub mod mott;
pub mod percolation;
pub mod point_process;
pub mod resistor_network;
pub mod rng;
pub mod stats;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
