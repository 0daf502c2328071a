//! Particle approximations of Feynman-Kac path measures with backward smoothing.
//!
//! The crate has four layers:
//!
//! * [`model`]: the model trait and path functionals,
//! * [`particle`]: the mean-field particle filter and its genealogy,
//! * [`smoother`]: forward-only and batch backward smoothing,
//! * [`oracle`]: exact finite-state quantities used to check the particle code,
//!
//! plus [`stats`] for replicate experiments and verdicts and [`cli`] for the
//! `fkgen` binary.

pub mod cli;
pub mod error;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod particle;
pub mod rng;
pub mod smoother;
pub mod stats;

pub use error::{Error, Result};
pub use model::{FeynmanKacModel, FunctionalKind, PathFunctional, State};
pub use oracle::FiniteStateModel;
pub use particle::{CloudHistory, EpsilonRule, ParticleCloud, ParticleFilter, SelectionConfig};
pub use rng::RandomStreams;
pub use smoother::{OnlineSmoother, SmootherMode};
