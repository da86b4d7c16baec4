//! leaflab: a numerical laboratory for kernel foliations of exact
//! presymplectic forms under torus actions.
//!
//! The crate builds level-set submanifolds of a flat ambient space, restricts
//! an exact two-form `omega = d(alpha)` to their tangent spaces, averages the
//! one-form over a torus action, locates critical points of the resulting
//! moment-like functions, traces leaves of the kernel foliation, and certifies
//! critical leaves as torus orbits.

pub mod action;
pub mod config;
pub mod error;
pub mod expr;
pub mod foliation;
pub mod geometry;
pub mod parallel;
pub mod pipeline;
pub mod report;
pub mod sample;
pub mod scenario;

pub use error::{Error, Result};
pub use expr::Expression;
pub use scenario::{Lab, Scenario};
