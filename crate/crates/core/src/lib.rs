//! Chernoff approximation of convex monotone semigroups on uniform grids.

pub mod bounds;
pub mod convex_expectation;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod iterate;
pub mod mollifier;
pub mod nisio;
pub mod payoff;
pub mod properties;
pub mod quadrature;
pub mod rates;
pub mod reference;
pub mod stencil;

pub use error::{Error, Result};
