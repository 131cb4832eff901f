//! Random-forest proximities and case-based explanations.
//!
//! The crate trains bagged CART forests, derives three forest proximities
//! (original, out-of-bag and GAP) from their leaves and bootstrap counts, and
//! uses the resulting distances to retrieve prototypes, critics,
//! semi-factuals and counter-factuals from the training data. Explanations
//! are scored with a suite of distance- and proximity-based metrics under a
//! cross-validated experiment runner.

pub mod cli;
pub mod data;
pub mod error;
pub mod explain;
pub mod forest;
pub mod mds;
pub mod metrics;
pub mod pipeline;
pub mod proximity;
pub mod seeds;

pub use error::{Error, Result};
