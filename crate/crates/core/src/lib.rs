//! Volterra processes driven by finite-activity jump semimartingales:
//! kernels of smooth variation, driver paths, two independent evaluators,
//! fractional Lévy paths and path-regularity diagnostics.

pub mod drivers;
pub mod error;
pub mod expcli;
pub mod fraclevy;
pub mod kernels;
pub mod quad;
pub mod regdiag;
pub mod volterra;

pub use error::{Error, Result};
