//! Numerical tools for rate-function dichotomies of evolution families.

pub mod adapted;
pub mod dichotomy;
pub mod error;
pub mod family;
pub mod fit;
pub mod fixtures;
pub mod funcspaces;
pub mod green;
pub mod io;
pub mod linalg;
pub mod rates;
pub mod robust;
pub mod scenario;

pub use error::{Error, Result};
