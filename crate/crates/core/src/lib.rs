//! Numerical convex integration for the relaxed ideal-MHD inclusion in
//! space dimension n >= 4.
//!
//! States z = (u, b, M, Q, q) live on space-time points y = (x, t). Localized
//! plane waves ([`waves`]) are inserted ball by ball ([`scheme`]) so that the
//! field stays in the relaxed set ([`kgeometry`]) while its energy grows.

pub mod algebra;
pub mod error;
pub mod fields;
pub mod kgeometry;
pub mod qmc;
pub mod scheme;
pub mod wavecone;
pub mod waves;

pub use error::{Error, Result};

#[cfg(test)]
mod testkit;
