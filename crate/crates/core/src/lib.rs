//! Floquet spectra of periodic orbits of delay differential equations with a
//! large delay `N + tau`.

pub mod charfun;
pub mod error;
pub mod floquet;
pub mod linalg;
pub mod model;
pub mod orbit;
pub mod propagator;
pub mod quadrature;
pub mod spectra;
pub mod steps;
pub mod verdict;

pub use error::{Error, Result};
pub use linalg::C64;
