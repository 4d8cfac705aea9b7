//! Extrinsic geometry of almost-product pseudo-Riemannian structures on a
//! coordinate chart: configuration tensors of a pair of orthogonal
//! distributions, curvature identities, action quadrature and
//! Euler-Lagrange residuals, with all derivatives supplied by nested
//! forward-mode dual numbers.

pub mod error;
pub mod scalar;
pub mod linalg;
pub mod exprlang;
pub mod chart;
pub mod calculus;
pub mod extrinsic;
pub mod identities;
pub mod numerics;
pub mod variation;
pub mod catalog;

pub use error::GeomError;
