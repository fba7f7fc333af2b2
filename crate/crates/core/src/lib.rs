//! Symbolic and numeric engine for NQ-manifolds, their representations, and
//! Wilson lines along super-curves.

pub mod error;
pub mod grassmann;
pub mod bar_complex;
pub mod graded_algebra;
pub mod linalg;
pub mod nq_manifold;
pub mod report;
pub mod representation;
pub mod scenarios;
pub mod supercurve;
pub mod wilson;

pub use error::{Error, Residual, Result};
pub use graded_algebra::{Chart, ChartRef, Derivation, Generator, GradedPoly, Monomial, Scalar};
pub use nq_manifold::{AlgebroidData, QStructure};
