//! Numerical toolkit for the Wright-Fisher (Fleming-Viot) operator on the
//! canonical simplex: exact polynomial oracles, monotone discretizations,
//! tensor/prism operators, charts and parametrices, stochastic cross-checks
//! and the estimate scans built on top of them.

pub mod banded;
pub mod charts;
pub mod discretize;
pub mod error;
pub mod estimates;
pub mod expm;
pub mod fit;
pub mod multiplier;
pub mod poly;
pub mod poly_operator;
pub mod simplex;
pub mod sparse;
pub mod suite;
pub mod tensor;
pub mod wfmc;
pub mod wf1d;

pub use error::{Error, Result};
