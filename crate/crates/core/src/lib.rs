//! Numerical laboratory for multiphase high-frequency solutions of the Einstein
//! vacuum equations: polarization operators, the order-0 hierarchy, mixed-harmonic
//! correctors, oscillatory initial data and lambda-scaling checks.

// `!(x > 0.0)` rejects NaN; index loops mirror the tensor formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiments;
pub mod geometry;
pub mod hierarchy;
pub mod initialdata;
pub mod phases;
pub mod polarization;
pub mod tensor;
pub mod transport;

pub use error::{LabError, LabResult};
pub use tensor::{Real, Sym3, Sym4, Vec3, Vec4};
