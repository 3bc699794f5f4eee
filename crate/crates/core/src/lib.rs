//! Almost Hermitian structures on flat periodic tori.
//!
//! Nondegenerate two-forms ω and almost complex structures J live on a
//! periodic grid in dimension 2, 4 or 6. The crate evaluates the exterior
//! calculus and curvature of the induced metric, evolves pairs (ω, J) under
//! d*d-type flows, and checks principal symbols of the linearized operators.

pub mod curvature;
pub mod exact;
pub mod exterior;
pub mod fields;
pub mod flows;
pub mod hermitian;
pub mod linalg;
pub mod symbols;
