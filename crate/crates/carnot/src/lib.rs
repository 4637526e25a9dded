//! Numerical geometric measure theory on Carnot groups.
//!
//! The crate provides, at desk scale:
//!
//! - a textual format and validator for graded/stratified Lie algebras
//!   ([`spec`]), with exact-rational structure constants;
//! - the polynomial group law, dilations and conjugation in exponential
//!   coordinates ([`algebra`]);
//! - homogeneous norms and distances, spherical-measure normalizations,
//!   Hausdorff brackets and Federer densities ([`metric`]);
//! - homogeneous subgroups, morphisms, kernels and splittings with their
//!   projection pair ([`subgroup`]);
//! - numerical Pansu differentials and an intrinsic implicit-function
//!   solver producing intrinsic graphs ([`graphs`]);
//! - area and coarea factors, surface integration, slicing measures and the
//!   cross-validation harnesses tying them together ([`measures`]);
//! - Heisenberg-specific closed forms ([`heisenberg`]);
//! - a key-value cache for expensive constants ([`cache`]).
//!
//! Every stochastic output is a [`qmc::MeasureEstimate`]: value, standard
//! error, sample count and seed, reproducible bit for bit.

pub mod algebra;
pub mod cache;
pub mod graphs;
pub mod heisenberg;
pub mod measures;
pub mod metric;
pub mod optim;
pub mod qmc;
pub mod report;
pub mod scenarios;
pub mod spec;
pub mod subgroup;

pub use algebra::{conjugate, dilate, hom_dimension, inverse, multiply, Dilation, Point};
pub use qmc::{Budget, MeasureEstimate};
pub use report::ValidationReport;
pub use spec::{builtin, parse_group_spec, validate_algebra, GradedAlgebra, GroupSpecSource};
