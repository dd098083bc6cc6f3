//! Utility maximization with nonsmooth utilities and random endowments in
//! finite-state, discrete-time markets with polyhedral convex trading cones.
//!
//! The crate computes the primal value `u(x) = sup E[U(x + (H·S)_T − B)]`
//! over admissible strategies, the dual value `w(x)` over the polar cone of
//! supermartingale measures, and checks the duality relations between them.

pub mod fixtures;
pub mod lp;
pub mod market;
pub mod utility;
pub mod dual_domain;
pub mod instances;
pub mod superrep;
pub mod duality;
pub mod oracle;
pub mod report;
pub(crate) mod barrier;
