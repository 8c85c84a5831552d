//! Explainable model predictive control.
//!
//! Solves finite-horizon nonlinear optimal control problems and explains
//! each control action by combining KKT multiplier analysis, counterfactual
//! re-solves, a signed physics knowledge graph and lagged causal discovery.

pub mod causality;
pub mod cli;
pub mod eval;
pub mod forensics;
pub mod greenhouse;
pub mod hypothesis;
pub mod kg;
pub mod ocp;
pub mod params;
pub mod solver;
