//! Coral reef fast-slow model with geometric singular perturbation analysis
//! and simulation of rate-induced tipping under a ramped fishing effort.

pub mod cli;
pub mod experiments;
pub mod folded;
pub mod integrate;
pub mod manifold;
pub mod model;
pub mod roots;
