//! Nonadditive fixed-effects estimation for balanced panels.
//!
//! The crate estimates rank-indexed coefficient functions `β(τ)` from panel data
//! in four steps: a time-series OLS fit per unit, counterfactual outcomes at a
//! sorting point `x*`, a sort of those outcomes, and extraction of the unit whose
//! outcome sits at rank `⌈nτ⌉`. Around that core it provides the usual baselines
//! (within fixed effects and two-step FE quantile regression), a cross-sectional
//! bootstrap for standard errors, the simulation designs used to study the
//! estimator, and a deterministic Monte Carlo harness.

pub mod bootstrap;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod mc_harness;
pub mod panel_data;
pub mod qr_solver;
pub mod rng;
mod sum;

pub use error::{Error, Result};
pub use panel_data::{ColumnMap, PanelDataset, ValidationReport};
