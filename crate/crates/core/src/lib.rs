//! Robust counterfactual bounds from logged play in Bayesian games.
//!
//! A dataset of actions observed in one game is explained by hypothesised
//! types, then re-played in a counterfactual game. The set of type/action
//! reports whose regret stays within `eps` in both games bounds any
//! evaluation of the counterfactual outcome.

pub mod datagen;
pub mod cli;
pub mod dataset;
pub mod dist;
pub mod error;
pub mod experiment;
pub mod history;
pub mod mechanisms;
pub mod oracle;
pub mod revelation;
pub mod rng;
pub mod solver;
pub mod space;
pub mod valuation;

pub use error::{Result, RmacError};
