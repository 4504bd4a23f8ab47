//! Laboratory for terminal-reward absorbing MDPs: conversion-funnel models,
//! Beta-attribution learners and their benchmarks, exact planners, and a
//! seeded simulation harness.

pub mod agents;
pub mod error;
pub mod experiments;
pub mod funnel_mdp;
pub mod planner;
pub mod rng;
pub mod simulator;
pub mod verification;

pub use error::{Error, Result};
