//! Security analysis for DC power-system state estimation.
//!
//! The library models measurement placements, synthesizes minimum-cost
//! undetectable false-data-injection attacks with partial topological
//! knowledge, and plans minimum-cost defenses using covert transmission-line
//! information, secured meters, PMUs, or a mix, with independent
//! verification oracles.

pub mod attack_synth;
pub mod dc_core;
pub mod defense;
pub mod error;
pub mod fixtures;
pub mod grid_model;
pub mod linalg;
pub mod milp;
pub mod observability;
pub mod tph;
pub mod verify;

pub use error::{GridError, Result};
