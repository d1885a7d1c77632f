//! Arterial signal-timing lab for semi-actuated coordinated control.
//!
//! The pipeline: expand entry volumes over the [`network`], build a base
//! plan with [`timing::optimize_base_plan`], derive the factored plan with
//! [`timing::apply_actf`], run both through the [`sim`] (which drives one
//! [`controller`] per intersection), and analyse the delay reduction over a
//! [`design`]ed experiment with [`regression`]. [`experiment`] wires the
//! whole thing together with persistence and parallel execution.

pub mod calibration;
pub mod controller;
pub mod design;
pub mod error;
pub mod experiment;
pub mod network;
pub mod phase;
pub mod regression;
pub mod sim;
pub mod timing;

mod streams;

pub use error::{Error, Result};
