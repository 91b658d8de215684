//! Zero-temperature message passing with random tiebreaking for community
//! detection in the sparse stochastic block model.
//!
//! The crate is split along the three ways the model is studied:
//!
//! * [`cavity_q2`] and [`cavity`] solve the cavity fixed-point equations in
//!   closed form (two groups) and for any number of groups, including the
//!   detectability thresholds and the semisupervised variants.
//! * [`popdyn`] runs annealed population dynamics over a pool of messages.
//! * [`graph`] generates planted-partition graphs and runs the quenched
//!   message-passing algorithm on them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cavity;
pub mod cavity_q2;
pub mod graph;
pub mod numerics;
pub mod params;
pub mod popdyn;
pub mod tiebreak;

pub use cavity::{Accuracy, FixedPoint, PhaseThresholds, RhoCritical, Tangency};
pub use cavity_q2::{Q2Params, Q2State};
pub use graph::{MessageInit, MessagePassingConfig, OverlapReport, SbmGraph};
pub use params::{ModelParams, ParamError};
pub use popdyn::{MessagePool, PopDynConfig, PopDynTrace};
pub use tiebreak::BetaMode;
