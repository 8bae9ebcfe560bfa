//! Biased-Bayesian decision modelling and time-allocation toolkit.
//!
//! The crate covers the decision model ([`bias`]), the assisting classifier
//! ([`data`]), time-dependent anchoring curves ([`response`]), the budgeted
//! time allocator ([`allocation`]), experiment simulation ([`harness`]) and the
//! live-session state machine ([`session`]). [`pipeline`] wires them together
//! from a [`config::RunConfig`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocation;
pub mod bias;
pub mod config;
pub mod data;
pub mod harness;
pub mod pipeline;
pub mod response;
pub mod schema;
pub mod seed;
pub mod session;
pub mod synth;
