//! Multi-ABS trajectory learning over a gridded service area.
//!
//! Each aerial base station is a tabular Q-learning agent. The reward for a
//! move comes from solving that ABS's power and sub-channel allocation at its
//! new position, minus a distance-to-destination term and a proximity
//! penalty.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod channel;
pub mod environment;
pub mod geometry;
pub mod qlearning;
pub mod rng;
