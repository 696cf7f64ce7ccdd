// SPDX-License-Identifier: MIT OR Apache-2.0

//! Tests whether a neuron's activation space mirrors the categorical
//! structure of its core-tokens.
//!
//! Three analyses run per neuron and aggregate per layer:
//!
//! * [`topdown`]: do categorical clusters differ in mean activation?
//! * [`interleave`]: do the clusters' activation spans overlap?
//! * [`bottomup`]: are activation segments semantically homogeneous?

pub mod bottomup;
pub mod cluster;
pub mod config;
pub mod data;
pub mod error;
pub mod interleave;
pub mod manifest;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod segment;
pub mod stats;
pub mod synth;
pub mod topdown;

pub use error::{Error, Result};
