//! Core algorithms for causal multi-object tracking with online detector
//! adaptation.
//!
//! The crate is `no_std` (with `alloc`) so the tracking and learning math can
//! be embedded anywhere; file formats, configuration, and the command-line
//! front end live in the companion `odamot` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod geom;
pub mod linmodel;
pub mod metrics;
pub mod mtl;
pub mod providers;
pub mod rng;
pub mod sim;
pub mod tracker;
pub mod smc;
