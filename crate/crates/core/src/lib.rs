//! Unsupervised moving-object segmentation by adversarial contextual
//! information separation.
//!
//! A mask generator proposes a foreground region from an image and its
//! optical flow; an inpainter tries to reconstruct the flow inside the region
//! from the flow outside it (and vice versa). The inpainter minimizes the
//! normalized reconstruction error while the generator maximizes it, so the
//! generator is driven toward regions whose motion cannot be explained by
//! their context.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. File formats, configuration and the command line live in the
//! companion `cis` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_op_in_unsafe_fn)]
// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod field;
pub mod infomeasure;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
pub use field::{FlowField, Frame, Mask, SoftMask};
