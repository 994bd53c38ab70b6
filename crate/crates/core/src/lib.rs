//! Segmentation masks from the attention tensors of a text-to-image
//! diffusion model.
//!
//! The pipeline reads serialized attention bundles ([`tensor_store`]),
//! aggregates the cross-attention layers and propagates them through the
//! self-attention affinity ([`fusion`]), optionally refines the result with
//! a fully-connected CRF ([`densecrf`]), and scores the masks
//! ([`metrics`]). Personalized instance localization lives in
//! [`instance_assign`]. [`synth`] generates bundles with known ground truth
//! so that every stage can be exercised without a diffusion model.

pub mod config;
pub mod densecrf;
pub mod error;
pub mod fusion;
pub mod instance_assign;
pub mod interp;
pub mod metrics;
pub mod prompt_plan;
pub mod synth;
pub mod tensor_store;

pub use error::{Error, Result};
