//! Interactive volumetric annotation engine.
//!
//! Load a volume, place point or box prompts on a few slices, predict masks
//! for those slices and propagate them through the rest of the volume. The
//! [`engine::Engine`] type ties the pieces together; the modules below can
//! also be used on their own.

pub mod annotation;
pub mod batch;
pub mod engine;
pub mod error;
pub mod fsutil;
pub mod native;
pub mod orchestrator;
pub mod par;
pub mod predictor;
pub mod refine;
pub mod store;
pub mod volume;

pub use error::{Error, Result};
