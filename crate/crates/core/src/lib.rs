//! Face-region landmark conditioning for multimodal token streams.
//!
//! Landmarks are grouped into nine face regions and projected into tokens
//! ([`frlp`]); visual tokens attend to those tokens under a region-patch
//! proximity bias ([`frgca`], [`geometry`]). A miniature decoder exercises
//! the two-stage training contract ([`toytrain`]). Free-text outputs are
//! scored with [`evalkit`] and annotation manifests are curated with
//! [`datapipe`].

pub mod cli;
pub mod datapipe;
pub mod error;
pub mod evalkit;
pub mod frgca;
pub mod frlp;
pub mod geometry;
pub mod gradcheck;
pub mod nn;
pub mod toytrain;

pub use error::{Error, Result};
