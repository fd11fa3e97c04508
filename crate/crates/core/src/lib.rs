//! Attention branch encoder-decoder for generating fetching instructions
//! from an image and a pair of target/source bounding boxes.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod genbranch;
pub mod inference;
pub mod lab;
pub mod layers;
pub mod model;
pub mod nn;
pub mod run;
pub mod synthetic;
pub mod tokenizer;
pub mod training;
pub mod vab;

pub use error::{AbenError, Result};
