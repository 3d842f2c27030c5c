//! Desk-scale numerics for low-rank adaptation.
//!
//! Everything is generic over [`Scalar`]; the `*64` aliases are the
//! instantiations used by the toolkit.

mod adapter;
mod attention;
mod decoder;
mod error;
mod matrix;
mod scalar;

pub use adapter::{lora_forward, merge, LoraAdapter};
pub use attention::{attention, log_softmax, softmax};
pub use decoder::{copy_task, DecoderConfig, DecoderWeights, LoraGrads, SequenceExample, ToyDecoder};
pub use error::LoraError;
pub use matrix::Matrix;
pub use scalar::Scalar;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type LoraAdapter64 = LoraAdapter<f64>;
pub type LoraAdapter32 = LoraAdapter<f32>;
pub type ToyDecoder64 = ToyDecoder<f64>;
