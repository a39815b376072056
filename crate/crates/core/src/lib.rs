//! UNetFormer and UNetFormer+ for volumetric segmentation.
//!
//! A 3D shifted-window transformer encoder feeds skip features at six
//! resolutions into either a convolutional decoder (UNetFormer) or a windowed
//! transformer decoder (UNetFormer+). The encoder can be pre-trained by
//! reconstructing randomly masked cubes of the input through a lightweight
//! skip-connected decoder, then fine-tuned for segmentation.
//!
//! Everything runs on a small `f64` tensor type with reverse-mode gradients
//! ([`tensor`]), checked against central finite differences.

pub mod cli;
pub mod decoders;
pub mod error;
pub mod gradsuite;
pub mod io;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pretrain;
pub mod runtime;
pub mod swin;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{no_grad, Tensor};
