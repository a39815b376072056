//! Training, synthetic data and sliding-window inference.

mod data;
mod fit;
mod optim;
mod sliding;

pub use data::{augment, synth_dataset, AugmentFlags, SegSample, SynthConfig};
pub use fit::{fit, validation_dice, StepRecord, TrainConfig, TrainLog};
pub use optim::{lr_at, AdamW, AdamWConfig};
pub use sliding::{sliding_window_infer, window_origins, window_stride, Blend, SlidingWindowConfig};
