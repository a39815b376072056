//! Sliding-window inference of an untrained tiny model over a 48 x 64 x 40
//! volume with a 32^3 window, comparing constant and Gaussian blending.

use unetformer::decoders::{DecoderConfig, SegModel};
use unetformer::labels::Labels;
use unetformer::runtime::{sliding_window_infer, window_origins, window_stride, Blend, SlidingWindowConfig};
use unetformer::swin::EncoderConfig;
use unetformer::Tensor;

fn main() -> unetformer::Result<()> {
    let model = SegModel::new(&EncoderConfig::tiny(), &DecoderConfig::default(), 3)?;
    let volume = Tensor::from_fn(&[1, 1, 48, 64, 40], |i| ((i % 97) as f64 / 97.0).powi(2));
    let stride = window_stride(32, 0.7);
    for extent in [48, 64, 40] {
        println!("extent {extent}: origins {:?}", window_origins(extent, 32, stride));
    }
    for blend in [Blend::Constant, Blend::Gaussian] {
        let cfg = SlidingWindowConfig {
            roi: [32; 3],
            overlap: 0.7,
            blend,
        };
        let probs = sliding_window_infer(&|w| Ok(model.forward(w)?.logits), &volume, &cfg)?;
        let labels = Labels::argmax(&probs)?;
        let counts: Vec<usize> = (0..3).map(|c| labels.count(c)).collect();
        println!(
            "{blend:?}: probabilities {:?}, voxels per class {counts:?}",
            probs.shape()
        );
    }
    Ok(())
}
