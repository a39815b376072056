//! Skip-feature shapes and decoder outputs for a few input sizes, checked
//! against an actual forward pass of the tiny configuration.

use unetformer::decoders::{DecoderConfig, SegModel, Variant};
use unetformer::swin::{skip_shapes, EncoderConfig};
use unetformer::{no_grad, Tensor};

fn main() -> unetformer::Result<()> {
    for s in [32, 64, 96] {
        println!("input {s}^3, default encoder:");
        for (i, shape) in skip_shapes(&EncoderConfig::default(), [s; 3])?.iter().enumerate() {
            println!("  skip {i}: {shape:?}");
        }
    }

    let enc = EncoderConfig::tiny();
    let x = Tensor::from_fn(&[1, 1, 32, 32, 32], |i| ((i * 7919) % 101) as f64 / 101.0);
    for variant in [Variant::Cnn, Variant::Transformer] {
        let model = SegModel::new(
            &enc,
            &DecoderConfig {
                variant,
                ..DecoderConfig::default()
            },
            0,
        )?;
        let skips = no_grad(|| model.encoder.encode(&x))?;
        let out = no_grad(|| model.forward(&x))?;
        println!(
            "tiny {variant:?}: bottleneck {:?}, logits {:?}",
            skips.bottleneck().shape(),
            out.logits.shape()
        );
    }
    Ok(())
}
