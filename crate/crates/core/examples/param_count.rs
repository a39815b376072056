//! Parameter totals for both model variants at a few embedding widths.
//!
//! ```bash
//! cargo run --release --example param_count
//! ```

use unetformer::decoders::{parameter_breakdown, DecoderConfig, Variant};
use unetformer::swin::EncoderConfig;

fn main() -> unetformer::Result<()> {
    println!(
        "{:<12} {:>6} {:>12} {:>12} {:>12}",
        "variant", "C", "encoder", "decoder", "total"
    );
    for c in [48, 96] {
        // keep head width at 32 channels per head
        let enc = EncoderConfig {
            embed_dim: c,
            num_heads: (0..4).map(|s| (c << s) / 32).collect(),
            ..EncoderConfig::default()
        };
        for variant in [Variant::Cnn, Variant::Transformer] {
            let dec = DecoderConfig {
                variant,
                ..DecoderConfig::default()
            };
            let n = parameter_breakdown(&enc, &dec)?;
            println!(
                "{:<12} {:>6} {:>11.2}M {:>11.2}M {:>11.2}M",
                format!("{variant:?}").to_lowercase(),
                c,
                n.encoder as f64 / 1e6,
                n.decoder as f64 / 1e6,
                n.total as f64 / 1e6
            );
        }
    }
    Ok(())
}
