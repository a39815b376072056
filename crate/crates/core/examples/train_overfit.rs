//! Overfits the tiny convolutional-decoder model on one synthetic 3-class
//! volume and prints the loss and validation Dice as it goes.
//!
//! `cargo run --release --example train_overfit -- [size] [steps] [lr]`

use unetformer::decoders::{DecoderConfig, SegModel};
use unetformer::runtime::{fit, synth_dataset, AugmentFlags, SynthConfig, TrainConfig};
use unetformer::swin::EncoderConfig;

fn main() -> unetformer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let size: usize = args.first().map_or(64, |s| s.parse().expect("size"));
    let steps: usize = args.get(1).map_or(300, |s| s.parse().expect("steps"));
    let lr: f64 = args.get(2).map_or(3e-3, |s| s.parse().expect("lr"));

    let data = synth_dataset(1, size, 3, 0, SynthConfig::default())?;
    let model = SegModel::new(&EncoderConfig::tiny(), &DecoderConfig::default(), 0)?;
    let cfg = TrainConfig {
        lr,
        epochs: steps,
        warmup_steps: 10,
        augment: AugmentFlags::none(),
        val_every: 10,
        target_dice: Some(0.95),
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let log = fit(&model, &data, &[], &cfg, None, None)?;
    for r in log.records.iter().filter(|r| r.val_dice.is_some()) {
        println!(
            "step {:4}  lr {:.2e}  loss {:.4}  dice {:.4}",
            r.step + 1,
            r.lr,
            r.loss,
            r.val_dice.unwrap()
        );
    }
    println!(
        "best dice {:.4} at step {:?}; target reached at {:?}; {:.1}s",
        log.best_val_dice,
        log.best_step.map(|s| s + 1),
        log.reached_target_at,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}
