//! Pre-trains the tiny encoder by masked reconstruction, saves a checkpoint,
//! loads it into a segmentation model and compares fine-tuning speed with
//! training from random initialization.
//!
//! `cargo run --release --example pretrain_finetune -- [seed] [pretrain_steps]`

use unetformer::decoders::{DecoderConfig, SegModel};
use unetformer::io::{load_checkpoint, save_checkpoint, CheckpointMeta, LoadMode};
use unetformer::pretrain::{pretrain, PretrainConfig, PretrainModel, PretrainState};
use unetformer::runtime::{fit, synth_dataset, AugmentFlags, SynthConfig, TrainConfig};
use unetformer::swin::EncoderConfig;

fn main() -> unetformer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(0, |s| s.parse().expect("seed"));
    let pre_steps: usize = args.get(1).map_or(100, |s| s.parse().expect("steps"));
    let enc = EncoderConfig::tiny();
    let size = 32;

    let unlabeled = synth_dataset(4, size, 3, 1000 + seed, SynthConfig::default())?;
    let volumes: Vec<_> = unlabeled.iter().map(|s| s.image.clone()).collect();
    let pcfg = PretrainConfig {
        lr: 1e-3,
        steps: pre_steps,
        patch_size: 8,
        seed,
        ..PretrainConfig::default()
    };
    let mut state = PretrainState::new(PretrainModel::new(&enc, seed)?, pcfg.optimizer);
    let losses = pretrain(&mut state, &volumes, &pcfg, None)?;
    println!("pretrain loss {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    let dir = tempfile::tempdir()?;
    let ck_path = dir.path().join(format!("pretrain_{seed}.ufck"));
    save_checkpoint(
        &ck_path,
        &state.model.params,
        &CheckpointMeta::pretrain(&state.model, pre_steps as u64, seed),
    )?;

    let data = synth_dataset(1, size, 3, seed, SynthConfig::default())?;
    let tcfg = TrainConfig {
        lr: 6e-3,
        epochs: 300,
        augment: AugmentFlags::none(),
        val_every: 5,
        target_dice: Some(0.95),
        seed,
        ..TrainConfig::default()
    };
    let dec = DecoderConfig::default();

    let scratch = SegModel::new(&enc, &dec, seed + 1)?;
    let a = fit(&scratch, &data, &[], &tcfg, None, None)?;

    let tuned = SegModel::new(&enc, &dec, seed + 1)?;
    let report = load_checkpoint(&ck_path)?.apply(&tuned.params, LoadMode::Transfer)?;
    println!(
        "transfer: {} matched, {} missing, {} unexpected, {} shape mismatches",
        report.matched.len(),
        report.missing.len(),
        report.unexpected.len(),
        report.shape_mismatches.len()
    );
    let b = fit(&tuned, &data, &[], &tcfg, None, None)?;
    println!(
        "steps to Dice > 0.95: scratch {:?} (best {:.4}), pre-trained {:?} (best {:.4})",
        a.reached_target_at, a.best_val_dice, b.reached_target_at, b.best_val_dice
    );
    Ok(())
}
