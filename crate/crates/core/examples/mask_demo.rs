//! Masks a synthetic volume at the 0.4 / 16 operating point, reconstructs it
//! with a briefly pre-trained model and writes the three middle slices as PGM.
//!
//! `cargo run --release --example mask_demo -- [out_dir]`

use std::path::PathBuf;

use unetformer::io::{dump_slice, SliceMode};
use unetformer::no_grad;
use unetformer::pretrain::{apply_mask, generate_mask, pretrain, PretrainConfig, PretrainModel, PretrainState};
use unetformer::runtime::{synth_dataset, SynthConfig};
use unetformer::swin::EncoderConfig;

fn main() -> unetformer::Result<()> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "mask_demo_out".into()));
    std::fs::create_dir_all(&out_dir)?;
    let size = 64;
    let image = synth_dataset(1, size, 3, 5, SynthConfig::default())?.remove(0).image;
    let cfg = PretrainConfig {
        lr: 1e-3,
        steps: 30,
        warmup_steps: 3,
        ..PretrainConfig::default()
    };
    let mut state = PretrainState::new(PretrainModel::new(&EncoderConfig::tiny(), 0)?, cfg.optimizer);
    let losses = pretrain(&mut state, std::slice::from_ref(&image), &cfg, None)?;
    println!("masked L1: {:.4} -> {:.4}", losses[0], losses[losses.len() - 1]);

    let mask = generate_mask([size; 3], 16, 0.4, 99)?;
    let masked = apply_mask(&image, &mask, 0.0)?;
    let recon = no_grad(|| state.model.recon_forward(&masked))?;
    println!("{} of {} cubes masked", mask.masked_cubes.len(), mask.total_cubes());
    for (name, t) in [("original", &image), ("masked", &masked), ("reconstruction", &recon)] {
        let path = out_dir.join(format!("{name}.pgm"));
        dump_slice(&t.to_vec(), [size; 3], 0, size / 2, &path, SliceMode::Gray)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
