//! Saves a pre-training checkpoint and a VVOL volume, reads both back, and
//! shows which parameters transfer into a segmentation model.

use unetformer::decoders::{DecoderConfig, SegModel};
use unetformer::io::{
    load_checkpoint, read_vvol, save_checkpoint, write_vvol, CheckpointMeta, DType, LoadMode, Volume,
};
use unetformer::pretrain::PretrainModel;
use unetformer::swin::EncoderConfig;
use unetformer::Tensor;

fn main() -> unetformer::Result<()> {
    let dir = std::env::temp_dir().join("unetformer-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let enc = EncoderConfig::tiny();

    let pre = PretrainModel::new(&enc, 11)?;
    let ck_path = dir.join("pretrain.ufck");
    save_checkpoint(&ck_path, &pre.params, &CheckpointMeta::pretrain(&pre, 0, 11))?;
    let ck = load_checkpoint(&ck_path)?;
    println!(
        "checkpoint: {:?}, {} tensors, {} bytes",
        ck.meta.kind,
        ck.tensors.len(),
        std::fs::metadata(&ck_path)?.len()
    );

    let seg = SegModel::new(&enc, &DecoderConfig::default(), 12)?;
    let report = ck.apply(&seg.params, LoadMode::Transfer)?;
    println!(
        "transfer: {} matched (all encoder), {} decoder tensors left fresh, {} recon tensors ignored, {} shape mismatches",
        report.matched.len(),
        report.missing.len(),
        report.unexpected.len(),
        report.shape_mismatches.len()
    );
    match ck.apply(&seg.params, LoadMode::Strict) {
        Ok(_) => println!("strict load unexpectedly succeeded"),
        Err(e) => println!("strict load refused: {e}"),
    }

    let vol = Volume::from_tensor(
        &Tensor::from_fn(&[1, 1, 8, 8, 8], |i| (i as f64).sqrt()),
        [1.0, 1.0, 2.5],
        DType::F64,
    )?;
    let vol_path = dir.join("volume.vvol");
    write_vvol(&vol_path, &vol)?;
    let back = read_vvol(&vol_path)?;
    println!("vvol round trip bit-exact: {}", back == vol);
    Ok(())
}
