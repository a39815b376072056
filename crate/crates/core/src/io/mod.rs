//! Files: volumes, checkpoints, slice images and run configuration.

mod checkpoint;
mod config;
mod image;
mod vvol;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointKind, CheckpointMeta,
    LoadMode, RngState, StoredTensor, TransferReport, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::RunConfig;
pub use image::{dump_slice, encode_pgm, encode_ppm, render_slice, slice_plane, SliceImage, SliceMode, LABEL_PALETTE};
pub use vvol::{read_vvol, write_vvol, DType, VolHeader, Volume, VVOL_HEADER_LEN, VVOL_MAGIC};

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        atomic_write(&p, b"first").unwrap();
        atomic_write(&p, b"second").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
