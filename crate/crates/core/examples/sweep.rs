//! Small masking-ratio x patch-size sweep on synthetic 32^3 volumes, printed
//! as CSV. Cells whose mask would be empty are reported as skipped.

use unetformer::cli::sweep_csv;
use unetformer::pretrain::{ablation_sweep, PretrainConfig, SweepConfig};

fn main() -> unetformer::Result<()> {
    let cfg = SweepConfig {
        vol_size: 32,
        volumes: 2,
        pretrain: PretrainConfig {
            lr: 1e-3,
            steps: 8,
            warmup_steps: 1,
            ..PretrainConfig::default()
        },
        ..SweepConfig::default()
    };
    let cells = ablation_sweep(&[0.2, 0.4, 0.8], &[8, 16], &cfg)?;
    for c in cells.iter().filter(|c| c.skipped.is_some()) {
        eprintln!(
            "skipped ({}, {}): {}",
            c.ratio,
            c.patch,
            c.skipped.as_deref().unwrap_or("")
        );
    }
    print!("{}", String::from_utf8_lossy(&sweep_csv(&cells)?));
    Ok(())
}
