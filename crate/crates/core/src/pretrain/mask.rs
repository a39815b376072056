//! Random cube masks over a volume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which `p^3` cubes of a volume are hidden.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub vol_dims: [usize; 3],
    pub patch: usize,
    pub ratio: f64,
    /// Cubes per axis.
    pub grid: [usize; 3],
    /// Sorted row-major cube indices.
    pub masked_cubes: Vec<usize>,
    pub seed: u64,
    pub masked_voxel_count: usize,
}

impl MaskSpec {
    pub fn total_cubes(&self) -> usize {
        self.grid.iter().product()
    }

    pub fn num_voxels(&self) -> usize {
        self.vol_dims.iter().product()
    }

    /// Per-voxel flag, row-major over the volume.
    pub fn voxel_mask(&self) -> Vec<bool> {
        let [h, w, d] = self.vol_dims;
        let p = self.patch;
        let mut out = vec![false; h * w * d];
        for &cube in &self.masked_cubes {
            let cz = cube % self.grid[2];
            let cy = (cube / self.grid[2]) % self.grid[1];
            let cx = cube / (self.grid[1] * self.grid[2]);
            for x in cx * p..(cx + 1) * p {
                for y in cy * p..(cy + 1) * p {
                    let row = (x * w + y) * d;
                    out[row + cz * p..row + (cz + 1) * p].iter_mut().for_each(|v| *v = true);
                }
            }
        }
        out
    }
}

/// `round_half_up(ratio * cubes)`.
pub fn masked_cube_count(ratio: f64, cubes: usize) -> usize {
    (ratio * cubes as f64 + 0.5).floor() as usize
}

/// Samples `round_half_up(ratio * cubes)` distinct cubes of edge `patch`
/// uniformly without replacement from a generator seeded with `seed`.
pub fn generate_mask(vol_dims: [usize; 3], patch: usize, ratio: f64, seed: u64) -> Result<MaskSpec> {
    if patch == 0 {
        return Err(Error::config("mask patch size must be >= 1"));
    }
    if vol_dims.iter().any(|&e| e == 0 || e % patch != 0) {
        return Err(Error::shape(format!(
            "volume {vol_dims:?} is not divisible into {patch}^3 cubes"
        )));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::domain(format!("mask ratio must be in [0, 1], got {ratio}")));
    }
    let grid = vol_dims.map(|e| e / patch);
    let total: usize = grid.iter().product();
    let count = masked_cube_count(ratio, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked_cubes = rand::seq::index::sample(&mut rng, total, count).into_vec();
    masked_cubes.sort_unstable();
    Ok(MaskSpec {
        vol_dims,
        patch,
        ratio,
        grid,
        masked_voxel_count: count * patch * patch * patch,
        masked_cubes,
        seed,
    })
}

/// Copy of `volume` (`[1, 1, H, W, D]` or any shape with matching voxel
/// count) with masked voxels set to `fill`. The result does not track
/// gradients.
pub fn apply_mask(volume: &Tensor, mask: &MaskSpec, fill: f64) -> Result<Tensor> {
    let spatial = volume.shape().get(volume.rank().saturating_sub(3)..).unwrap_or(&[]);
    if spatial != mask.vol_dims || volume.numel() != mask.num_voxels() {
        return Err(Error::shape(format!(
            "volume {:?} does not match mask over {:?}",
            volume.shape(),
            mask.vol_dims
        )));
    }
    let flags = mask.voxel_mask();
    let data = volume
        .data()
        .iter()
        .zip(&flags)
        .map(|(&v, &m)| if m { fill } else { v })
        .collect();
    Tensor::new(volume.shape(), data)
}
