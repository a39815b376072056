//! Samples, augmentation and synthetic segmentation volumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Labels;
use crate::swin::INPUT_MULTIPLE;
use crate::tensor::Tensor;

/// Image `[1, 1, H, W, D]` with its label volume and voxel spacing.
#[derive(Debug, Clone)]
pub struct SegSample {
    pub image: Tensor,
    pub label: Labels,
    pub spacing: [f64; 3],
}

impl SegSample {
    pub fn new(image: Tensor, label: Labels, spacing: [f64; 3]) -> Result<Self> {
        image.expect_rank(5, "sample image")?;
        if image.shape()[..2] != [1, 1] || image.shape()[2..] != label.dims {
            return Err(Error::shape(format!(
                "image {:?} does not match label volume {:?}",
                image.shape(),
                label.dims
            )));
        }
        image.ensure_finite("sample image")?;
        Ok(SegSample { image, label, spacing })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.label.dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentFlags {
    pub flip: bool,
    pub rotate90: bool,
    pub intensity_scale: bool,
    pub intensity_shift: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        AugmentFlags {
            flip: true,
            rotate90: true,
            intensity_scale: true,
            intensity_shift: true,
        }
    }
}

impl AugmentFlags {
    pub fn none() -> Self {
        AugmentFlags {
            flip: false,
            rotate90: false,
            intensity_scale: false,
            intensity_shift: false,
        }
    }
}

/// Voxel permutation: output voxel `i` reads input voxel `map[i]`.
struct Remap {
    dims: [usize; 3],
    map: Vec<usize>,
}

impl Remap {
    fn identity(dims: [usize; 3]) -> Self {
        Remap {
            dims,
            map: (0..dims.iter().product()).collect(),
        }
    }

    /// Composes with a coordinate transform `f(out_coord) -> in_coord` on
    /// the current output grid, which becomes `new_dims`.
    fn then(self, new_dims: [usize; 3], f: impl Fn([usize; 3]) -> [usize; 3]) -> Self {
        let d = self.dims;
        let mut map = Vec::with_capacity(self.map.len());
        for x in 0..new_dims[0] {
            for y in 0..new_dims[1] {
                for z in 0..new_dims[2] {
                    let s = f([x, y, z]);
                    map.push(self.map[(s[0] * d[1] + s[1]) * d[2] + s[2]]);
                }
            }
        }
        Remap { dims: new_dims, map }
    }
}

/// Flips each axis with probability 0.5, applies a random multiple of 90
/// degrees in a random plane whose two axes have equal extent, scales
/// intensities by a factor in (0.9, 1.1) and shifts them by an offset in
/// (-0.1, 0.1). Spatial ops move image and label together.
pub fn augment(sample: &SegSample, flags: AugmentFlags, rng: &mut impl Rng) -> Result<SegSample> {
    let dims0 = sample.dims();
    let mut remap = Remap::identity(dims0);
    if flags.flip {
        for axis in 0..3 {
            if rng.random_bool(0.5) {
                let e = remap.dims[axis];
                remap = remap.then(dims0, |mut c| {
                    c[axis] = e - 1 - c[axis];
                    c
                });
            }
        }
    }
    if flags.rotate90 {
        let planes: Vec<(usize, usize)> = [(0, 1), (0, 2), (1, 2)]
            .into_iter()
            .filter(|&(a, b)| remap.dims[a] == remap.dims[b])
            .collect();
        if !planes.is_empty() {
            let (a, b) = planes[rng.random_range(0..planes.len())];
            let k = rng.random_range(0..4);
            for _ in 0..k {
                let n = remap.dims[a];
                // out(i, j) = in(j, n - 1 - i) in the (a, b) plane
                remap = remap.then(dims0, |c| {
                    let mut s = c;
                    s[a] = c[b];
                    s[b] = n - 1 - c[a];
                    s
                });
            }
        }
    }
    let scale = if flags.intensity_scale {
        1.0 + rng.random_range(-0.1..0.1)
    } else {
        1.0
    };
    let shift = if flags.intensity_shift {
        rng.random_range(-0.1..0.1)
    } else {
        0.0
    };

    let img = sample.image.data();
    let image: Vec<f64> = remap.map.iter().map(|&i| img[i] * scale + shift).collect();
    let label: Vec<u16> = remap.map.iter().map(|&i| sample.label.values[i]).collect();
    let d = remap.dims;
    SegSample::new(
        Tensor::new(&[1, 1, d[0], d[1], d[2]], image)?,
        Labels::new(d, label)?,
        sample.spacing,
    )
}

/// Parameters of the synthetic segmentation task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Intensity step between consecutive classes.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            contrast: 1.0,
            noise: 0.1,
        }
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    fn contains(&self, p: [usize; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] as f64 - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

/// `n` volumes of edge `size`: background 0, an ellipsoidal organ (class 1)
/// with a smaller embedded tumor (class 2), and small extra blobs for
/// classes `3..k`. Class `c` has mean intensity `c * contrast`.
pub fn synth_dataset(n: usize, size: usize, k: usize, seed: u64, cfg: SynthConfig) -> Result<Vec<SegSample>> {
    if size == 0 || !size.is_multiple_of(INPUT_MULTIPLE) {
        return Err(Error::shape(format!(
            "volume size {size} must be a multiple of {INPUT_MULTIPLE}"
        )));
    }
    if k == 0 || k > u16::MAX as usize {
        return Err(Error::config(format!("class count {k} out of range")));
    }
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let dims = [size; 3];
    (0..n)
        .map(|_| {
            let mut shapes: Vec<(u16, Ellipsoid)> = Vec::new();
            if k >= 2 {
                let radii = [0, 1, 2].map(|_| rng.random_range(0.22 * s..0.32 * s));
                let center = [0, 1, 2].map(|a| {
                    let r = radii[a];
                    rng.random_range(r + 1.0..s - r - 1.0)
                });
                if k >= 3 {
                    let t_radii = radii.map(|r| r * rng.random_range(0.3..0.45));
                    let t_center = [0, 1, 2].map(|a| {
                        let slack = radii[a] - t_radii[a];
                        center[a] + rng.random_range(-0.4 * slack..0.4 * slack)
                    });
                    shapes.push((1, Ellipsoid { center, radii }));
                    shapes.push((
                        2,
                        Ellipsoid {
                            center: t_center,
                            radii: t_radii,
                        },
                    ));
                } else {
                    shapes.push((1, Ellipsoid { center, radii }));
                }
            }
            for c in 3..k {
                let radii = [0, 1, 2].map(|_| rng.random_range(0.06 * s..0.1 * s));
                let center = [0, 1, 2].map(|a| rng.random_range(radii[a]..s - radii[a]));
                shapes.push((c as u16, Ellipsoid { center, radii }));
            }
            let mut label = vec![0u16; size * size * size];
            let mut image = vec![0.0; size * size * size];
            let mut i = 0;
            for x in 0..size {
                for y in 0..size {
                    for z in 0..size {
                        for (c, e) in &shapes {
                            if e.contains([x, y, z]) {
                                label[i] = *c;
                            }
                        }
                        image[i] = label[i] as f64 * cfg.contrast + noise.sample(&mut rng);
                        i += 1;
                    }
                }
            }
            SegSample::new(
                Tensor::new(&[1, 1, size, size, size], image)?,
                Labels::new(dims, label)?,
                [1.0; 3],
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SegSample {
        let dims = [4, 4, 3];
        let n = 48;
        SegSample::new(
            Tensor::from_fn(&[1, 1, 4, 4, 3], |i| i as f64),
            Labels::new(dims, (0..n).map(|i| (i % 5) as u16).collect()).unwrap(),
            [1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn flags_off_is_identity() {
        let s = small();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = augment(&s, AugmentFlags::none(), &mut rng).unwrap();
        assert_eq!(a.image.to_vec(), s.image.to_vec());
        assert_eq!(a.label, s.label);
    }

    #[test]
    fn spatial_ops_move_label_with_image() {
        let s = small();
        let flags = AugmentFlags {
            intensity_scale: false,
            intensity_shift: false,
            ..AugmentFlags::default()
        };
        for seed in 0..20 {
            let a = augment(&s, flags, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            // image value i came from voxel i whose label is i % 5
            for (v, l) in a.image.to_vec().iter().zip(&a.label.values) {
                assert_eq!((*v as usize % 5) as u16, *l);
            }
        }
    }

    #[test]
    fn synthetic_classes_present_and_reproducible() {
        let a = synth_dataset(2, 32, 3, 9, SynthConfig::default()).unwrap();
        let b = synth_dataset(2, 32, 3, 9, SynthConfig::default()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!(x.label.count(1) > 0 && x.label.count(2) > 0);
            assert_eq!(x.image.to_vec(), y.image.to_vec());
        }
    }
}
