//! Window layout: shifting, padding and partitioning a token grid into
//! cubic windows, all expressed as row-gather index maps.

use crate::error::{Error, Result};
use crate::swin::TokenGrid;
use crate::tensor::Tensor;

/// Additive logit for attention pairs that must not interact.
pub const MASK_VALUE: f64 = -1e9;

/// Padding applied to reach a whole number of windows per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadRecord {
    pub dims: [usize; 3],
    pub window: [usize; 3],
    pub padded: [usize; 3],
}

impl PadRecord {
    pub fn pad(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.padded[a] - self.dims[a])
    }

    pub fn counts(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| self.padded[a] / self.window[a])
    }

    pub fn num_windows(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.window.iter().product()
    }
}

/// Index maps for one (grid size, window, shift) combination.
///
/// The window on each axis is `min(M, extent)`; shifting by `M / 2` only
/// happens on axes longer than `M`. The shift is applied to the unpadded
/// grid, then the shifted grid is padded at the far end.
#[derive(Debug, Clone)]
pub struct WindowLayout {
    pub pad: PadRecord,
    pub shift: [usize; 3],
    /// Source grid row for each window slot (window-major, then local
    /// row-major); `None` marks padding.
    pub gather: Vec<Option<usize>>,
    /// Window slot of each grid row.
    pub scatter: Vec<usize>,
    /// Local offset `(a, b, c)` of each slot within its window.
    local: Vec<[usize; 3]>,
    /// Per slot: `None` for padding, else the wrap-region id used for masking.
    region: Vec<Option<u8>>,
}

impl WindowLayout {
    pub fn new(dims: [usize; 3], m: usize, shifted: bool) -> Result<Self> {
        if m == 0 {
            return Err(Error::config("window size must be >= 1"));
        }
        if dims.contains(&0) {
            return Err(Error::shape(format!("empty token grid {dims:?}")));
        }
        let window = dims.map(|e| m.min(e));
        let shift = dims.map(|e| if shifted && e > m { m / 2 } else { 0 });
        let padded = [0, 1, 2].map(|a| dims[a].div_ceil(window[a]) * window[a]);
        let pad = PadRecord { dims, window, padded };
        let counts = pad.counts();
        let slots = pad.num_windows() * pad.tokens_per_window();

        let mut gather = Vec::with_capacity(slots);
        let mut local = Vec::with_capacity(slots);
        let mut region = Vec::with_capacity(slots);
        let mut scatter = vec![0usize; dims.iter().product()];
        for wx in 0..counts[0] {
            for wy in 0..counts[1] {
                for wz in 0..counts[2] {
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for c in 0..window[2] {
                                let p = [wx * window[0] + a, wy * window[1] + b, wz * window[2] + c];
                                local.push([a, b, c]);
                                if (0..3).any(|ax| p[ax] >= dims[ax]) {
                                    gather.push(None);
                                    region.push(None);
                                    continue;
                                }
                                let src = [0, 1, 2].map(|ax| (p[ax] + shift[ax]) % dims[ax]);
                                let row = (src[0] * dims[1] + src[1]) * dims[2] + src[2];
                                // A slot whose source wrapped around an axis
                                // was not adjacent to the unwrapped slots.
                                let id = (0..3).fold(0u8, |acc, ax| {
                                    let wrapped = shift[ax] > 0 && p[ax] + shift[ax] >= dims[ax];
                                    acc | ((wrapped as u8) << ax)
                                });
                                scatter[row] = gather.len();
                                gather.push(Some(row));
                                region.push(Some(id));
                            }
                        }
                    }
                }
            }
        }
        Ok(WindowLayout {
            pad,
            shift,
            gather,
            scatter,
            local,
            region,
        })
    }

    pub fn num_windows(&self) -> usize {
        self.pad.num_windows()
    }

    pub fn tokens_per_window(&self) -> usize {
        self.pad.tokens_per_window()
    }

    pub fn window(&self) -> [usize; 3] {
        self.pad.window
    }

    pub fn needs_mask(&self) -> bool {
        self.shift.iter().any(|&s| s > 0) || self.pad.padded != self.pad.dims
    }

    /// Local offsets of the slots of one window (identical for every window).
    pub fn local_offsets(&self) -> &[[usize; 3]] {
        &self.local[..self.tokens_per_window()]
    }

    /// Whether query slot `q` may attend to key slot `k` (global slot ids).
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        match (self.region[q], self.region[k]) {
            (_, None) => false,
            (None, Some(_)) => true,
            (Some(a), Some(b)) => a == b,
        }
    }

    /// Additive mask `[num_windows, 1, T, T]`, or `None` when every pair is allowed.
    pub fn mask(&self) -> Option<Tensor> {
        if !self.needs_mask() {
            return None;
        }
        let (nw, t) = (self.num_windows(), self.tokens_per_window());
        let mut data = vec![0.0; nw * t * t];
        for w in 0..nw {
            for q in 0..t {
                for k in 0..t {
                    if !self.allowed(w * t + q, w * t + k) {
                        data[(w * t + q) * t + k] = MASK_VALUE;
                    }
                }
            }
        }
        Some(Tensor::new(&[nw, 1, t, t], data).expect("mask shape"))
    }

    /// `[N, C]` grid rows to `[num_windows, T, C]` windows.
    pub fn partition(&self, values: &Tensor) -> Result<Tensor> {
        let c = values.shape()[1];
        values
            .gather_rows(&self.gather)?
            .reshape(&[self.num_windows(), self.tokens_per_window(), c])
    }

    /// `[num_windows, T, C]` windows back to `[N, C]` grid rows; pad slots are dropped.
    pub fn reverse(&self, windows: &Tensor) -> Result<Tensor> {
        let c = *windows.shape().last().ok_or_else(|| Error::shape("rank-0 windows"))?;
        let rows: Vec<Option<usize>> = self.scatter.iter().map(|&s| Some(s)).collect();
        windows.reshape(&[self.gather.len(), c])?.gather_rows(&rows)
    }
}

/// Splits an unshifted grid into `[num_windows, T, C]` windows.
pub fn window_partition(grid: &TokenGrid, m: usize) -> Result<(Tensor, PadRecord)> {
    let layout = WindowLayout::new(grid.dims, m, false)?;
    Ok((layout.partition(&grid.values)?, layout.pad))
}

/// Inverse of [`window_partition`].
pub fn window_reverse(windows: &Tensor, pad: &PadRecord) -> Result<TokenGrid> {
    let expected = [pad.num_windows(), pad.tokens_per_window()];
    if windows.rank() != 3 || windows.shape()[..2] != expected {
        return Err(Error::shape(format!(
            "windows {:?} do not match layout {expected:?}",
            windows.shape()
        )));
    }
    let m = *pad.window.iter().max().expect("three axes");
    let layout = WindowLayout::new(pad.dims, m, false)?;
    if layout.pad != *pad {
        return Err(Error::shape("pad record does not describe a valid layout"));
    }
    TokenGrid::new(pad.dims, layout.reverse(windows)?)
}

/// Moves token `(x, y, z)` to `((x - s0) mod h, (y - s1) mod w, (z - s2) mod d)`.
pub fn cyclic_shift(grid: &TokenGrid, offsets: [isize; 3]) -> Result<TokenGrid> {
    let dims = grid.dims;
    let off = [0, 1, 2].map(|a| offsets[a].rem_euclid(dims[a] as isize) as usize);
    let mut rows = Vec::with_capacity(grid.len());
    for x in 0..dims[0] {
        for y in 0..dims[1] {
            for z in 0..dims[2] {
                let s = [(x + off[0]) % dims[0], (y + off[1]) % dims[1], (z + off[2]) % dims[2]];
                rows.push(Some((s[0] * dims[1] + s[1]) * dims[2] + s[2]));
            }
        }
    }
    TokenGrid::new(dims, grid.values.gather_rows(&rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3], c: usize) -> TokenGrid {
        let n: usize = dims.iter().product();
        TokenGrid::new(dims, Tensor::from_fn(&[n, c], |i| (i as f64 * 0.61).sin())).unwrap()
    }

    #[test]
    fn window_counts() {
        let l = WindowLayout::new([48, 48, 48], 4, false).unwrap();
        assert_eq!((l.num_windows(), l.tokens_per_window()), (1728, 64));
        let l = WindowLayout::new([5, 5, 5], 4, false).unwrap();
        assert_eq!(l.num_windows(), 8);
        assert_eq!(l.pad.pad(), [3, 3, 3]);
    }

    #[test]
    fn partition_round_trip() {
        let g = grid([5, 3, 6], 2);
        let (w, pad) = window_partition(&g, 4).unwrap();
        let back = window_reverse(&w, &pad).unwrap();
        assert_eq!(back.values.to_vec(), g.values.to_vec());
    }

    #[test]
    fn shift_moves_origin() {
        let g = grid([4, 4, 4], 1);
        let s = cyclic_shift(&g, [2, 2, 2]).unwrap();
        let v0 = g.values.data()[0];
        assert_eq!(s.values.data()[s.row(2, 2, 2)], v0);
        let back = cyclic_shift(&s, [-2, -2, -2]).unwrap();
        assert_eq!(back.values.to_vec(), g.values.to_vec());
    }

    #[test]
    fn combined_map_equals_shift_then_partition() {
        let g = grid([6, 5, 7], 3);
        let l = WindowLayout::new(g.dims, 4, true).unwrap();
        let shifted = cyclic_shift(&g, [2, 2, 2]).unwrap();
        let direct = WindowLayout::new(g.dims, 4, false)
            .unwrap()
            .partition(&shifted.values)
            .unwrap();
        assert_eq!(l.partition(&g.values).unwrap().to_vec(), direct.to_vec());
    }

    #[test]
    fn small_axes_are_not_shifted() {
        let l = WindowLayout::new([4, 8, 2], 4, true).unwrap();
        assert_eq!(l.shift, [0, 2, 0]);
        assert_eq!(l.window(), [4, 4, 2]);
        let l = WindowLayout::new([4, 4, 4], 4, true).unwrap();
        assert!(!l.needs_mask());
    }

    #[test]
    fn pad_keys_always_masked() {
        let l = WindowLayout::new([5, 5, 5], 4, false).unwrap();
        let m = l.mask().unwrap();
        let t = l.tokens_per_window();
        let data = m.data();
        for (slot, src) in l.gather.iter().enumerate() {
            let (w, k) = (slot / t, slot % t);
            for q in 0..t {
                let v = data[(w * t + q) * t + k];
                assert_eq!(v == MASK_VALUE, src.is_none());
            }
        }
    }
}
