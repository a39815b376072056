//! Axis-aligned slice export as binary PGM (intensity) or PPM (labels).

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;

/// Background, then one colour per foreground class; cycles past the end.
pub const LABEL_PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 60, 50],
    [60, 190, 80],
    [60, 110, 230],
    [240, 200, 40],
    [190, 80, 200],
    [40, 200, 210],
    [250, 140, 40],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceMode {
    /// Min-max windowed to 0..=255; a constant slice renders as 128.
    Gray,
    /// Values rounded to class ids and coloured from the palette.
    Labels,
}

/// A 2D plane; `pixels` holds one byte (gray) or three (RGB) per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl SliceImage {
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.pixels[i..i + self.channels]
    }
}

/// Values of the plane `axis = index`. Rows run along the first remaining
/// axis and columns along the second.
pub fn slice_plane(values: &[f64], dims: [usize; 3], axis: usize, index: usize) -> Result<(usize, usize, Vec<f64>)> {
    if axis > 2 {
        return Err(Error::config(format!("slice axis must be 0, 1 or 2, got {axis}")));
    }
    if index >= dims[axis] {
        return Err(Error::domain(format!(
            "slice index {index} out of range for axis {axis} of extent {}",
            dims[axis]
        )));
    }
    if values.len() != dims.iter().product::<usize>() {
        return Err(Error::shape(format!("{} values for volume {dims:?}", values.len())));
    }
    let (ra, ca) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (h, w) = (dims[ra], dims[ca]);
    let mut out = Vec::with_capacity(h * w);
    let mut pos = [0usize; 3];
    pos[axis] = index;
    for r in 0..h {
        for c in 0..w {
            pos[ra] = r;
            pos[ca] = c;
            out.push(values[(pos[0] * dims[1] + pos[1]) * dims[2] + pos[2]]);
        }
    }
    Ok((h, w, out))
}

pub fn render_slice(
    values: &[f64],
    dims: [usize; 3],
    axis: usize,
    index: usize,
    mode: SliceMode,
) -> Result<SliceImage> {
    let (height, width, plane) = slice_plane(values, dims, axis, index)?;
    let (channels, pixels) = match mode {
        SliceMode::Gray => {
            let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let px = plane
                .iter()
                .map(|&v| {
                    if hi > lo {
                        ((v - lo) / (hi - lo) * 255.0).round() as u8
                    } else {
                        128
                    }
                })
                .collect();
            (1, px)
        }
        SliceMode::Labels => {
            let mut px = Vec::with_capacity(3 * plane.len());
            for &v in &plane {
                let class = v.round().max(0.0) as usize;
                px.extend_from_slice(&LABEL_PALETTE[class % LABEL_PALETTE.len()]);
            }
            (3, px)
        }
    };
    Ok(SliceImage {
        width,
        height,
        channels,
        pixels,
    })
}

pub fn encode_pgm(img: &SliceImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn encode_ppm(img: &SliceImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Renders one slice and writes it as PGM (gray) or PPM (labels).
pub fn dump_slice(
    values: &[f64],
    dims: [usize; 3],
    axis: usize,
    index: usize,
    path: &Path,
    mode: SliceMode,
) -> Result<SliceImage> {
    let img = render_slice(values, dims, axis, index, mode)?;
    let bytes = match mode {
        SliceMode::Gray => encode_pgm(&img),
        SliceMode::Labels => encode_ppm(&img),
    };
    atomic_write(path, &bytes)?;
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn constant_volume_is_uniform_gray() {
        let img = render_slice(&[3.5; 60], [3, 4, 5], 1, 2, SliceMode::Gray).unwrap();
        assert_eq!((img.height, img.width), (3, 5));
        assert!(img.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn gray_window_spans_full_range() {
        let v: Vec<f64> = (0..27).map(|i| i as f64).collect();
        let img = render_slice(&v, [3, 3, 3], 0, 1, SliceMode::Gray).unwrap();
        assert_eq!(img.pixels[0], 0);
        assert_eq!(img.pixels[8], 255);
    }

    #[test]
    fn three_classes_three_colours() {
        let v: Vec<f64> = (0..27).map(|i| (i % 3) as f64).collect();
        let img = render_slice(&v, [3, 3, 3], 0, 0, SliceMode::Labels).unwrap();
        let colours: HashSet<&[u8]> = img.pixels.chunks(3).collect();
        assert_eq!(colours.len(), 3);
    }

    #[test]
    fn out_of_range_index() {
        assert!(matches!(
            render_slice(&[0.0; 8], [2, 2, 2], 2, 2, SliceMode::Gray),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn pgm_header() {
        let img = render_slice(&[0.0; 8], [2, 2, 2], 0, 0, SliceMode::Gray).unwrap();
        let bytes = encode_pgm(&img);
        assert!(bytes.starts_with(b"P5\n2 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 4);
    }
}
