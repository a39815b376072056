//! VVOL: a minimal little-endian volume container.
//!
//! ```text
//! offset  size  field
//!      0     5  magic "VVOL1"
//!      5     1  dtype (0 = f32, 1 = f64, 2 = u16 labels)
//!      6     4  channels (u32)
//!     10    24  dims H, W, D (u64 each)
//!     34    24  spacing (f64 each)
//!     58     .  payload, [C, H, W, D] row-major
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::labels::Labels;
use crate::tensor::Tensor;

pub const VVOL_MAGIC: &[u8; 5] = b"VVOL1";
pub const VVOL_HEADER_LEN: usize = 58;

const DTYPE_AT: usize = 5;
const CHANNELS_AT: usize = 6;
const DIMS_AT: usize = 10;
const SPACING_AT: usize = 34;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
    U16,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::U16 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            2 => Some(DType::U16),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolHeader {
    pub dims: [usize; 3],
    pub channels: usize,
    pub dtype: DType,
    pub spacing: [f64; 3],
}

impl VolHeader {
    pub fn voxels(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.voxels() * self.channels * self.dtype.size()
    }
}

/// Header plus values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub header: VolHeader,
    pub data: Vec<f64>,
}

impl Volume {
    pub fn new(header: VolHeader, data: Vec<f64>) -> Result<Self> {
        if data.len() != header.voxels() * header.channels {
            return Err(Error::shape(format!(
                "volume {:?} x {} channels needs {} values, got {}",
                header.dims,
                header.channels,
                header.voxels() * header.channels,
                data.len()
            )));
        }
        Ok(Volume { header, data })
    }

    /// From a `[1, C, H, W, D]` or `[C, H, W, D]` tensor.
    pub fn from_tensor(t: &Tensor, spacing: [f64; 3], dtype: DType) -> Result<Self> {
        let s = t.shape();
        let (c, dims) = match s.len() {
            5 if s[0] == 1 => (s[1], [s[2], s[3], s[4]]),
            4 => (s[0], [s[1], s[2], s[3]]),
            _ => return Err(Error::shape(format!("cannot store tensor {s:?} as a volume"))),
        };
        Volume::new(
            VolHeader {
                dims,
                channels: c,
                dtype,
                spacing,
            },
            t.to_vec(),
        )
    }

    pub fn from_labels(labels: &Labels, spacing: [f64; 3]) -> Self {
        Volume {
            header: VolHeader {
                dims: labels.dims,
                channels: 1,
                dtype: DType::U16,
                spacing,
            },
            data: labels.values.iter().map(|&v| v as f64).collect(),
        }
    }

    /// `[1, C, H, W, D]`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let [h, w, d] = self.header.dims;
        Tensor::new(&[1, self.header.channels, h, w, d], self.data.clone())
    }

    /// Requires a single-channel u16 volume.
    pub fn to_labels(&self) -> Result<Labels> {
        if self.header.dtype != DType::U16 || self.header.channels != 1 {
            return Err(Error::Parse {
                path: Default::default(),
                offset: DTYPE_AT as u64,
                message: format!(
                    "dtype mismatch: expected single-channel u16 labels, found {:?} x {}",
                    self.header.dtype, self.header.channels
                ),
            });
        }
        Labels::new(self.header.dims, self.data.iter().map(|&v| v as u16).collect())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let mut out = Vec::with_capacity(VVOL_HEADER_LEN + h.payload_len());
        out.extend_from_slice(VVOL_MAGIC);
        out.push(h.dtype.tag());
        let channels = u32::try_from(h.channels).map_err(|_| Error::shape("too many channels"))?;
        out.extend_from_slice(&channels.to_le_bytes());
        for d in h.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for s in h.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() || (h.dtype == DType::F32 && !(v as f32).is_finite()) {
                return Err(Error::domain(format!(
                    "value {v} at index {i} is not finite in {:?}",
                    h.dtype
                )));
            }
            match h.dtype {
                DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                DType::U16 => {
                    if v.fract() != 0.0 || !(0.0..=u16::MAX as f64).contains(&v) {
                        return Err(Error::domain(format!("value {v} at index {i} is not a u16 label")));
                    }
                    out.extend_from_slice(&(v as u16).to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    /// Parses a VVOL byte buffer; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |offset: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < VVOL_HEADER_LEN {
            return Err(err(
                bytes.len(),
                format!(
                    "truncated header: expected {VVOL_HEADER_LEN} bytes, found {}",
                    bytes.len()
                ),
            ));
        }
        if &bytes[..5] != VVOL_MAGIC {
            return Err(err(0, format!("bad magic {:?}", String::from_utf8_lossy(&bytes[..5]))));
        }
        let dtype = DType::from_tag(bytes[DTYPE_AT])
            .ok_or_else(|| err(DTYPE_AT, format!("unknown dtype tag {}", bytes[DTYPE_AT])))?;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let channels = u32::from_le_bytes(bytes[CHANNELS_AT..CHANNELS_AT + 4].try_into().expect("4 bytes")) as usize;
        if channels == 0 {
            return Err(err(CHANNELS_AT, "zero channels".into()));
        }
        let mut dims = [0usize; 3];
        for (a, d) in dims.iter_mut().enumerate() {
            let o = DIMS_AT + 8 * a;
            *d = usize::try_from(u64_at(o)).map_err(|_| err(o, "dimension overflows usize".into()))?;
            if *d == 0 {
                return Err(err(o, format!("dimension {a} is zero")));
            }
        }
        let mut spacing = [0.0; 3];
        for (a, s) in spacing.iter_mut().enumerate() {
            let o = SPACING_AT + 8 * a;
            *s = f64::from_bits(u64_at(o));
            if !(s.is_finite() && *s > 0.0) {
                return Err(err(o, format!("spacing {s} must be positive and finite")));
            }
        }
        let header = VolHeader {
            dims,
            channels,
            dtype,
            spacing,
        };
        let expected = dims
            .iter()
            .try_fold(channels * dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| err(DIMS_AT, "payload size overflows".into()))?;
        let payload = &bytes[VVOL_HEADER_LEN..];
        if payload.len() != expected {
            return Err(err(
                VVOL_HEADER_LEN + payload.len().min(expected),
                format!("payload is {} bytes, expected {expected}", payload.len()),
            ));
        }
        let size = dtype.size();
        let mut data = Vec::with_capacity(expected / size);
        for (i, chunk) in payload.chunks_exact(size).enumerate() {
            let v = match dtype {
                DType::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
                DType::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
                DType::U16 => u16::from_le_bytes(chunk.try_into().expect("2 bytes")) as f64,
            };
            if !v.is_finite() {
                return Err(err(VVOL_HEADER_LEN + i * size, format!("non-finite value {v}")));
            }
            data.push(v);
        }
        Ok(Volume { header, data })
    }
}

pub fn read_vvol(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path)?;
    Volume::decode(&bytes, path)
}

pub fn write_vvol(path: &Path, volume: &Volume) -> Result<()> {
    atomic_write(path, &volume.encode()?)
}
