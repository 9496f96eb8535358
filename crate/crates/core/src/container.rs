//! Two-stream bitstream container: z stream then y stream, each with its CRC-32.

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 4] = b"DSCC";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 33;

/// `(height, width, channels)` of a latent grid.
pub type Dims = [u16; 3];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Unpacked {
    pub y_dims: Dims,
    pub z_dims: Dims,
    pub z_bytes: Vec<u8>,
    pub y_bytes: Vec<u8>,
}

pub fn pack(z_bytes: &[u8], y_bytes: &[u8], y_dims: Dims, z_dims: Dims) -> Result<Vec<u8>> {
    if y_dims.contains(&0) || z_dims.contains(&0) {
        return Err(CoreError::Format(format!("zero dimension in {y_dims:?} / {z_dims:?}")));
    }
    let zl = u32::try_from(z_bytes.len()).map_err(|_| CoreError::Format("z stream too long".into()))?;
    let yl = u32::try_from(y_bytes.len()).map_err(|_| CoreError::Format("y stream too long".into()))?;
    let mut out = Vec::with_capacity(HEADER_BYTES + z_bytes.len() + y_bytes.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    for d in y_dims.iter().chain(&z_dims) {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&zl.to_le_bytes());
    out.extend_from_slice(&yl.to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(z_bytes).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(y_bytes).to_le_bytes());
    out.extend_from_slice(z_bytes);
    out.extend_from_slice(y_bytes);
    Ok(out)
}

pub fn unpack(bytes: &[u8]) -> Result<Unpacked> {
    if bytes.len() < 5 {
        return Err(CoreError::FrameCorrupt(format!("{} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(CoreError::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(CoreError::Format(format!("unsupported version {}", bytes[4])));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(CoreError::FrameCorrupt(format!("{} bytes, shorter than the header", bytes.len())));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let y_dims = [u16_at(5), u16_at(7), u16_at(9)];
    let z_dims = [u16_at(11), u16_at(13), u16_at(15)];
    let (zl, yl) = (u32_at(17) as usize, u32_at(21) as usize);
    let (zc, yc) = (u32_at(25), u32_at(29));
    if y_dims.contains(&0) || z_dims.contains(&0) {
        return Err(CoreError::FrameCorrupt("zero dimension in header".into()));
    }
    let payload = &bytes[HEADER_BYTES..];
    if payload.len() != zl + yl {
        return Err(CoreError::FrameCorrupt(format!("payload {} bytes, header says {}", payload.len(), zl + yl)));
    }
    let (z_bytes, y_bytes) = payload.split_at(zl);
    if crc32fast::hash(z_bytes) != zc {
        return Err(CoreError::FrameCorrupt("z stream checksum mismatch".into()));
    }
    if crc32fast::hash(y_bytes) != yc {
        return Err(CoreError::FrameCorrupt("y stream checksum mismatch".into()));
    }
    Ok(Unpacked { y_dims, z_dims, z_bytes: z_bytes.to_vec(), y_bytes: y_bytes.to_vec() })
}
