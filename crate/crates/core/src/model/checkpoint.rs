//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "COOLKWS1"
//! 7 × { u32 rank, rank × u32 dim, product(dims) × f32 }   (conv_w conv_b lin_w dnn_w dnn_b out_w out_b)
//! u32 CRC32 of every byte after the magic
//! ```

use std::fs;
use std::path::Path;

use super::{Arch, ModelParams, N_CLASSES};
use crate::dsp::{N_COEFFS, N_FRAMES};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COOLKWS1";

pub fn checkpoint_bytes(params: &ModelParams<f32>) -> Vec<u8> {
    let mut payload = Vec::with_capacity(4 * params.values.len() + 128);
    let mut offset = 0;
    for shape in params.arch.shapes() {
        payload.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in &shape {
            payload.extend_from_slice(&(d as u32).to_le_bytes());
        }
        let n: usize = shape.iter().product();
        for v in &params.values[offset..offset + n] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        offset += n;
    }
    let crc = crc32fast::hash(&payload);
    let mut out = Vec::with_capacity(payload.len() + 12);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: needed {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    parse_checkpoint(&fs::read(path)?)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned();
        return Err(Error::IncompatibleCheckpoint(format!("bad magic {found:?}")));
    }
    if bytes.len() < 12 {
        return Err(Error::CorruptCheckpoint("truncated before CRC".into()));
    }
    let payload = &bytes[8..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());

    let mut cur = Cursor { bytes: payload, pos: 0 };
    let mut shapes = Vec::with_capacity(7);
    let mut values = Vec::new();
    for _ in 0..7 {
        let rank = cur.u32()? as usize;
        if rank > 4 {
            return Err(Error::CorruptCheckpoint(format!("tensor rank {rank}")));
        }
        let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let data = cur.take(4 * n)?;
        values.extend(data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())));
        shapes.push(dims);
    }
    if cur.pos != payload.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} unexpected trailing bytes",
            payload.len() - cur.pos
        )));
    }
    if crc32fast::hash(payload) != stored {
        return Err(Error::CorruptCheckpoint("CRC mismatch".into()));
    }
    let arch = arch_from_shapes(&shapes)?;
    Ok(ModelParams { arch, values })
}

fn arch_from_shapes(shapes: &[Vec<usize>]) -> Result<Arch> {
    let bad = || Error::IncompatibleCheckpoint(format!("unexpected tensor shapes {shapes:?}"));
    let conv = &shapes[0];
    if conv.len() != 4 || conv[1] != 1 || conv[2] != N_FRAMES || conv[0] == 0 {
        return Err(bad());
    }
    let (n_maps, filter_freq) = (conv[0], conv[3]);
    let lin = &shapes[2];
    if lin.len() != 2 || lin[0] % n_maps != 0 || filter_freq == 0 || filter_freq > N_COEFFS {
        return Err(bad());
    }
    let positions = lin[0] / n_maps;
    let freq_stride = if positions > 1 {
        (N_COEFFS - filter_freq) / (positions - 1)
    } else {
        N_COEFFS
    };
    let dense = shapes[3].get(1).copied().ok_or_else(bad)?;
    let arch = Arch {
        n_maps,
        filter_freq,
        freq_stride,
        bottleneck: lin[1],
        dense,
    };
    if arch.validate().is_err() || arch.shapes().as_slice() != shapes || shapes[6] != [N_CLASSES] {
        return Err(bad());
    }
    Ok(arch)
}
