//! Flat binary block format: `MRBK`, u16 version, u64 d0, d1, r, u8 variant id,
//! then B, W2, W1 as little-endian f64 in row-major order.

use std::io::{Read, Write};

use super::{MRBlock, Variant};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const BLOCK_MAGIC: &[u8; 4] = b"MRBK";
pub const BLOCK_VERSION: u16 = 1;

/// Refuse headers whose matrices would not fit in memory anyway.
const MAX_ENTRIES: u64 = 1 << 31;

fn parse_err(message: impl Into<String>) -> Error {
    Error::Parse { location: "block header".into(), message: message.into() }
}

pub fn write_block<W: Write>(block: &MRBlock, mut w: W) -> Result<()> {
    w.write_all(BLOCK_MAGIC)?;
    w.write_all(&BLOCK_VERSION.to_le_bytes())?;
    for n in [block.d0(), block.d1(), block.rank()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&[block.variant().id()])?;
    for m in [block.anchor(), block.w2(), block.w1()] {
        for x in m.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Matrix> {
    let mut buf = vec![0u8; rows * cols * 8];
    r.read_exact(&mut buf).map_err(|_| parse_err("file ends before all parameters were read"))?;
    let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Matrix::new(rows, cols, data)
}

pub fn read_block<R: Read>(mut r: R) -> Result<MRBlock> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| parse_err("file too short"))?;
    if &magic != BLOCK_MAGIC {
        return Err(parse_err("not an MR block file (bad magic)"));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != BLOCK_VERSION {
        return Err(parse_err(format!("unsupported block version {version}")));
    }
    let (d0, d1, rank) = (read_u64(&mut r)?, read_u64(&mut r)?, read_u64(&mut r)?);
    if d0.saturating_mul(d1) > MAX_ENTRIES || rank.saturating_mul(d0.max(d1)) > MAX_ENTRIES {
        return Err(parse_err(format!("implausible block shape {d0}x{d1}, r = {rank}")));
    }
    let mut id = [0u8; 1];
    r.read_exact(&mut id)?;
    let variant = Variant::from_id(id[0])?;
    let (d0, d1, rank) = (d0 as usize, d1 as usize, rank as usize);
    let anchor = read_matrix(&mut r, d0, d1)?;
    let w2 = read_matrix(&mut r, d0, rank)?;
    let w1 = read_matrix(&mut r, rank, d1)?;
    MRBlock::from_parts(variant, anchor, w2, w1)
}
