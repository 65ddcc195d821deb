//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "CHIDCKPT"
//! version   u32 LE
//! tag       u32 LE length + UTF-8 bytes
//! count     u32 LE
//! per block:
//!   name    u32 LE length + UTF-8 bytes
//!   rows    u64 LE
//!   cols    u64 LE
//!   data    rows * cols f64 LE
//! ```

use std::io::{Read, Write};

use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CHIDCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_str(out: &mut impl Write, s: &str) -> std::io::Result<()> {
    out.write_all(&(s.len() as u32).to_le_bytes())?;
    out.write_all(s.as_bytes())
}

fn read_u32(input: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(input: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str(input: &mut impl Read) -> Result<String> {
    let len = read_u32(input)? as usize;
    let mut b = vec![0u8; len];
    input.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| Error::ShapeMismatch(format!("checkpoint string: {e}")))
}

/// Serializes every block, tagged with a free-form string (the config hash).
pub fn write_checkpoint<T: Real>(out: &mut impl Write, params: &NetworkParams<T>, tag: &str) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_str(out, tag)?;
    out.write_all(&(params.blocks().len() as u32).to_le_bytes())?;
    for block in params.blocks() {
        write_str(out, &block.name)?;
        out.write_all(&(block.rows as u64).to_le_bytes())?;
        out.write_all(&(block.cols as u64).to_le_bytes())?;
        for &x in &block.data {
            out.write_all(&x.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint into a fresh store; returns it with its tag.
pub fn read_checkpoint<T: Real>(input: &mut impl Read) -> Result<(NetworkParams<T>, String)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::ShapeMismatch("not a checkpoint file".into()));
    }
    let version = read_u32(input)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::ShapeMismatch(format!("checkpoint version {version}")));
    }
    let tag = read_str(input)?;
    let count = read_u32(input)?;
    let mut params = NetworkParams::new();
    for _ in 0..count {
        let name = read_str(input)?;
        let rows = read_u64(input)? as usize;
        let cols = read_u64(input)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            input.read_exact(&mut b)?;
            data.push(T::lit(f64::from_le_bytes(b)));
        }
        params.add(name, rows, cols, data);
    }
    Ok((params, tag))
}

/// Loads a checkpoint into an existing network, checking names and shapes.
pub fn load_into<T: Real>(params: &mut NetworkParams<T>, input: &mut impl Read) -> Result<String> {
    let (loaded, tag) = read_checkpoint::<T>(input)?;
    params.copy_from(&loaded)?;
    Ok(tag)
}
