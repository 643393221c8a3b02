//! Binary parameter files.
//!
//! Layout (all integers little-endian `u32`): magic `CPSP`, version, tensor
//! count, then per tensor the name length and UTF-8 name bytes, the rank, each
//! dimension, and the row-major `f64` payload in little-endian IEEE-754.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CPSP";
pub const WEIGHTS_VERSION: u32 = 1;

/// Outcome of a by-name partial load.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Network parameters overwritten from the file.
    pub loaded: Vec<String>,
    /// Network parameters the file did not provide.
    pub untouched: Vec<String>,
    /// File entries with no matching network parameter.
    pub ignored: Vec<String>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes the tensor block (count + entries) without header.
pub fn write_tensors(w: &mut impl Write, tensors: &[(&str, &Tensor)]) -> std::io::Result<()> {
    put_u32(w, tensors.len() as u32)?;
    for (name, t) in tensors {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.rank() as u32)?;
        for &d in t.shape() {
            put_u32(w, d as u32)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a block written by [`write_tensors`]; `path` is only used in errors.
pub fn read_tensors(r: &mut impl Read, path: &Path) -> Result<Vec<(String, Tensor)>> {
    let corrupt = |what: &str| Error::format(path, what.to_string());
    let count = get_u32(r).map_err(|_| corrupt("truncated tensor count"))?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = get_u32(r).map_err(|_| corrupt("truncated name length"))? as usize;
        if len > 4096 {
            return Err(corrupt(&format!(
                "implausible name length {len} for entry {i}"
            )));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| corrupt("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("name is not UTF-8"))?;
        let rank = get_u32(r).map_err(|_| corrupt("truncated rank"))? as usize;
        if rank > 8 {
            return Err(corrupt(&format!("implausible rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u32(r).map_err(|_| corrupt("truncated dims"))? as usize);
        }
        let n: usize = shape.iter().product();
        if n > 1 << 31 {
            return Err(corrupt(&format!("implausible size for `{name}`")));
        }
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| corrupt(&format!("truncated payload for `{name}`")))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| corrupt(&format!("`{name}`: {e}")))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[(&str, &Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(WEIGHTS_MAGIC)?;
    put_u32(&mut w, WEIGHTS_VERSION)?;
    write_tensors(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(path, "missing header"))?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}")));
    }
    let version = get_u32(&mut r).map_err(|_| Error::format(path, "missing version"))?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let tensors = read_tensors(&mut r, path)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format(path, "trailing bytes after last tensor"));
    }
    Ok(tensors)
}
