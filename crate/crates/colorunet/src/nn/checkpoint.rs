//! Checkpoint container: named f32 tensors behind a fixed little-endian
//! layout. One file holds model weights; optimizer state uses the same
//! container in a sibling file.
//!
//! Layout: magic `CUNW`, format version, architecture echo (base filters,
//! input channels, class count, per-group channel multipliers, trained
//! flag), tensor count, then each tensor as name length, name bytes, rank,
//! dims, raw values; a CRC32 of everything precedes EOF.

use std::path::Path;

use crate::fmtio::{ChecksumReader, ChecksumWriter};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"CUNW";
pub const VERSION: u32 = 1;
/// Caps tensor sizes while reading, so a corrupt length field cannot ask
/// for an absurd allocation before the checksum gets a chance to fail.
const MAX_ELEMENTS: u64 = 1 << 28;

/// Architecture description stored alongside the tensors, enough to
/// rebuild the module tree the names refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchEcho {
    pub base_filters: u32,
    pub input_channels: u32,
    pub num_classes: u32,
    pub group_multipliers: Vec<u32>,
    /// Whether batchnorm running statistics have been established.
    pub trained: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_tensors(path: &Path, arch: &ArchEcho, tensors: &[TensorEntry]) -> Result<()> {
    let mut w = ChecksumWriter::create(path)?;
    w.bytes(MAGIC)?;
    w.u32(VERSION)?;
    w.u32(arch.base_filters)?;
    w.u32(arch.input_channels)?;
    w.u32(arch.num_classes)?;
    w.u32(arch.trained as u32)?;
    w.u32(arch.group_multipliers.len() as u32)?;
    for &m in &arch.group_multipliers {
        w.u32(m)?;
    }
    w.u32(tensors.len() as u32)?;
    for t in tensors {
        let elems: usize = t.dims.iter().product();
        if elems != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} dims {:?} do not cover {} values",
                t.name,
                t.dims,
                t.data.len()
            )));
        }
        w.u32(t.name.len() as u32)?;
        w.bytes(t.name.as_bytes())?;
        w.u32(t.dims.len() as u32)?;
        for &d in &t.dims {
            w.u64(d as u64)?;
        }
        for &v in &t.data {
            w.f32(v)?;
        }
    }
    w.finish()
}

pub fn read_tensors(path: &Path) -> Result<(ArchEcho, Vec<TensorEntry>)> {
    let mut r = ChecksumReader::open(path)?;
    r.expect_magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let base_filters = r.u32()?;
    let input_channels = r.u32()?;
    let num_classes = r.u32()?;
    let trained = r.u32()? != 0;
    let n_mult = r.u32()? as usize;
    if n_mult > 16 {
        return Err(Error::Format(format!(
            "{}: implausible multiplier count {n_mult}",
            path.display()
        )));
    }
    let mut group_multipliers = Vec::with_capacity(n_mult);
    for _ in 0..n_mult {
        group_multipliers.push(r.u32()?);
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "{}: tensor name of {name_len} bytes",
                path.display()
            )));
        }
        let mut name_bytes = vec![0u8; name_len];
        r.bytes(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| {
            Error::Format(format!("{}: tensor name is not UTF-8", path.display()))
        })?;
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!(
                "{}: tensor {name} has rank {rank}",
                path.display()
            )));
        }
        let mut dims = Vec::with_capacity(rank);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = r.u64()?;
            elems = elems.saturating_mul(d.max(1));
            dims.push(d as usize);
        }
        if elems > MAX_ELEMENTS {
            return Err(Error::Format(format!(
                "{}: tensor {name} declares {elems} elements",
                path.display()
            )));
        }
        let total: usize = dims.iter().product();
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            data.push(r.f32()?);
        }
        tensors.push(TensorEntry { name, dims, data });
    }
    r.finish()?;
    Ok((
        ArchEcho {
            base_filters,
            input_channels,
            num_classes,
            group_multipliers,
            trained,
        },
        tensors,
    ))
}
