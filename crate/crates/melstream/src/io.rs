//! Named-tensor binary container.
//!
//! Layout: magic bytes "MFSN", format version (u32 LE), a length-prefixed
//! UTF-8 config block (u32 LE length), then zero or more arrays until EOF,
//! each as: name (u32 LE length + UTF-8 bytes), rank (u32 LE), dims (u64 LE
//! each), raw little-endian f32 data. Checkpoints and enhanced-mel files
//! share this container; optimizer moments live under the reserved `optim.`
//! name prefix.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::params::Tensor;

pub const MAGIC: &[u8; 4] = b"MFSN";
pub const FORMAT_VERSION: u32 = 1;

/// Reserved prefix for optimizer state arrays inside checkpoints.
pub const OPTIM_PREFIX: &str = "optim.";

#[derive(Debug, Clone)]
pub struct NamedTensorFile {
    pub version: u32,
    pub config_text: String,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

impl NamedTensorFile {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn write_named_tensors(
    path: &Path,
    config_text: &str,
    arrays: &[(String, &Tensor<f32>)],
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let cfg_bytes = config_text.as_bytes();
    w.write_all(&(cfg_bytes.len() as u32).to_le_bytes())?;
    w.write_all(cfg_bytes)?;
    for (name, tensor) in arrays {
        let name_bytes = name.as_bytes();
        w.write_all(&(name_bytes.len() as u32).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&(tensor.dims.len() as u32).to_le_bytes())?;
        for &d in &tensor.dims {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &tensor.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub fn read_named_tensors(path: &Path) -> Result<NamedTensorFile> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic bytes {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let cfg_len = read_u32(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let config_text = String::from_utf8(cfg_bytes)
        .map_err(|e| Error::Checkpoint(format!("config block is not UTF-8: {e}")))?;

    let mut arrays = Vec::new();
    loop {
        // Array name length, or EOF.
        let mut len_buf = [0u8; 4];
        match r.read_exact(&mut len_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| Error::Checkpoint(format!("array name is not UTF-8: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut r)? as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            data.push(f32::from_le_bytes(buf));
        }
        arrays.push((name, Tensor { dims, data }));
    }

    Ok(NamedTensorFile {
        version,
        config_text,
        arrays,
    })
}
