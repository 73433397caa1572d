//! Versioned binary checkpoints: magic "HRCF", format version, then named
//! tensors with explicit shapes and little-endian f64 data. Round-trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"HRCF";
pub const VERSION: u32 = 1;

/// Write named tensors in store order followed by any extra entries
/// (configuration scalars travel as tensors too).
pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    extra: &[(String, Tensor)],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = store.len() + extra.len();
    w.write_all(&(count as u32).to_le_bytes())?;
    for p in store.iter() {
        write_tensor(&mut w, &p.name, &p.value)?;
    }
    for (name, tensor) in extra {
        write_tensor(&mut w, name, tensor)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    let bytes = name.as_bytes();
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::CheckpointTruncated(e.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

/// Read every tensor in file order.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::CheckpointTruncated(format!("header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "magic {:?} does not match {:?}",
            magic, MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::CheckpointFormat(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::CheckpointTruncated(format!("tensor name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::CheckpointFormat(format!("tensor name not utf-8: {e}")))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|e| Error::CheckpointTruncated(format!("tensor `{name}`: {e}")))?;
            data.push(f64::from_le_bytes(buf));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Restore parameter values from a checkpoint into an existing store,
/// verifying shapes; returns the entries that matched no parameter (the
/// configuration extras).
pub fn load_into_store(path: &Path, store: &mut ParamStore) -> Result<Vec<(String, Tensor)>> {
    let entries = read_checkpoint(path)?;
    let mut extras = Vec::new();
    let mut restored = 0usize;
    for (name, tensor) in entries {
        match store.get_mut(&name) {
            Some(param) => {
                if param.value.shape() != tensor.shape() {
                    return Err(Error::CheckpointShape {
                        name,
                        found: tensor.shape().to_vec(),
                        expected: param.value.shape().to_vec(),
                    });
                }
                param.value = tensor;
                restored += 1;
            }
            None => extras.push((name, tensor)),
        }
    }
    if restored != store.len() {
        let missing: Vec<&str> = store
            .iter()
            .map(|p| p.name.as_str())
            .filter(|n| !extras.iter().any(|(e, _)| e == n))
            .collect();
        return Err(Error::CheckpointFormat(format!(
            "checkpoint restored {restored} of {} parameters (missing entries among {missing:?})",
            store.len()
        )));
    }
    Ok(extras)
}
