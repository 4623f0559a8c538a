//! Binary checkpoint format.
//!
//! Layout: magic `FSSC`, format version (u32 LE), tensor count (u32 LE), then
//! per tensor: name length (u32), UTF-8 name, rank (u32), dims (u32 each),
//! raw little-endian f32 payload. Round-trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::TensorError;

use super::params::ParamStore;

const MAGIC: &[u8; 4] = b"FSSC";
const VERSION: u32 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<(), TensorError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let count = store.iter().count() as u32;
    w.write_all(&count.to_le_bytes())?;
    for (name, p) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(p.shape.len() as u32).to_le_bytes())?;
        for &d in &p.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &p.value {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore, TensorError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Checkpoint(format!("{}: bad magic {:?}", path.display(), magic)));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(TensorError::Checkpoint(format!("unsupported format version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name_buf = vec![0u8; name_len];
        r.read_exact(&mut name_buf)?;
        let name = String::from_utf8(name_buf)
            .map_err(|e| TensorError::Checkpoint(format!("non-UTF8 tensor name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut payload = vec![0u8; n * 4];
        r.read_exact(&mut payload)?;
        let value: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(&name, &shape, value);
    }
    Ok(store)
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
