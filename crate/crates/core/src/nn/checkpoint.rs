//! Versioned binary checkpoint of named tensors.
//!
//! Layout (little-endian): magic `HACKPT`, `u32` version, `u32` metadata
//! count followed by length-prefixed UTF-8 key/value pairs, `u32` parameter
//! count, then per parameter: length-prefixed name, `u32` rank, `u64` extents,
//! and the row-major `f64` values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{NnError, ParamStore, Tensor};

const MAGIC: &[u8; 6] = b"HACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub type Metadata = BTreeMap<String, String>;

fn ckpt_err(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore, meta: &Metadata) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in meta {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for p in store.iter() {
        write_str(&mut w, &p.name)?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in p.value.data() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, NnError> {
    let n = read_u32(r)? as usize;
    if n > 1 << 20 {
        return Err(ckpt_err("string length out of range"));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| ckpt_err("invalid UTF-8"))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, Metadata), NnError> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ckpt_err("not a checkpoint file"));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ckpt_err(format!("unsupported checkpoint version {version}")));
    }
    let mut meta = Metadata::new();
    for _ in 0..read_u32(&mut r)? {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        meta.insert(k, v);
    }
    let mut store = ParamStore::new();
    for _ in 0..read_u32(&mut r)? {
        let name = read_str(&mut r)?;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(ckpt_err(format!("parameter `{name}` has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(ckpt_err(format!("parameter `{name}` is too large")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        store.add(name, Tensor::new(&shape, data)?);
    }
    Ok((store, meta))
}

pub fn save_checkpoint(path: &Path, store: &ParamStore, meta: &Metadata) -> Result<(), NnError> {
    write_checkpoint(BufWriter::new(File::create(path)?), store, meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, Metadata), NnError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
