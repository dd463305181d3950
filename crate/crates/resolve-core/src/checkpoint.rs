//! Flat named-array checkpoint container.
//!
//! Layout (all integers little-endian):
//! `"RSLV"` magic, `u32` format version, `u32` config-entry count, then
//! per entry a length-prefixed key and value string; `u32` array count,
//! then per array a length-prefixed name, a kind byte (0 trainable,
//! 1 frozen, 2 buffer), `u32` rank, `u64` dims, and the payload as
//! `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 4] = b"RSLV";
pub const VERSION: u32 = 1;

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(format!("non-utf8 string: {e}")))
}

fn write_tensor<S: Scalar>(w: &mut impl Write, t: &Tensor<S>) -> Result<()> {
    w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u64::<LittleEndian>(d as u64)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v.to_f64_lossy())?;
    }
    Ok(())
}

fn read_tensor<S: Scalar>(r: &mut impl Read) -> Result<Tensor<S>> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u64::<LittleEndian>()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(S::from_f64_lossy(r.read_f64::<LittleEndian>()?));
    }
    Tensor::new(shape, data)
}

/// Write config entries and every parameter and buffer of `store`.
pub fn save_checkpoint<S: Scalar>(
    path: &Path,
    config: &[(String, String)],
    store: &ParameterStore<S>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(config.len() as u32)?;
    for (k, v) in config {
        write_str(&mut w, k)?;
        write_str(&mut w, v)?;
    }
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let buffers: Vec<String> = store.buffer_names().map(str::to_string).collect();
    w.write_u32::<LittleEndian>((names.len() + buffers.len()) as u32)?;
    for name in &names {
        write_str(&mut w, name)?;
        w.write_u8(if store.is_trainable(name)? { 0 } else { 1 })?;
        write_tensor(&mut w, store.value(name)?)?;
    }
    for name in &buffers {
        write_str(&mut w, name)?;
        w.write_u8(2)?;
        write_tensor(&mut w, store.buffer(name)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back into a fresh store plus its config entries.
pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Vec<(String, String)>, ParameterStore<S>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let n_config = r.read_u32::<LittleEndian>()? as usize;
    let mut config = Vec::with_capacity(n_config);
    for _ in 0..n_config {
        let k = read_str(&mut r)?;
        let v = read_str(&mut r)?;
        config.push((k, v));
    }
    let n_arrays = r.read_u32::<LittleEndian>()? as usize;
    let mut store = ParameterStore::new();
    for _ in 0..n_arrays {
        let name = read_str(&mut r)?;
        let kind = r.read_u8()?;
        let t = read_tensor(&mut r)?;
        match kind {
            0 => store.insert(&name, t),
            1 => store.insert_frozen(&name, t),
            2 => store.insert_buffer(&name, t),
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown array kind {other} for '{name}'"
                )))
            }
        }
    }
    Ok((config, store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use tempfile::tempdir;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let mut store = ParameterStore::<f64>::new();
        store.insert("a.w", Tensor::randn(&[3, 4], 1.0, &mut rng));
        store.insert_frozen("a.fixed", Tensor::randn(&[2], 1.0, &mut rng));
        store.insert_buffer("bn.mean", Tensor::randn(&[4], 1.0, &mut rng));
        let config = vec![
            ("task".to_string(), "pairwise".to_string()),
            ("lr".to_string(), "0.0001".to_string()),
        ];
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &config, &store).unwrap();
        let (cfg2, store2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(cfg2, config);
        assert_eq!(store2.value("a.w").unwrap().data(), store.value("a.w").unwrap().data());
        assert!(!store2.is_trainable("a.fixed").unwrap());
        assert!(store2.is_trainable("a.w").unwrap());
        assert_eq!(
            store2.buffer("bn.mean").unwrap().data(),
            store.buffer("bn.mean").unwrap().data()
        );
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint(_))));
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint::<f64>(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_array_payload_is_an_io_error() {
        let mut store = ParameterStore::<f64>::new();
        store.insert("w", Tensor::full(&[4], 1.5));
        let dir = tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &[], &store).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }
}
