//! Parameter container: `DISPCKPT`, a little-endian `u64` header length, a
//! JSON header, then every tensor's values as little-endian `f64` in header
//! order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;
use crate::nn::tensor::Tensor;

const MAGIC: &[u8; 8] = b"DISPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorHeader>,
    /// Free-form metadata, e.g. architecture hyperparameters.
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<W: Write>(mut out: W, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        dtype: "f64le".into(),
        tensors: store
            .entries()
            .iter()
            .map(|e| TensorHeader { name: e.name.clone(), shape: e.tensor.shape().to_vec() })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(store.scalar_count() * 8);
    for e in store.entries() {
        e.tensor.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<(ParamStore, CheckpointHeader)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|_| Error::Checkpoint("truncated header length".into()))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION || header.dtype != "f64le" {
        return Err(Error::Checkpoint(format!(
            "unsupported format {} / dtype {}",
            header.format_version, header.dtype
        )));
    }
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        input
            .read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("truncated data for {}", t.name)))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        store.add(t.name.clone(), Tensor::new(t.shape.clone(), data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok((store, header))
}

pub fn save(path: impl AsRef<Path>, store: &ParamStore, meta: serde_json::Value) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, store, meta)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(ParamStore, CheckpointHeader)> {
    read_checkpoint(fs::read(path)?.as_slice())
}

/// Overwrites `store` with a checkpoint of exactly the same layout.
pub fn load_into(store: &mut ParamStore, loaded: &ParamStore) -> Result<()> {
    if !store.same_layout(loaded) {
        let detail = store
            .entries()
            .iter()
            .zip(loaded.entries())
            .find(|(a, b)| a.name != b.name || a.tensor.shape() != b.tensor.shape())
            .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.name, a.tensor.shape(), b.name, b.tensor.shape()))
            .unwrap_or_else(|| format!("expected {} tensors, found {}", store.len(), loaded.len()));
        return Err(Error::Checkpoint(format!("architecture mismatch: {detail}")));
    }
    *store = loaded.clone();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e308]).unwrap());
        s.add("b", Tensor::row(&[std::f64::consts::PI]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, serde_json::json!({"width": 2})).unwrap();
        let (back, header) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(header.meta["width"], 2);
        for (a, b) in s.entries().iter().zip(back.entries()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut s = ParamStore::new();
        s.add("w", Tensor::zeros(1, 3));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s, serde_json::Value::Null).unwrap();
        buf.pop();
        assert!(read_checkpoint(buf.as_slice()).is_err());

        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(1, 4));
        assert!(load_into(&mut other, &s).is_err());
    }
}
