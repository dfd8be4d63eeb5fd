//! Versioned binary tensor checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DGPA" | version: u32 | count: u32
//! count × { name_len: u32 | name: utf-8 | rank: u32 | dims: rank × u32 | payload: f64 × prod(dims) }
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DGPA";
pub const FORMAT_VERSION: u32 = 1;

/// Ordered list of named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), tensor));
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) {
        self.push(name, Tensor::scalar(value));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| bad(format!("missing entry `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.require(name)?;
        if t.len() != 1 {
            return Err(bad(format!("entry `{name}` is not a scalar")));
        }
        Ok(t.item())
    }

    /// Appends every parameter of `store` under `prefix`.
    pub fn push_params(&mut self, prefix: &str, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.push(format!("{prefix}{}", p.name), p.value.clone());
        }
    }

    /// Loads values for every parameter of `store` from `{prefix}{name}`.
    pub fn restore_params(&self, prefix: &str, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = format!("{prefix}{}", store.get(id).name);
            let t = self.require(&name)?.clone();
            store.set_value(id, t).map_err(|e| bad(format!("`{name}`: {e}")))?;
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("file too short for header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let count = read_u32(r)?;
        let mut out = Checkpoint::new();
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
            let name = String::from_utf8(name).map_err(|_| bad("name is not utf-8"))?;
            let rank = read_u32(r)? as usize;
            let dims = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|_| bad(format!("truncated payload for `{name}`")))?;
            let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(dims, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
            out.push(name, t);
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut c = Checkpoint::new();
        c.push("w", Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap());
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DGPA");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        // name length, name, rank, two dims, two f64
        assert_eq!(buf.len(), 12 + 4 + 1 + 4 + 8 + 16);
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read_from(&mut &b"NOPE\x01\0\0\0\0\0\0\0"[..]).is_err());
        assert!(Checkpoint::read_from(&mut &b"DGPA\x01\0\0\0\x01\0\0\0"[..]).is_err());
    }
}
