//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CFTCKPT\0"
//! version    u32      1
//! dtype      u32 len + ASCII ("f32" | "f64")
//! metadata   u32 len + UTF-8 (network config as TOML)
//! count      u32
//! count × {
//!     name   u32 len + UTF-8
//!     ndim   u32
//!     dims   ndim × u64
//!     data   product(dims) × dtype, little-endian
//! }
//! ```
//!
//! Loading a file whose dtype differs from the requested element type
//! converts values; same-type round trips are bit-exact.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"CFTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    metadata: String,
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(metadata: impl Into<String>) -> Self {
        Checkpoint {
            metadata: metadata.into(),
            entries: Vec::new(),
        }
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.entries.push((name.into(), tensor));
    }

    pub fn entries(&self) -> &[(String, Tensor<T>)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::config(format!("checkpoint has no tensor named {name}")))
    }

    pub fn into_tensors(self) -> Vec<Tensor<T>> {
        self.entries.into_iter().map(|(_, t)| t).collect()
    }

    pub(crate) fn replace_tensors(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        if tensors.len() != self.entries.len() {
            return Err(Error::config("snapshot does not match network layout"));
        }
        for ((_, slot), t) in self.entries.iter_mut().zip(tensors) {
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, T::DTYPE);
        put_str(&mut out, &self.metadata);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::data("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {version}")));
        }
        let dtype = r.string()?;
        let width = match dtype.as_str() {
            "f32" => 4,
            "f64" => 8,
            other => return Err(Error::data(format!("unknown checkpoint dtype {other}"))),
        };
        let metadata = r.string()?;
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * width)?;
            let data = raw
                .chunks_exact(width)
                .map(|c| match width {
                    4 if T::BYTES == 4 => T::read_le(c),
                    8 if T::BYTES == 8 => T::read_le(c),
                    4 => T::from_f64_lossy(f32::read_le(c) as f64),
                    _ => T::from_f64_lossy(f64::read_le(c)),
                })
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::data("trailing bytes after checkpoint entries"));
        }
        Ok(Checkpoint { metadata, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::data("checkpoint truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::data("checkpoint string is not UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            values in prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 0..64),
            meta in "[a-z =0-9\n]{0,40}",
        ) {
            let mut ckpt = Checkpoint::<f32>::new(meta);
            let n = values.len();
            ckpt.push("a.weight", Tensor::new(vec![n], values).unwrap());
            ckpt.push("empty", Tensor::zeros(&[3, 0]));
            let back = Checkpoint::<f32>::from_bytes(&ckpt.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
            prop_assert_eq!(back, ckpt);
        }
    }

    #[test]
    fn header_layout() {
        let ckpt = Checkpoint::<f64>::new("x");
        let b = ckpt.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(&b[16..19], b"f64");
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::<f32>::from_bytes(b"nope").is_err());
        let mut ckpt = Checkpoint::<f32>::new("");
        ckpt.push("w", Tensor::full(&[4], 1.0));
        let b = ckpt.to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&b[..b.len() - 1]).is_err());
    }

    #[test]
    fn f32_file_loads_into_f64() {
        let mut ckpt = Checkpoint::<f32>::new("");
        ckpt.push("w", Tensor::new(vec![2], vec![0.1, -3.5]).unwrap());
        let wide = Checkpoint::<f64>::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(wide.get("w").unwrap().data(), &[0.1f32 as f64, -3.5]);
    }
}
