//! The binary tensor container used for datasets and checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           4 bytes  "SBLU"
//! version         u32      currently 1
//! meta_len        u64      byte length of the metadata block
//! metadata        UTF-8 text, one "key=value" line per entry
//! tensor records until EOF:
//!   name_len      u64
//!   name          UTF-8 bytes
//!   rank          u32
//!   dims          rank x u64
//!   scalar_width  u32      32 or 64
//!   payload       prod(dims) x (width/8) bytes, IEEE-754 LE
//! ```
//!
//! Complex tensors are stored with a trailing dimension of 2 holding the
//! real and imaginary parts. Everything is written in insertion order, so
//! identical contents produce identical bytes.

use std::path::Path;

use num_complex::Complex64;

use crate::cmat::CMat;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SBLU";
pub const VERSION: u32 = 1;

/// Storage precision of one tensor record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarWidth {
    F32,
    F64,
}

impl ScalarWidth {
    fn code(self) -> u32 {
        match self {
            ScalarWidth::F32 => 32,
            ScalarWidth::F64 => 64,
        }
    }
}

/// One named tensor record. Data is held as `f64` in memory regardless of
/// the storage width.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub width: ScalarWidth,
    pub data: Vec<f64>,
}

/// An in-memory container: ordered metadata plus ordered tensor records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        assert!(
            !key.contains('=') && !key.contains('\n') && !value.contains('\n'),
            "metadata keys/values must be single-line; keys must not contain '='"
        );
        if let Some(entry) = self.meta.iter_mut().find(|(k, _)| k == key) {
            entry.1 = value;
        } else {
            self.meta.push((key.to_string(), value));
        }
    }

    pub fn meta_get(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, name: &str, dims: &[usize], data: Vec<f64>) {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            dims: dims.to_vec(),
            width: ScalarWidth::F64,
            data,
        });
    }

    /// Stores a complex matrix as `(rows, cols, 2)`.
    pub fn push_cmat(&mut self, name: &str, m: &CMat) {
        let mut data = Vec::with_capacity(m.rows() * m.cols() * 2);
        for z in m.data() {
            data.push(z.re);
            data.push(z.im);
        }
        self.push(name, &[m.rows(), m.cols(), 2], data);
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_cmat(&self, name: &str) -> Result<CMat> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))?;
        if t.dims.len() != 3 || t.dims[2] != 2 {
            return Err(Error::Container(format!(
                "{name:?} is not a complex matrix record: dims {:?}",
                t.dims
            )));
        }
        let (rows, cols) = (t.dims[0], t.dims[1]);
        let data: Vec<Complex64> = t
            .data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(CMat::from_vec(rows, cols, data))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.encode(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let meta_text: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        out.extend_from_slice(&(meta_text.len() as u64).to_le_bytes());
        out.extend_from_slice(meta_text.as_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u64).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.width.code().to_le_bytes());
            match t.width {
                ScalarWidth::F64 => {
                    for &v in &t.data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                ScalarWidth::F32 => {
                    for &v in &t.data {
                        out.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let meta_len = r.u64()? as usize;
        let meta_text = std::str::from_utf8(r.take(meta_len)?)
            .map_err(|_| Error::Container("metadata is not UTF-8".into()))?;
        let meta = meta_text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|line| {
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Container(format!("bad metadata line {line:?}")))?;
                Ok((k.to_string(), v.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tensors = Vec::new();
        while !r.done() {
            let name_len = r.u64()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            let width = match r.u32()? {
                32 => ScalarWidth::F32,
                64 => ScalarWidth::F64,
                w => return Err(Error::Container(format!("bad scalar width {w}"))),
            };
            let numel: usize = dims.iter().product();
            let data = match width {
                ScalarWidth::F64 => {
                    let raw = r.take(numel * 8)?;
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect()
                }
                ScalarWidth::F32 => {
                    let raw = r.take(numel * 4)?;
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                        .collect()
                }
            };
            tensors.push(NamedTensor {
                name,
                dims,
                width,
                data,
            });
        }
        Ok(Self { meta, tensors })
    }

    pub fn push_tensor(&mut self, name: &str, t: &crate::autodiff::Tensor) {
        self.push(name, t.shape(), t.data().to_vec());
    }

    pub fn get_tensor(&self, name: &str) -> Result<crate::autodiff::Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Container(format!("missing tensor {name:?}")))?;
        Ok(crate::autodiff::Tensor::from_vec(&t.dims, t.data.clone()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Container::new();
        c.set_meta("kind", "test");
        c.set_meta("seed", 42u64);
        let m = CMat::from_fn(3, 5, |_, _| complex_gaussian(&mut rng));
        c.push_cmat("weights", &m);
        c.push("bias", &[4], vec![0.25, -1.5, f64::MIN_POSITIVE, 1e300]);

        let mut bytes = Vec::new();
        c.encode(&mut bytes).unwrap();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.get_cmat("weights").unwrap(), m);
        assert_eq!(back.meta_get("seed"), Some("42"));

        // Identical contents encode to identical bytes.
        let mut bytes2 = Vec::new();
        back.encode(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn f32_records_round_trip_at_reduced_precision() {
        let mut c = Container::new();
        c.tensors.push(NamedTensor {
            name: "small".into(),
            dims: vec![2],
            width: ScalarWidth::F32,
            data: vec![0.5, 0.25],
        });
        let mut bytes = Vec::new();
        c.encode(&mut bytes).unwrap();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back.get("small").unwrap().data, vec![0.5, 0.25]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Container::decode(b"XXXX").is_err());
        let mut c = Container::new();
        c.push("t", &[2], vec![1.0, 2.0]);
        let mut bytes = Vec::new();
        c.encode(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(Container::decode(&bytes).is_err());
    }
}
