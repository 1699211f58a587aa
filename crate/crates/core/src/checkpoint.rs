//! `OODT1` tensor container.
//!
//! Layout: the 5-byte magic `OODT1`, a little-endian `u64` manifest length,
//! the JSON manifest, then the raw little-endian tensor buffers. Each manifest
//! entry records name, dtype, shape and a byte offset into the buffer region.
//! Free-form JSON metadata (for example `vit_config`) rides along in the
//! manifest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::{DType, Float, Tensor};

pub const MAGIC: &[u8; 5] = b"OODT1";

#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl Buffer {
    pub fn dtype(&self) -> DType {
        match self {
            Buffer::F32(_) => DType::F32,
            Buffer::F64(_) => DType::F64,
            Buffer::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::F32(v) => v.len(),
            Buffer::F64(v) => v.len(),
            Buffer::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write(&self, out: &mut Vec<u8>) {
        match self {
            Buffer::F32(v) => f32::write_le(v, out),
            Buffer::F64(v) => f64::write_le(v, out),
            Buffer::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    fn read(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::F32 => Buffer::F32(f32::read_le(bytes)),
            DType::F64 => Buffer::F64(f64::read_le(bytes)),
            DType::U32 => Buffer::U32(
                bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub buffer: Buffer,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    metadata: Map<String, Value>,
}

/// Named tensors plus JSON metadata, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
    pub metadata: Map<String, Value>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    fn upsert(&mut self, entry: Entry) {
        match self.entries.iter_mut().find(|e| e.name == entry.name) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn insert<T: Float>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let buffer = match T::DTYPE {
            DType::F32 => Buffer::F32(t.data().iter().map(|v| v.as_f64() as f32).collect()),
            _ => Buffer::F64(t.data().iter().map(|v| v.as_f64()).collect()),
        };
        self.upsert(Entry {
            name: name.into(),
            shape: t.shape().to_vec(),
            buffer,
        });
    }

    pub fn insert_u32(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<u32>) {
        self.upsert(Entry {
            name: name.into(),
            shape,
            buffer: Buffer::U32(data),
        });
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::Data(format!("container has no tensor named {name:?}")))
    }

    /// Reads a floating-point tensor, converting between precisions if needed.
    pub fn get<T: Float>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.entry(name)?;
        let data: Vec<T> = match &e.buffer {
            Buffer::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            Buffer::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
            Buffer::U32(_) => {
                return Err(Error::Data(format!("tensor {name:?} is u32, expected float")))
            }
        };
        Tensor::new(e.shape.clone(), data)
    }

    pub fn get_u32(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let e = self.entry(name)?;
        match &e.buffer {
            Buffer::U32(v) => Ok((e.shape.clone(), v.clone())),
            other => Err(Error::Data(format!(
                "tensor {name:?} is {}, expected u32",
                other.dtype().name()
            ))),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::new();
        let mut tensors = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            if e.shape.iter().any(|&d| d == 0) || e.shape.iter().product::<usize>() != e.buffer.len() {
                return Err(Error::InvalidShape {
                    shape: e.shape.clone(),
                    reason: format!("tensor {:?} holds {} values", e.name, e.buffer.len()),
                });
            }
            tensors.push(ManifestEntry {
                name: e.name.clone(),
                dtype: e.buffer.dtype(),
                shape: e.shape.clone(),
                offset: data.len() as u64,
            });
            e.buffer.write(&mut data);
        }
        let manifest = serde_json::to_vec(&Manifest {
            tensors,
            metadata: self.metadata.clone(),
        })?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + manifest.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&data);
        Ok(out)
    }

    /// Parses a container; `origin` names the source in error messages.
    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let truncated = |detail: String| Error::Truncated {
            path: origin.to_string(),
            detail,
        };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                path: origin.to_string(),
                expected: "OODT1",
            });
        }
        let header_end = MAGIC.len() + 8;
        if bytes.len() < header_end {
            return Err(truncated("missing manifest length".into()));
        }
        let mlen = u64::from_le_bytes(bytes[MAGIC.len()..header_end].try_into().unwrap()) as usize;
        let data_start = header_end
            .checked_add(mlen)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| truncated(format!("manifest of {mlen} bytes does not fit")))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[header_end..data_start])?;
        let data = &bytes[data_start..];

        let mut entries = Vec::with_capacity(manifest.tensors.len());
        for m in manifest.tensors {
            if m.shape.iter().any(|&d| d == 0) {
                return Err(Error::InvalidShape {
                    shape: m.shape,
                    reason: format!("tensor {:?} in {origin}", m.name),
                });
            }
            let nbytes = m.shape.iter().product::<usize>() * m.dtype.size();
            let start = m.offset as usize;
            let end = start
                .checked_add(nbytes)
                .filter(|&e| e <= data.len())
                .ok_or_else(|| {
                    truncated(format!(
                        "tensor {:?} needs bytes {start}..{} of {}",
                        m.name,
                        start + nbytes,
                        data.len()
                    ))
                })?;
            entries.push(Entry {
                buffer: Buffer::read(m.dtype, &data[start..end]),
                name: m.name,
                shape: m.shape,
            });
        }
        Ok(Container {
            entries,
            metadata: manifest.metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert("w", &Tensor::<f32>::new([2, 2], vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0]).unwrap());
        c.insert("mu", &Tensor::<f64>::new([3], vec![0.1, 0.2, 0.3]).unwrap());
        c.insert_u32("labels", vec![3], vec![0, 7, 2]);
        c.metadata.insert("note".into(), Value::from("x"));
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..5], b"OODT1");
        let back = Container::from_bytes(&bytes, "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let w: Tensor<f32> = back.get("w").unwrap();
        assert_eq!(w.data()[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Container::from_bytes(&wrong, "m"), Err(Error::BadMagic { .. })));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(Container::from_bytes(cut, "m"), Err(Error::Truncated { .. })));
        assert!(matches!(Container::from_bytes(&bytes[..9], "m"), Err(Error::Truncated { .. })));
    }

    #[test]
    fn insert_replaces_existing_name() {
        let mut c = sample();
        c.insert("mu", &Tensor::<f64>::new([1], vec![9.0]).unwrap());
        assert_eq!(c.entries().len(), 3);
        assert_eq!(c.get::<f64>("mu").unwrap().data(), &[9.0]);
    }
}
