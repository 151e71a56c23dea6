//! FGWC named-tensor archive.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "FGWC" | version u32 | tensor count u32
//! per tensor: name_len u16 | UTF-8 name | dtype u8 (0 = f32) | rank u8
//!             | dims u32 x rank | row-major f32 payload
//! ```
//!
//! Architecture hyperparameters travel as rank-0 tensors under `meta.*`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::{FilmError, Result};

pub const MAGIC: [u8; 4] = *b"FGWC";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(FilmError::InvalidArgument(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn scalar(v: f32) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![v],
        }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![0.0; n],
        }
    }
}

/// Ordered map of tensors; iteration (and therefore serialization) is by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| FilmError::MissingTensor(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| FilmError::MissingTensor(name.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn expect(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        if t.dims != dims {
            return Err(FilmError::ShapeMismatch {
                name: name.to_string(),
                found: t.dims.clone(),
                expected: dims.to_vec(),
            });
        }
        Ok(t)
    }

    pub fn set_meta(&mut self, key: &str, value: usize) {
        self.insert(format!("meta.{key}"), Tensor::scalar(value as f32));
    }

    pub fn meta(&self, key: &str) -> Result<usize> {
        let name = format!("meta.{key}");
        let t = self.expect(&name, &[])?;
        let v = t.data[0];
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(FilmError::HeaderMismatch(format!("{name} = {v} is not a count")));
        }
        Ok(v as usize)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let name_len = u16::try_from(name.len())
                .map_err(|_| FilmError::InvalidArgument(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.dims.len())
                .map_err(|_| FilmError::InvalidArgument(format!("tensor rank too large: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.push(rank);
            for &d in &t.dims {
                let d = u32::try_from(d)
                    .map_err(|_| FilmError::InvalidArgument(format!("dimension too large in {name}")))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(FilmError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(FilmError::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let count = r.u32("tensor count")?;
        let mut tensors = BTreeMap::new();
        for i in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| FilmError::InvalidArgument(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let dtype = r.u8("dtype")?;
            if dtype != DTYPE_F32 {
                return Err(FilmError::UnsupportedDtype { name, tag: dtype });
            }
            let rank = r.u8("rank")? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32("dims")? as usize);
            }
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| FilmError::InvalidArgument(format!("tensor {name:?} is too large")))?;
            let payload = r.take(
                n.checked_mul(4).ok_or_else(|| FilmError::InvalidArgument(format!("tensor {name:?} is too large")))?,
                &format!("payload of {name:?}"),
            )?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.insert(name, Tensor { dims, data });
        }
        if r.pos != bytes.len() {
            return Err(FilmError::InvalidArgument(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| FilmError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| FilmError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(FilmError::Truncated {
                offset: self.pos,
                what: what.to_string(),
            }),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightContainer {
        let mut c = WeightContainer::new();
        c.insert("a.kernel", Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap());
        c.insert("b", Tensor::scalar(7.0));
        c.set_meta("bins", 33);
        c
    }

    #[test]
    fn layout_header() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"FGWC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        // first tensor by name order is "a.kernel"
        assert_eq!(u16::from_le_bytes(bytes[12..14].try_into().unwrap()), 8);
        assert_eq!(&bytes[14..22], b"a.kernel");
        assert_eq!(bytes[22], 0);
        assert_eq!(bytes[23], 2);
    }

    #[test]
    fn round_trip_bitwise() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = WeightContainer::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let t = back.get("a.kernel").unwrap();
        assert_eq!(t.data[5].to_bits(), (-0.0f32).to_bits());
        assert_eq!(back.meta("bins").unwrap(), 33);
    }

    #[test]
    fn truncation_names_offset() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match WeightContainer::from_bytes(cut) {
            Err(FilmError::Truncated { offset, .. }) => assert!(offset > 12 && offset < cut.len()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            WeightContainer::from_bytes(&bytes[..6]),
            Err(FilmError::Truncated { offset: 4, .. })
        ));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(WeightContainer::from_bytes(&bytes), Err(FilmError::BadMagic(_))));
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(matches!(
            WeightContainer::from_bytes(&bytes),
            Err(FilmError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn missing_and_misshapen() {
        let c = sample();
        assert!(matches!(c.get("nope"), Err(FilmError::MissingTensor(n)) if n == "nope"));
        assert!(matches!(c.expect("a.kernel", &[3, 2]), Err(FilmError::ShapeMismatch { .. })));
    }
}
