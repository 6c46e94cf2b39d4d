//! FTEN1: a minimal little-endian container of named f64 tensors.
//!
//! ```text
//! "FTEN" 0x01            magic + version
//! u32                    entry count
//! per entry:
//!   u16, bytes           name length, ASCII name
//!   u8                   dtype: 0 = f64 real, 1 = f64 complex (re, im interleaved)
//!   u8, rank × u32       rank and extents
//!   payload              element values, no padding
//! ```

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tensor::{ComplexTensor, RealTensor, MAX_RANK};

const MAGIC: &[u8; 4] = b"FTEN";
const VERSION: u8 = 1;
const DTYPE_REAL: u8 = 0;
const DTYPE_COMPLEX: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    Real(RealTensor),
    Complex(ComplexTensor),
}

impl AnyTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::Real(t) => t.shape(),
            AnyTensor::Complex(t) => t.shape(),
        }
    }

    fn bit_eq(&self, other: &AnyTensor) -> bool {
        match (self, other) {
            (AnyTensor::Real(a), AnyTensor::Real(b)) => a.bit_eq(b),
            (AnyTensor::Complex(a), AnyTensor::Complex(b)) => a.bit_eq(b),
            _ => false,
        }
    }
}

impl From<RealTensor> for AnyTensor {
    fn from(t: RealTensor) -> Self {
        AnyTensor::Real(t)
    }
}

impl From<ComplexTensor> for AnyTensor {
    fn from(t: ComplexTensor) -> Self {
        AnyTensor::Complex(t)
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || !name.is_ascii() || name.contains('\0') || name.len() > u16::MAX as usize {
        return Err(Error::InvalidName(name.to_string()));
    }
    Ok(())
}

/// Named tensors in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    entries: Vec<(String, AnyTensor)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: impl Into<AnyTensor>) -> Result<()> {
        let name = name.into();
        validate_name(&name)?;
        if self.contains(&name) {
            return Err(Error::DuplicateName(name));
        }
        self.entries.push((name, tensor.into()));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&AnyTensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn real(&self, name: &str) -> Result<&RealTensor> {
        match self.get(name) {
            Some(AnyTensor::Real(t)) => Ok(t),
            Some(AnyTensor::Complex(_)) => Err(Error::Malformed(format!("{name:?} is complex, expected real"))),
            None => Err(Error::MissingTensor(name.to_string())),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, AnyTensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same names, order and bit patterns.
    pub fn bit_eq(&self, other: &TensorFile) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(match t {
                AnyTensor::Real(_) => DTYPE_REAL,
                AnyTensor::Complex(_) => DTYPE_COMPLEX,
            });
            out.push(t.shape().len() as u8);
            for &e in t.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            match t {
                AnyTensor::Real(r) => r.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
                AnyTensor::Complex(c) => c.data().iter().for_each(|z| {
                    out.extend_from_slice(&z.re.to_le_bytes());
                    out.extend_from_slice(&z.im.to_le_bytes());
                }),
            }
        }
        out
    }

    /// Parses a container. Never panics: malformed input yields an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let count = r.u32("entry count")?;
        let mut file = TensorFile::new();
        for _ in 0..count {
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::InvalidName(String::from_utf8_lossy(&bytes[r.pos - len..r.pos]).into_owned()))?
                .to_string();
            validate_name(&name)?;
            if file.contains(&name) {
                return Err(Error::DuplicateName(name));
            }
            let dtype = r.u8("dtype")?;
            let rank = r.u8("rank")? as usize;
            if rank == 0 || rank > MAX_RANK {
                return Err(Error::Malformed(format!("{name:?} has rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("extent")? as usize);
            }
            let elems = shape
                .iter()
                .try_fold(1usize, |a, &e| a.checked_mul(e))
                .ok_or_else(|| Error::Malformed(format!("{name:?} element count overflows")))?;
            let width = match dtype {
                DTYPE_REAL => 8,
                DTYPE_COMPLEX => 16,
                other => return Err(Error::UnknownDtype(other)),
            };
            let payload = elems
                .checked_mul(width)
                .ok_or_else(|| Error::Malformed(format!("{name:?} payload size overflows")))?;
            let raw = r.take(payload, "payload")?;
            let floats = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
            let tensor = if dtype == DTYPE_REAL {
                AnyTensor::Real(RealTensor::new(shape, floats.collect())?)
            } else {
                let vals: Vec<f64> = floats.collect();
                let data = vals.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
                AnyTensor::Complex(ComplexTensor::new(shape, data)?)
            };
            file.entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(file)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
