//! Versioned binary container for network checkpoints, dictionaries and
//! attack batches.
//!
//! ```text
//! header   "SBSR" | version: u32 | kind: [u8; 8] (ASCII, NUL padded) | entries: u32
//! entry    name_len: u16 | name: UTF-8 | tag: u8 | payload
//!   tag 0  f64 matrix   rows: u64 | cols: u64 | rows·cols f64, column-major
//!   tag 1  u64 vector   len: u64  | len u64
//!   tag 2  text         len: u64  | UTF-8 bytes
//! ```
//!
//! All integers and floats are little-endian; floats are written by bit
//! pattern so a write/read cycle is bit-exact.

use std::path::Path;

use nalgebra::DMatrix;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SBSR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Matrix(DMatrix<f64>),
    Indices(Vec<u64>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        assert!(kind.len() <= 8 && kind.is_ascii(), "container kind must be ≤ 8 ASCII bytes");
        Self {
            kind: kind.to_string(),
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::invalid(format!("container has no entry `{name}`")))
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        match self.get(name)? {
            Entry::Matrix(m) => Ok(m),
            _ => Err(Error::invalid(format!("entry `{name}` is not a matrix"))),
        }
    }

    pub fn indices(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Entry::Indices(v) => Ok(v),
            _ => Err(Error::invalid(format!("entry `{name}` is not an index list"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Entry::Text(t) => Ok(t),
            _ => Err(Error::invalid(format!("entry `{name}` is not text"))),
        }
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::invalid(format!(
                "expected a `{kind}` container, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut kind = [0u8; 8];
        kind[..self.kind.len()].copy_from_slice(self.kind.as_bytes());
        out.extend_from_slice(&kind);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match entry {
                Entry::Matrix(m) => {
                    out.push(0);
                    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
                    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
                    for v in m.iter() {
                        out.extend_from_slice(&v.to_bits().to_le_bytes());
                    }
                }
                Entry::Indices(v) => {
                    out.push(1);
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    for x in v {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
                Entry::Text(t) => {
                    out.push(2);
                    out.extend_from_slice(&(t.len() as u64).to_le_bytes());
                    out.extend_from_slice(t.as_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format { offset: 0, message: "bad container magic".into() });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported container version {version}"),
            });
        }
        let kind_raw = r.take(8)?;
        let end = kind_raw.iter().position(|&b| b == 0).unwrap_or(8);
        let kind = std::str::from_utf8(&kind_raw[..end])
            .map_err(|_| Error::Format { offset: 8, message: "kind is not ASCII".into() })?
            .to_string();
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format { offset: at, message: "entry name is not UTF-8".into() })?
                .to_string();
            let tag_at = r.pos;
            let entry = match r.u8()? {
                0 => {
                    let rows = r.len()?;
                    let cols = r.len()?;
                    let total = rows
                        .checked_mul(cols)
                        .ok_or_else(|| Error::Format { offset: r.pos, message: "matrix too large".into() })?;
                    r.ensure(total.saturating_mul(8))?;
                    let mut data = Vec::with_capacity(total);
                    for _ in 0..total {
                        data.push(f64::from_bits(r.u64()?));
                    }
                    Entry::Matrix(DMatrix::from_vec(rows, cols, data))
                }
                1 => {
                    let len = r.len()?;
                    r.ensure(len.saturating_mul(8))?;
                    Entry::Indices((0..len).map(|_| r.u64()).collect::<Result<_>>()?)
                }
                2 => {
                    let len = r.len()?;
                    let at = r.pos;
                    let text = std::str::from_utf8(r.take(len)?)
                        .map_err(|_| Error::Format { offset: at, message: "text is not UTF-8".into() })?;
                    Entry::Text(text.to_string())
                }
                tag => {
                    return Err(Error::Format {
                        offset: tag_at,
                        message: format!("unknown entry tag {tag}"),
                    })
                }
            };
            entries.push((name, entry));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos,
                message: "trailing bytes after last entry".into(),
            });
        }
        Ok(Self { kind, entries })
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
    fn ensure(&self, n: usize) -> Result<()> {
        if self.bytes.len().saturating_sub(self.pos) < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                message: format!("unexpected end of data: need {n} bytes at offset {}", self.pos),
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.ensure(n)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64()?)
            .map_err(|_| Error::Format { offset: at, message: "length exceeds address space".into() })
    }
}
