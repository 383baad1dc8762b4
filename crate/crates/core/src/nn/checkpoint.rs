//! Versioned little-endian parameter checkpoints.
//!
//! ```text
//! magic      8 bytes   "CHRLCKPT"
//! version    u32       1
//! sections   u32
//! per section:
//!   name_len u32, name (UTF-8)
//!   spec     u64       network spec hash (0 for scalars)
//!   count    u64
//!   values   count × f64
//! ```

use std::path::Path;

use super::Mlp;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CHRLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub spec_hash: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn push_mlp(&mut self, name: &str, net: &Mlp) {
        self.sections.push(Section {
            name: name.to_string(),
            spec_hash: net.spec().hash(),
            values: net.flat(),
        });
    }

    pub fn push_scalar(&mut self, name: &str, value: f64) {
        self.sections.push(Section { name: name.to_string(), spec_hash: 0, values: vec![value] });
    }

    pub fn push_values(&mut self, name: &str, values: Vec<f64>) {
        self.sections.push(Section { name: name.to_string(), spec_hash: 0, values });
    }

    pub fn section(&self, name: &str) -> Result<&Section> {
        self.sections
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section `{name}`")))
    }

    /// Loads section `name` into `net`, checking the spec hash.
    pub fn load_mlp(&self, name: &str, net: &mut Mlp) -> Result<()> {
        let s = self.section(name)?;
        if s.spec_hash != net.spec().hash() {
            return Err(Error::Checkpoint(format!(
                "section `{name}` was saved for a different network than {}",
                net.spec().describe()
            )));
        }
        net.set_flat(&s.values)
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        match self.section(name)?.values.as_slice() {
            [v] => Ok(*v),
            other => Err(Error::Checkpoint(format!("`{name}` holds {} values", other.len()))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u32).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&s.spec_hash.to_le_bytes());
            out.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
            for v in &s.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.u32()?;
        let mut sections = Vec::new();
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?
                .to_string();
            let spec_hash = r.u64()?;
            let count = r.u64()? as usize;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| Error::Checkpoint("overflow".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push(Section { name, spec_hash, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self { sections })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
