//! Named-tensor binary container.
//!
//! Layout (all integers little-endian):
//!   magic "LIMB" | u32 version=1 | u32 entry count |
//!   per entry: u16 name length | UTF-8 name | u8 rank | u32 per dim | f32 LE payload

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"LIMB";
pub const VERSION: u32 = 1;

/// In-memory view of a container: name → f32 tensor. Entries are kept
/// sorted by name so serialization is deterministic.
#[derive(Debug, Default, Clone)]
pub struct Container {
    entries: BTreeMap<String, Tensor<f32>>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn insert(&mut self, name: &str, t: Tensor<f32>) {
        self.entries.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Lookup(format!("container has no tensor named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize {
                return Err(Error::Usage(format!("tensor name too long: {name}")));
            }
            if t.shape().len() > u8::MAX as usize {
                return Err(Error::Usage(format!("tensor rank too large: {name}")));
            }
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[t.shape().len() as u8])?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&t.le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Integrity("container truncated before magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Integrity(format!(
                "bad magic bytes {magic:?}, expected {MAGIC:?}"
            )));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Integrity(format!(
                "unsupported container version {version}"
            )));
        }
        let count = read_u32(r)? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = read_u16(r)? as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)
                .map_err(|_| Error::Integrity("container truncated in name".into()))?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
            let mut rank = [0u8; 1];
            r.read_exact(&mut rank)
                .map_err(|_| Error::Integrity("container truncated at rank".into()))?;
            let mut shape = Vec::with_capacity(rank[0] as usize);
            for _ in 0..rank[0] {
                shape.push(read_u32(r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut payload = vec![0u8; numel * 4];
            r.read_exact(&mut payload).map_err(|_| {
                Error::Integrity(format!("truncated f32 payload for tensor {name}"))
            })?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let c = Self::read_from(&mut f)?;
        Ok(c)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Integrity("container truncated at u32".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)
        .map_err(|_| Error::Integrity("container truncated at u16".into()))?;
    Ok(u16::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert("b", Tensor::from_vec(&[3], vec![1.0, -2.0, 3.5]).unwrap());
        c.insert("a.w", Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let back = Container::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.get("b").unwrap().data(), c.get("b").unwrap().data());
        assert_eq!(back.get("a.w").unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn corrupt_magic_is_integrity_error() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf[0] = b'X';
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn truncated_payload_is_integrity_error() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        let err = Container::read_from(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn serialization_is_deterministic() {
        let mut a = Vec::new();
        sample().write_to(&mut a).unwrap();
        let mut b = Vec::new();
        sample().write_to(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
