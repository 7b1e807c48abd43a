//! Binary checkpoint: `"DCCK"`, version, config text, named parameters, fingerprint.
//! All integers and reals little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{Codec, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"DCCK";
const VERSION: u16 = 1;

impl Codec {
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let text = self.config.to_text();
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        buf.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, p) in self.store.iter() {
            buf.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            buf.extend_from_slice(p.name.as_bytes());
            let shape = p.tensor.shape();
            buf.push(shape.len() as u8);
            for d in shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in p.tensor.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&self.fingerprint().to_le_bytes());
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = cur.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let text_len = cur.u32()? as usize;
        let text = std::str::from_utf8(cur.take(text_len)?)
            .map_err(|_| Error::Format("checkpoint config is not UTF-8".into()))?
            .to_owned();
        let config = ModelConfig::from_text(&text)?;
        let count = cur.u32()? as usize;
        let mut loaded = ParamStore::new();
        for _ in 0..count {
            let name_len = cur.u16()? as usize;
            let name = String::from_utf8_lossy(cur.take(name_len)?).into_owned();
            let ndim = cur.take(1)?[0] as usize;
            let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = cur.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            loaded.register(name, Tensor::new(&shape, data)?);
        }
        let stored = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        if cur.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - cur.pos)));
        }
        let mut codec = Codec::new(config)?;
        codec.store.load_from(&loaded)?;
        let found = codec.fingerprint();
        if found != stored {
            return Err(Error::Fingerprint { expected: stored, found });
        }
        Ok(codec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "checkpoint truncated: needs bytes {}..{}, file has {}",
                self.pos,
                self.pos + n,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
