//! `DCTK` token files: a fixed little-endian header followed by frame-major indices.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use decodec_core::{ModelConfig, TokenBundle};

pub const MAGIC: &[u8; 4] = b"DCTK";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenFile {
    pub sample_rate: u32,
    pub strides: Vec<u16>,
    pub speech_stages: u16,
    pub background_stages: u16,
    pub codebook_size: u16,
    pub tokens: TokenBundle,
}

/// `ceil(log2(codebook_size) / 8)`, at least one byte.
pub fn bytes_per_index(codebook_size: u16) -> usize {
    let bits = if codebook_size <= 1 { 1 } else { (codebook_size as u32 - 1).ilog2() + 1 };
    (bits as usize).div_ceil(8)
}

fn narrow(what: &str, v: usize) -> Result<u16> {
    u16::try_from(v).with_context(|| format!("{what} {v} does not fit the token file's u16 field"))
}

impl TokenFile {
    pub fn new(config: &ModelConfig, tokens: TokenBundle) -> Result<Self> {
        tokens.validate(config.speech_stages, config.background_stages, config.codebook_size)?;
        Ok(Self {
            sample_rate: config.sample_rate,
            strides: config.strides.iter().map(|s| narrow("stride", *s)).collect::<Result<_>>()?,
            speech_stages: narrow("speech stage count", config.speech_stages)?,
            background_stages: narrow("background stage count", config.background_stages)?,
            codebook_size: narrow("codebook size", config.codebook_size)?,
            tokens,
        })
    }

    pub fn frames(&self) -> usize {
        self.tokens.frames()
    }

    pub fn payload_len(&self) -> usize {
        self.frames() * (self.speech_stages + self.background_stages) as usize * bytes_per_index(self.codebook_size)
    }

    pub fn header_len(&self) -> usize {
        4 + 2 + 4 + 4 + 2 + 2 * self.strides.len() + 2 + 2 + 2 + 8
    }

    /// Errors when the file was written for a different model shape.
    pub fn check_model(&self, config: &ModelConfig) -> Result<()> {
        let want: Vec<usize> = self.strides.iter().map(|s| *s as usize).collect();
        ensure!(
            self.sample_rate == config.sample_rate
                && want == config.strides
                && self.speech_stages as usize == config.speech_stages
                && self.background_stages as usize == config.background_stages
                && self.codebook_size as usize == config.codebook_size,
            "token file shape ({} Hz, strides {:?}, {}+{} stages, {} entries) does not match the model",
            self.sample_rate,
            self.strides,
            self.speech_stages,
            self.background_stages,
            self.codebook_size
        );
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.payload_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.strides.len() as u16).to_le_bytes());
        for s in &self.strides {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for v in [self.speech_stages, self.background_stages, self.codebook_size] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.tokens.fingerprint.to_le_bytes());
        let width = bytes_per_index(self.codebook_size);
        let t = &self.tokens;
        for f in 0..self.frames() {
            let row = std::iter::once(&t.zc[f]).chain(&t.zr[f]).chain(&t.zb[f]);
            for idx in row {
                out.extend_from_slice(&idx.to_le_bytes()[..width]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        ensure!(magic == MAGIC, "not a token file: magic {magic:?}");
        let version = r.u16("format version")?;
        ensure!(version == VERSION, "unsupported token file version {version}");
        let sample_rate = r.u32("sample rate")?;
        let frames = r.u32("frame count")? as usize;
        let n = r.u16("stride count")? as usize;
        let strides = (0..n).map(|_| r.u16("strides")).collect::<Result<Vec<_>>>()?;
        let speech_stages = r.u16("speech stage count")?;
        let background_stages = r.u16("background stage count")?;
        let codebook_size = r.u16("codebook size")?;
        ensure!(speech_stages >= 1, "token file declares no speech stages");
        let fingerprint = u64::from_le_bytes(r.take(8, "fingerprint")?.try_into().expect("8 bytes"));
        let width = bytes_per_index(codebook_size);
        let per_frame = (speech_stages + background_stages) as usize;
        let payload = r.take(frames * per_frame * width, "payload")?;
        if r.pos != bytes.len() {
            bail!("{} trailing bytes after the payload", bytes.len() - r.pos);
        }
        let mut idx = payload.chunks_exact(width).map(|c| {
            let mut b = [0u8; 4];
            b[..width].copy_from_slice(c);
            u32::from_le_bytes(b)
        });
        let ks = speech_stages as usize;
        let kn = background_stages as usize;
        let mut tokens = TokenBundle { zc: vec![], zr: vec![], zb: vec![], fingerprint };
        for _ in 0..frames {
            tokens.zc.push(idx.next().expect("sized"));
            tokens.zr.push(idx.by_ref().take(ks - 1).collect());
            tokens.zb.push(idx.by_ref().take(kn).collect());
        }
        tokens.validate(ks, kn, codebook_size as usize)?;
        Ok(Self { sample_rate, strides, speech_stages, background_stages, codebook_size, tokens })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            bail!(
                "truncated token file: {what} needs bytes {}..{end}, file has {} bytes",
                self.pos,
                self.bytes.len()
            );
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(config: &ModelConfig, frames: usize) -> TokenFile {
        let cb = config.codebook_size as u32;
        let tokens = TokenBundle {
            zc: (0..frames as u32).map(|f| (f * 7) % cb).collect(),
            zr: (0..frames as u32).map(|f| (1..config.speech_stages as u32).map(|k| (f * 3 + k) % cb).collect()).collect(),
            zb: (0..frames as u32).map(|f| (0..config.background_stages as u32).map(|k| (f + 11 * k) % cb).collect()).collect(),
            fingerprint: 0x0123_4567_89AB_CDEF,
        };
        TokenFile::new(config, tokens).unwrap()
    }

    #[test]
    fn index_widths() {
        assert_eq!(bytes_per_index(2), 1);
        assert_eq!(bytes_per_index(64), 1);
        assert_eq!(bytes_per_index(256), 1);
        assert_eq!(bytes_per_index(257), 2);
        assert_eq!(bytes_per_index(1024), 2);
        assert_eq!(bytes_per_index(u16::MAX), 2);
    }

    #[test]
    fn one_second_desk_payload_is_400_bytes() {
        let c = ModelConfig::desk();
        let f = sample(&c, c.frames_for(16_000));
        assert_eq!(f.frames(), 50);
        assert_eq!(f.payload_len(), 400);
        assert_eq!(f.to_bytes().len(), f.header_len() + 400);
    }

    #[test]
    fn round_trip() {
        for c in [ModelConfig::desk(), ModelConfig { codebook_size: 1024, ..ModelConfig::fast() }] {
            let f = sample(&c, 13);
            assert_eq!(TokenFile::from_bytes(&f.to_bytes()).unwrap(), f);
        }
    }

    #[test]
    fn truncation_names_the_missing_range() {
        let bytes = sample(&ModelConfig::desk(), 5).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        let e = TokenFile::from_bytes(cut).unwrap_err().to_string();
        let header = bytes.len() - 40;
        assert!(e.contains(&format!("payload needs bytes {header}..{}", bytes.len())), "{e}");
        let e = TokenFile::from_bytes(&bytes[..7]).unwrap_err().to_string();
        assert!(e.contains("format version needs bytes 4..6") || e.contains("sample rate needs bytes 6..10"), "{e}");
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let c = ModelConfig { codebook_size: 100, ..ModelConfig::desk() };
        let mut bytes = sample(&c, 2).to_bytes();
        let last = bytes.len() - 1;
        bytes[last] = 200;
        assert!(TokenFile::from_bytes(&bytes).is_err());
    }
}
