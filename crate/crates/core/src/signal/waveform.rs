use std::io::{Cursor, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Mono sampled audio.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Mean square.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.energy() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn scaled(&self, k: f64) -> Waveform {
        Waveform::new(self.samples.iter().map(|s| s * k).collect(), self.sample_rate)
    }

    pub fn add(&self, other: &Waveform) -> Result<Waveform> {
        self.check_compatible(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect();
        Ok(Waveform::new(samples, self.sample_rate))
    }

    pub fn sub(&self, other: &Waveform) -> Result<Waveform> {
        self.check_compatible(other)?;
        let samples = self.samples.iter().zip(&other.samples).map(|(a, b)| a - b).collect();
        Ok(Waveform::new(samples, self.sample_rate))
    }

    pub fn slice(&self, start: usize, len: usize) -> Waveform {
        Waveform::new(self.samples[start..start + len].to_vec(), self.sample_rate)
    }

    pub fn check_compatible(&self, other: &Waveform) -> Result<()> {
        if self.samples.len() != other.samples.len() || self.sample_rate != other.sample_rate {
            return Err(Error::Signal(format!(
                "incompatible waveforms: {} samples @ {} Hz vs {} samples @ {} Hz",
                self.samples.len(),
                self.sample_rate,
                other.samples.len(),
                other.sample_rate
            )));
        }
        Ok(())
    }

    /// Encodes as a 16-bit PCM mono WAV stream. Samples are clipped to [-1, 1].
    pub fn write_wav<W: Write>(&self, mut w: W) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * self.samples.len()));
        let mut writer = hound::WavWriter::new(&mut buf, spec).map_err(wav_error)?;
        for s in &self.samples {
            writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16).map_err(wav_error)?;
        }
        writer.finalize().map_err(wav_error)?;
        w.write_all(buf.get_ref())?;
        Ok(())
    }

    /// Reads 16-bit PCM mono WAV.
    pub fn read_wav<R: Read>(r: R) -> Result<Waveform> {
        let reader = hound::WavReader::new(r).map_err(wav_error)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::Format(format!(
                "wav: only 16-bit PCM mono is supported ({} ch, {} bit {:?})",
                spec.channels, spec.bits_per_sample, spec.sample_format
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32767.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(wav_error)?;
        Ok(Waveform::new(samples, spec.sample_rate))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_wav(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Waveform> {
        let f = std::fs::File::open(path)?;
        Self::read_wav(std::io::BufReader::new(f))
    }
}

fn wav_error(e: hound::Error) -> Error {
    Error::Format(format!("wav: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_is_exact_on_the_16_bit_grid() {
        let samples: Vec<f64> = (-5..5).map(|i| i as f64 * 1000.0 / 32767.0).collect();
        let w = Waveform::new(samples, 16_000);
        let mut buf = Vec::new();
        w.write_wav(&mut buf).unwrap();
        assert_eq!(buf.len(), 44 + 20);
        let back = Waveform::read_wav(&buf[..]).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        for (a, b) in w.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn truncated_wav_is_rejected() {
        let w = Waveform::zeros(100, 8000);
        let mut buf = Vec::new();
        w.write_wav(&mut buf).unwrap();
        buf.truncate(100);
        assert!(Waveform::read_wav(&buf[..]).is_err());
    }

    #[test]
    fn clipping_on_write() {
        let w = Waveform::new(vec![2.0, -3.0], 8000);
        let mut buf = Vec::new();
        w.write_wav(&mut buf).unwrap();
        let back = Waveform::read_wav(&buf[..]).unwrap();
        assert_eq!(back.samples, vec![1.0, -1.0]);
    }
}
