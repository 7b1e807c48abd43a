//! Procedural speech-like and background signals.
//!
//! "Speech" is a harmonic series on a speaker-specific pitch contour. Its spectral
//! envelope is switched between eight content symbols, each a Gaussian bump at its own
//! centre frequency. Backgrounds are non-harmonic: band-limited noise, swept tones with an
//! inharmonic partial, and bursts of bell-like inharmonic tones.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};

pub const SYMBOLS: usize = 8;

/// Amplitude of the broadband bed under a chirp, relative to unit-variance noise.
const CHIRP_BED: f64 = 0.5;

pub(crate) fn rng_for(seed: u64, tag: u64) -> ChaCha8Rng {
    // splitmix64 finalizer keeps nearby seeds and tags apart.
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

const TAG_SPEAKER: u64 = 1;
const TAG_CONTENT: u64 = 2;
const TAG_BACKGROUND: u64 = 3;
const TAG_PICK: u64 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub sample_rate: u32,
    /// Samples per codec frame.
    pub hop: usize,
    /// Frames each content symbol is held for.
    pub symbol_frames: usize,
    pub speakers: u32,
    /// RMS the speech is normalized to.
    pub rms: f64,
}

impl CorpusConfig {
    /// Symbols last about 80 ms.
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        let symbol_frames = ((0.08 * sample_rate as f64 / hop as f64).round() as usize).max(1);
        Self { sample_rate, hop, symbol_frames, speakers: 16, rms: 0.1 }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticUtterance {
    pub waveform: Waveform,
    pub content_track: Vec<u8>,
    pub speaker_id: u32,
    pub f0_track: Vec<f64>,
}

impl SyntheticUtterance {
    pub fn frames(&self) -> usize {
        self.content_track.len()
    }

    /// Frames `start .. start + frames`, with the matching samples.
    pub fn crop(&self, start: usize, frames: usize, hop: usize) -> SyntheticUtterance {
        SyntheticUtterance {
            waveform: self.waveform.slice(start * hop, frames * hop),
            content_track: self.content_track[start..start + frames].to_vec(),
            speaker_id: self.speaker_id,
            f0_track: self.f0_track[start..start + frames].to_vec(),
        }
    }
}

/// Fixed voice characteristics derived from the speaker id alone.
#[derive(Clone, Debug, PartialEq)]
pub struct Speaker {
    pub id: u32,
    pub f0_base: f64,
    /// Exponent of the `(1 + f/500)^-tilt` spectral slope.
    pub tilt: f64,
    /// Centre of the speaker's resonance as a fraction of Nyquist.
    pub resonance: f64,
    pub vibrato_hz: f64,
}

impl Speaker {
    pub fn new(id: u32) -> Self {
        let mut rng = rng_for(id as u64, TAG_SPEAKER);
        Self {
            id,
            f0_base: rng.random_range(90.0..300.0),
            tilt: rng.random_range(0.0..0.6),
            resonance: rng.random_range(0.2..0.8),
            vibrato_hz: rng.random_range(3.0..6.0),
        }
    }

    pub fn filter(&self, f: f64, sample_rate: u32) -> f64 {
        let nyq = sample_rate as f64 / 2.0;
        let width = 0.1 * nyq;
        let peak = 0.5 * (-(f - self.resonance * nyq).powi(2) / (2.0 * width * width)).exp();
        (1.0 + f / 500.0).powf(-self.tilt) * (1.0 + peak)
    }

    /// Amplitude of a harmonic at frequency `f` while `symbol` is active.
    pub fn harmonic_amplitude(&self, symbol: usize, f: f64, sample_rate: u32) -> f64 {
        if f >= harmonic_limit(sample_rate) {
            return 0.0;
        }
        symbol_envelope(symbol, f, sample_rate) * self.filter(f, sample_rate)
    }
}

fn harmonic_limit(sample_rate: u32) -> f64 {
    0.95 * sample_rate as f64 / 2.0
}

/// Centre of symbol `k`'s envelope bump.
pub fn symbol_centre_hz(k: usize, sample_rate: u32) -> f64 {
    let nyq = sample_rate as f64 / 2.0;
    nyq * (0.12 + 0.76 * k as f64 / (SYMBOLS - 1) as f64)
}

pub fn symbol_envelope(k: usize, f: f64, sample_rate: u32) -> f64 {
    let width = 0.075 * sample_rate as f64 / 2.0;
    let c = symbol_centre_hz(k, sample_rate);
    (-(f - c).powi(2) / (2.0 * width * width)).exp()
}

fn sample_count(duration_s: f64, sample_rate: u32) -> Result<usize> {
    if !(duration_s >= 0.5) || !duration_s.is_finite() {
        return Err(Error::Signal(format!("synthetic signals need a duration of at least 0.5 s, got {duration_s}")));
    }
    Ok((duration_s * sample_rate as f64).round() as usize)
}

/// An utterance by a speaker chosen from `seed`.
pub fn generate_utterance(seed: u64, duration_s: f64, cfg: &CorpusConfig) -> Result<SyntheticUtterance> {
    let speaker = rng_for(seed, TAG_PICK).random_range(0..cfg.speakers.max(1));
    generate_utterance_for(speaker, seed, duration_s, cfg)
}

/// An utterance by `speaker_id` whose content and prosody come from `content_seed`.
pub fn generate_utterance_for(
    speaker_id: u32,
    content_seed: u64,
    duration_s: f64,
    cfg: &CorpusConfig,
) -> Result<SyntheticUtterance> {
    let len = sample_count(duration_s, cfg.sample_rate)?;
    let sr = cfg.sample_rate;
    let hop = cfg.hop.max(1);
    let frames = len.div_ceil(hop);
    let speaker = Speaker::new(speaker_id);
    let mut rng = rng_for(content_seed, TAG_CONTENT);

    let mut content_track = Vec::with_capacity(frames);
    let mut glide = Vec::with_capacity(frames);
    while content_track.len() < frames {
        let sym = rng.random_range(0..SYMBOLS) as u8;
        let pitch = rng.random_range(0.94..1.06);
        for _ in 0..cfg.symbol_frames.max(1) {
            if content_track.len() == frames {
                break;
            }
            content_track.push(sym);
            glide.push(pitch);
        }
    }
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let f0_track: Vec<f64> = (0..frames)
        .map(|f| {
            let t = (f as f64 + 0.5) * hop as f64 / sr as f64;
            speaker.f0_base * glide[f] * (1.0 + 0.03 * (2.0 * PI * speaker.vibrato_hz * t + vib_phase).sin())
        })
        .collect();

    let max_h = (harmonic_limit(sr) / (0.9 * speaker.f0_base)).floor() as usize;
    let amps: Vec<Vec<f64>> = (0..frames)
        .map(|f| {
            (1..=max_h)
                .map(|h| speaker.harmonic_amplitude(content_track[f] as usize, h as f64 * f0_track[f], sr))
                .collect()
        })
        .collect();
    let h_phase: Vec<f64> = (0..max_h).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    // Frame-level values sit at frame centres and are interpolated per sample.
    let mut samples = vec![0.0; len];
    let mut phase = 0.0;
    for (i, out) in samples.iter_mut().enumerate() {
        let pos = (i as f64 + 0.5) / hop as f64 - 0.5;
        let fa = pos.floor().clamp(0.0, (frames - 1) as f64) as usize;
        let fb = (fa + 1).min(frames - 1);
        let w = (pos - fa as f64).clamp(0.0, 1.0);
        let f0 = (1.0 - w) * f0_track[fa] + w * f0_track[fb];
        phase += 2.0 * PI * f0 / sr as f64;
        let mut acc = 0.0;
        for h in 0..max_h {
            let a = (1.0 - w) * amps[fa][h] + w * amps[fb][h];
            if a > 1e-9 {
                acc += a * ((h + 1) as f64 * phase + h_phase[h]).sin();
            }
        }
        *out = acc;
    }
    normalize_rms(&mut samples, cfg.rms);
    Ok(SyntheticUtterance { waveform: Waveform::new(samples, sr), content_track, speaker_id, f0_track })
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    if p > 0.0 {
        let k = rms / p.sqrt();
        x.iter_mut().for_each(|v| *v *= k);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BackgroundKind {
    FilteredNoise,
    Chirp,
    ToneBurst,
}

impl BackgroundKind {
    pub const ALL: [BackgroundKind; 3] = [BackgroundKind::FilteredNoise, BackgroundKind::Chirp, BackgroundKind::ToneBurst];
}

/// Unit-power background of the given kind.
pub fn generate_background(seed: u64, duration_s: f64, kind: BackgroundKind, sample_rate: u32) -> Result<Waveform> {
    let len = sample_count(duration_s, sample_rate)?;
    let mut rng = rng_for(seed, TAG_BACKGROUND);
    let nyq = sample_rate as f64 / 2.0;
    let mut x = match kind {
        BackgroundKind::FilteredNoise => {
            let lo = rng.random_range(0.02..0.3) * nyq;
            let hi = (lo + rng.random_range(0.35..0.65) * nyq).min(0.98 * nyq);
            let slope = rng.random_range(-1.0..1.0);
            band_noise(&mut rng, len, sample_rate, lo, hi, slope)
        }
        BackgroundKind::Chirp => {
            let f_lo = rng.random_range(0.05..0.3) * nyq;
            let f_hi = rng.random_range(0.45..0.85) * nyq;
            let period = rng.random_range(0.3..1.0);
            let offset = rng.random_range(0.0..1.0);
            let ratio = rng.random_range(2.2..2.6);
            let bed = band_noise(&mut rng, len, sample_rate, 0.05 * nyq, 0.9 * nyq, 0.0);
            let mut phase = (0.0, 0.0);
            (0..len)
                .map(|i| {
                    let t = i as f64 / sample_rate as f64 / period + offset;
                    let tri = 1.0 - (2.0 * (t - t.floor()) - 1.0).abs();
                    let f = f_lo * (f_hi / f_lo).powf(tri);
                    phase.0 += 2.0 * PI * f / sample_rate as f64;
                    let f2 = f * ratio;
                    let a2 = if f2 < 0.95 * nyq { 0.5 } else { 0.0 };
                    phase.1 += 2.0 * PI * f2 / sample_rate as f64;
                    phase.0.sin() + a2 * phase.1.sin() + CHIRP_BED * bed[i]
                })
                .collect()
        }
        BackgroundKind::ToneBurst => {
            let mut x = band_noise(&mut rng, len, sample_rate, 0.05 * nyq, 0.9 * nyq, 0.0);
            x.iter_mut().for_each(|v| *v *= 0.1);
            let ratios = [1.0, 2.76, 5.40];
            let mut t0 = 0usize;
            loop {
                t0 += (rng.random_range(0.05..0.25) * sample_rate as f64) as usize;
                if t0 >= len {
                    break;
                }
                let dur = ((rng.random_range(0.04..0.15) * sample_rate as f64) as usize).max(2);
                let f = rng.random_range(0.1..0.35) * nyq;
                for (p, r) in ratios.iter().enumerate() {
                    let fp = f * r;
                    if fp >= 0.95 * nyq {
                        continue;
                    }
                    let amp = 1.0 / (1.0 + p as f64);
                    let ph = rng.random_range(0.0..2.0 * PI);
                    for j in 0..dur.min(len - t0) {
                        let env = 0.5 - 0.5 * (2.0 * PI * j as f64 / dur as f64).cos();
                        x[t0 + j] += amp * env * (2.0 * PI * fp * j as f64 / sample_rate as f64 + ph).sin();
                    }
                }
            }
            x
        }
    };
    normalize_rms(&mut x, 1.0);
    Ok(Waveform::new(x, sample_rate))
}

/// Unit-power Gaussian noise restricted to `[lo, hi]` Hz, tilted by `slope` decades of
/// amplitude across the band.
fn band_noise(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32, lo: f64, hi: f64, slope: f64) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let bin_hz = sample_rate as f64 / len as f64;
    for (k, b) in buf.iter_mut().enumerate() {
        let kk = k.min(len - k);
        let f = kk as f64 * bin_hz;
        if f < lo || f > hi {
            *b = Complex::new(0.0, 0.0);
        } else {
            let u = (f - lo) / (hi - lo).max(1e-9);
            *b *= 10f64.powf(slope * (u - 0.5) / 2.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    normalize_rms(&mut x, 1.0);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CorpusConfig {
        CorpusConfig::new(4000, 8)
    }

    #[test]
    fn same_speaker_same_f0_base() {
        let a = generate_utterance_for(3, 10, 0.5, &cfg()).unwrap();
        let b = generate_utterance_for(3, 11, 0.5, &cfg()).unwrap();
        assert_eq!(Speaker::new(a.speaker_id).f0_base, Speaker::new(b.speaker_id).f0_base);
        assert_ne!(a.content_track, b.content_track);
    }

    #[test]
    fn utterance_is_deterministic_and_frame_aligned() {
        let a = generate_utterance(42, 0.5, &cfg()).unwrap();
        let b = generate_utterance(42, 0.5, &cfg()).unwrap();
        assert_eq!(a.waveform, b.waveform);
        assert_eq!(a.content_track.len(), 2000usize.div_ceil(8));
        assert!(a.waveform.peak() <= 1.0);
        assert!((a.waveform.power().sqrt() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn backgrounds_have_unit_power_and_are_deterministic() {
        for kind in BackgroundKind::ALL {
            let a = generate_background(5, 0.5, kind, 4000).unwrap();
            assert!((a.power() - 1.0).abs() < 0.01, "{kind:?}");
            assert_eq!(a, generate_background(5, 0.5, kind, 4000).unwrap());
        }
    }

    #[test]
    fn short_durations_are_rejected() {
        assert!(generate_utterance(1, 0.2, &cfg()).is_err());
        assert!(generate_background(1, 0.4, BackgroundKind::Chirp, 4000).is_err());
    }
}
