//! Synthetic mixtures for training and held-out evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::signal::synth::rng_for;
use crate::signal::{generate_background, generate_utterance, mix, BackgroundKind, CorpusConfig, Mixture, SyntheticUtterance, Waveform};

/// Held-out seeds live far above anything the training sampler draws.
const HELD_OUT_BASE: u64 = 1 << 40;

/// One clean utterance, its background and their mixture.
#[derive(Clone, Debug)]
pub struct Side {
    pub clean: SyntheticUtterance,
    /// Unscaled background; the mixture adds `alpha` times it.
    pub background: Waveform,
    pub snr_db: f64,
    pub mixture: Mixture,
}

impl Side {
    pub fn new(clean: SyntheticUtterance, background: Waveform, snr_db: f64) -> Result<Self> {
        let mixture = mix(&clean.waveform, &background, snr_db)?;
        Ok(Self { clean, background, snr_db, mixture })
    }

    pub fn speech(&self) -> &Waveform {
        &self.clean.waveform
    }

    pub fn y(&self) -> &Waveform {
        &self.mixture.y
    }

    /// `alpha·n`, the background as it appears in the mixture.
    pub fn scaled_background(&self) -> Waveform {
        self.background.scaled(self.mixture.alpha)
    }
}

#[derive(Clone, Debug)]
pub struct TrainPair {
    pub first: Side,
    pub second: Side,
    /// The second side is a copy of the first.
    pub identical: bool,
}

impl TrainPair {
    pub fn identical(side: Side) -> Self {
        Self { second: side.clone(), first: side, identical: true }
    }

    /// `s1 + alpha2·n2`.
    pub fn swap_target(&self) -> Waveform {
        self.first.speech().add(&self.second.scaled_background()).expect("equal lengths")
    }
}

/// Draws crops of fresh utterances and backgrounds.
#[derive(Clone, Debug)]
pub struct PairSampler {
    pub corpus: CorpusConfig,
    pub crop_frames: usize,
    pub source_s: f64,
    pub snr_range: (f64, f64),
    pub swap_prob: f64,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(corpus: CorpusConfig, crop_frames: usize, seed: u64) -> Self {
        let source_s = (crop_frames * corpus.hop) as f64 / corpus.sample_rate as f64;
        Self {
            corpus,
            crop_frames,
            source_s: source_s.max(1.0),
            snr_range: (-5.0, 40.0),
            swap_prob: 0.5,
            rng: rng_for(seed, 0x5A5A),
        }
    }

    pub fn side(&mut self) -> Result<Side> {
        let seed = self.rng.random_range(0..HELD_OUT_BASE);
        let snr = self.rng.random_range(self.snr_range.0..=self.snr_range.1);
        let kind = BackgroundKind::ALL[self.rng.random_range(0..BackgroundKind::ALL.len())];
        let u = generate_utterance(seed, self.source_s, &self.corpus)?;
        let start = self.rng.random_range(0..=u.frames() - self.crop_frames);
        let clean = u.crop(start, self.crop_frames, self.corpus.hop);
        let bg_seed = self.rng.random_range(0..HELD_OUT_BASE);
        let n = generate_background(bg_seed, self.source_s, kind, self.corpus.sample_rate)?;
        let off = self.rng.random_range(0..=n.len() - clean.waveform.len());
        Side::new(clean.clone(), n.slice(off, clean.waveform.len()), snr)
    }

    /// With probability `swap_prob` two independent sides, otherwise one side twice.
    /// `allow_swap = false` always yields identical pairs.
    pub fn pair(&mut self, allow_swap: bool) -> Result<TrainPair> {
        let swap = allow_swap && self.rng.random_bool(self.swap_prob);
        let first = self.side()?;
        if swap {
            Ok(TrainPair { first, second: self.side()?, identical: false })
        } else {
            Ok(TrainPair::identical(first))
        }
    }
}

/// A fixed held-out mixture plus a second background for token-independence probes.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub side: Side,
    pub alt_background: Waveform,
}

/// `count` held-out items of `frames` codec frames, mixed at `snr_db`.
pub fn held_out(corpus: &CorpusConfig, seed: u64, count: usize, frames: usize, snr_db: f64) -> Result<Vec<EvalItem>> {
    let mut rng = rng_for(seed, 0xE7A1);
    let len = frames * corpus.hop;
    let dur = (len as f64 / corpus.sample_rate as f64).max(0.5);
    (0..count)
        .map(|i| {
            let u = generate_utterance(HELD_OUT_BASE + rng.random_range(0..1 << 30), dur, corpus)?;
            let clean = u.crop(0, frames, corpus.hop);
            let kinds = BackgroundKind::ALL;
            let bg = |rng: &mut ChaCha8Rng, k: usize| {
                generate_background(HELD_OUT_BASE + rng.random_range(0..1 << 30), dur, kinds[k % 3], corpus.sample_rate)
                    .map(|n| n.slice(0, len))
            };
            let n = bg(&mut rng, i)?;
            let alt = bg(&mut rng, i + 1)?;
            Ok(EvalItem { side: Side::new(clean, n, snr_db)?, alt_background: alt })
        })
        .collect()
}

/// Held-out pairs of independent sides for swap probes.
pub fn held_out_pairs(corpus: &CorpusConfig, seed: u64, count: usize, frames: usize) -> Result<Vec<TrainPair>> {
    let items = held_out(corpus, seed ^ 0x9A1B, 2 * count, frames, 0.0)?;
    Ok(items.chunks_exact(2).map(|c| TrainPair { first: c[0].side.clone(), second: c[1].side.clone(), identical: false }).collect())
}
