//! The end-to-end model: encoder, projection pair, two quantizer stacks, decoder.

mod checkpoint;
mod config;

pub use config::ModelConfig;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hash::Hasher;

use crate::error::{Error, Result};
use crate::numerics::layers::{Conv1d, ConvTranspose1d, Recurrent};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rvq::{lookup, merge_tokens, split_tokens, Assignment, RvqEncoding, RvqStack, SgHead};
use crate::rvq::ContentTeacher;
use crate::signal::Waveform;
use crate::sop::{self, ProjectionPair};

#[derive(Clone, Debug)]
struct EncoderBlock {
    conv: Conv1d,
    down: Conv1d,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    stem: Conv1d,
    blocks: Vec<EncoderBlock>,
    rnn: [Recurrent; 2],
    out: Conv1d,
}

impl Encoder {
    fn new(store: &mut ParamStore, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = c.kernel;
        let stem = Conv1d::new(store, "enc.stem", 1, c.stem_channels, k, 1, c.causal, rng);
        let mut ch = c.stem_channels;
        let mut blocks = vec![];
        for (i, &s) in c.strides.iter().enumerate() {
            let conv = Conv1d::new(store, &format!("enc.block{i}.conv"), ch, ch, k, 1, c.causal, rng);
            let down = Conv1d::new(store, &format!("enc.block{i}.down"), ch, 2 * ch, 2 * s, s, c.causal, rng);
            blocks.push(EncoderBlock { conv, down });
            ch *= 2;
        }
        let rnn = [
            Recurrent::new(store, "enc.rnn0", ch, !c.causal, rng),
            Recurrent::new(store, "enc.rnn1", ch, !c.causal, rng),
        ];
        let out = Conv1d::new(store, "enc.out", ch, c.embed_dim, k, 1, c.causal, rng);
        Self { stem, blocks, rnn, out }
    }

    /// `samples × 1` → `frames × D`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let mut h = self.stem.forward(g, x)?;
        for b in &self.blocks {
            let r = b.conv.forward(g, h)?;
            let r = g.tanh(r);
            h = g.add(h, r);
            let d = b.down.forward(g, h)?;
            h = g.tanh(d);
        }
        let r = self.rnn[0].forward(g, h);
        let r = self.rnn[1].forward(g, r);
        h = g.add(h, r);
        self.out.forward(g, h)
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    up: ConvTranspose1d,
    conv: Conv1d,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    input: Conv1d,
    /// Second input convolution when the decoder reads `[Zs | Zn]`.
    input_n: Option<Conv1d>,
    blocks: Vec<DecoderBlock>,
    out: Conv1d,
}

impl Decoder {
    fn new(store: &mut ParamStore, c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let k = c.kernel;
        let input = Conv1d::new(store, "dec.in", c.embed_dim, c.decoder_dim, k, 1, c.causal, rng);
        let input_n = c
            .concat_decoder
            .then(|| Conv1d::new(store, "dec.in_n", c.embed_dim, c.decoder_dim, k, 1, c.causal, rng));
        let mut ch = c.decoder_dim;
        let mut blocks = vec![];
        for (i, &s) in c.strides.iter().rev().enumerate() {
            let up = ConvTranspose1d::new(store, &format!("dec.block{i}.up"), ch, ch / 2, 2 * s, s, c.causal, rng);
            ch /= 2;
            let conv = Conv1d::new(store, &format!("dec.block{i}.conv"), ch, ch, k, 1, c.causal, rng);
            blocks.push(DecoderBlock { up, conv });
        }
        let out = Conv1d::new(store, "dec.out", ch, 1, k, 1, c.causal, rng);
        Self { input, input_n, blocks, out }
    }

    /// `frames × D` twice → `frames·hop × 1`.
    pub fn forward(&self, g: &mut Graph, zs: Var, zn: Var) -> Result<Var> {
        if g.value(zs).shape() != g.value(zn).shape() {
            return Err(Error::Shape(format!(
                "decode: Zs {:?} vs Zn {:?}",
                g.value(zs).shape(),
                g.value(zn).shape()
            )));
        }
        let mut h = match &self.input_n {
            None => {
                let z = g.add(zs, zn);
                self.input.forward(g, z)?
            }
            Some(conv_n) => {
                let a = self.input.forward(g, zs)?;
                let b = conv_n.forward(g, zn)?;
                g.add(a, b)
            }
        };
        for b in &self.blocks {
            let u = b.up.forward(g, h)?;
            h = g.tanh(u);
            let r = b.conv.forward(g, h)?;
            let r = g.tanh(r);
            h = g.add(h, r);
        }
        self.out.forward(g, h)
    }
}

/// Per-frame code indices of one utterance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenBundle {
    /// Speech stage 1.
    pub zc: Vec<u32>,
    /// Speech stages 2.., `frames × (K_s − 1)`.
    pub zr: Vec<Vec<u32>>,
    /// Background stages, `frames × K_n`.
    pub zb: Vec<Vec<u32>>,
    pub fingerprint: u64,
}

impl TokenBundle {
    pub fn frames(&self) -> usize {
        self.zc.len()
    }

    pub fn speech_tokens(&self) -> Vec<Vec<u32>> {
        merge_tokens(&self.zc, &self.zr)
    }

    pub fn validate(&self, speech_stages: usize, background_stages: usize, codebook_size: usize) -> Result<()> {
        let t = self.frames();
        if self.zr.len() != t || self.zb.len() != t {
            return Err(Error::Shape(format!(
                "token bundle frame counts differ: zc {t}, zr {}, zb {}",
                self.zr.len(),
                self.zb.len()
            )));
        }
        for (f, (r, b)) in self.zr.iter().zip(&self.zb).enumerate() {
            if r.len() + 1 != speech_stages || b.len() != background_stages {
                return Err(Error::Shape(format!(
                    "frame {f}: {}+{} speech and {} background tokens, expected {speech_stages} and {background_stages}",
                    1,
                    r.len(),
                    b.len()
                )));
            }
        }
        let limit = codebook_size as u32;
        let bad = self.zc.iter().chain(self.zr.iter().flatten()).chain(self.zb.iter().flatten()).find(|i| **i >= limit);
        if let Some(i) = bad {
            return Err(Error::Format(format!("token {i} exceeds codebook size {codebook_size}")));
        }
        Ok(())
    }
}

/// Tape values of the analysis half of the model.
#[derive(Clone, Copy, Debug)]
pub struct Analysis {
    pub y: Var,
    pub s: Var,
    pub n: Var,
}

/// Everything [`Codec::encode`] computes for one waveform.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub y: Tensor,
    pub s: Tensor,
    pub n: Tensor,
    pub tokens: TokenBundle,
    pub zs: Tensor,
    pub zn: Tensor,
    pub speech: RvqEncoding,
    pub background: RvqEncoding,
    pub original_len: usize,
}

#[derive(Clone, Debug)]
pub struct Codec {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub sop: ProjectionPair,
    pub srvq: RvqStack,
    pub nrvq: RvqStack,
    pub sg_head: SgHead,
    pub teacher: ContentTeacher,
    pub decoder: Decoder,
}

impl Codec {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let encoder = Encoder::new(&mut store, c, &mut rng);
        let sop = ProjectionPair::new(&mut store, "sop", c.embed_dim, c.tied_projectors, &mut rng);
        let d = c.embed_dim;
        let mut srvq = RvqStack::new(&mut store, "srvq", c.speech_stages, c.codebook_size, d, c.commitment_beta, &mut rng)?;
        let mut nrvq =
            RvqStack::new(&mut store, "nrvq", c.background_stages, c.codebook_size, d, c.commitment_beta, &mut rng)?;
        if c.zero_entry {
            srvq.pin_zero_entry(&mut store);
            nrvq.pin_zero_entry(&mut store);
        }
        let sg_head = SgHead::new(&mut store, "sg_head", d, c.teacher_dim, &mut rng);
        let teacher = ContentTeacher::new(c.seed, c.teacher_dim);
        let decoder = Decoder::new(&mut store, c, &mut rng);
        Ok(Self { config, store, encoder, sop, srvq, nrvq, sg_head, teacher, decoder })
    }

    pub fn hop(&self) -> usize {
        self.config.hop()
    }

    /// `samples × 1`, right-padded with zeros to a whole number of frames.
    pub fn pad(&self, samples: &[f64]) -> Tensor {
        let len = self.config.frames_for(samples.len()) * self.hop();
        let mut v = samples.to_vec();
        v.resize(len, 0.0);
        Tensor::new(&[len, 1], v).expect("column")
    }

    pub fn analyze(&self, g: &mut Graph, x: Var) -> Result<Analysis> {
        let y = self.encoder.forward(g, x)?;
        let (s, n) = self.sop.project(g, y)?;
        Ok(Analysis { y, s, n })
    }

    pub fn decode_graph(&self, g: &mut Graph, zs: Var, zn: Var) -> Result<Var> {
        self.decoder.forward(g, zs, zn)
    }

    /// Encodes a waveform at the model's sample rate.
    pub fn encode(&self, x: &Waveform) -> Result<Encoded> {
        self.check_rate(x.sample_rate)?;
        if x.len() < self.hop() {
            return Err(Error::Signal(format!("{} samples is shorter than one frame ({})", x.len(), self.hop())));
        }
        let mut g = Graph::new(&self.store);
        let xin = g.input(self.pad(&x.samples));
        let a = self.analyze(&mut g, xin)?;
        let qs = self.srvq.forward(&mut g, a.s, Assignment::Fresh)?;
        let qn = self.nrvq.forward(&mut g, a.n, Assignment::Fresh)?;
        let speech = qs.frozen.encoding;
        let background = qn.frozen.encoding;
        let (zc, zr) = split_tokens(&speech.tokens);
        let tokens = TokenBundle { zc, zr, zb: background.tokens.clone(), fingerprint: self.fingerprint() };
        Ok(Encoded {
            y: g.value(a.y).clone(),
            s: g.value(a.s).clone(),
            n: g.value(a.n).clone(),
            tokens,
            zs: speech.z.clone(),
            zn: background.z.clone(),
            speech,
            background,
            original_len: x.len(),
        })
    }

    /// Decodes `frames × D` sums to `frames·hop` samples.
    pub fn decode(&self, zs: &Tensor, zn: &Tensor) -> Result<Waveform> {
        let mut g = Graph::new(&self.store);
        let a = g.input(zs.clone());
        let b = g.input(zn.clone());
        let out = self.decode_graph(&mut g, a, b)?;
        Ok(Waveform::new(g.value(out).data().to_vec(), self.config.sample_rate))
    }

    /// [`Self::decode`] cropped to `len` samples.
    pub fn decode_to(&self, zs: &Tensor, zn: &Tensor, len: usize) -> Result<Waveform> {
        let w = self.decode(zs, zn)?;
        Ok(w.slice(0, len.min(w.len())))
    }

    /// Quantized reconstruction of `x`.
    pub fn reconstruct(&self, x: &Waveform) -> Result<Waveform> {
        let e = self.encode(x)?;
        self.decode_to(&e.zs, &e.zn, e.original_len)
    }

    pub fn detokenize(&self, tb: &TokenBundle) -> Result<(Tensor, Tensor)> {
        let expected = self.fingerprint();
        if tb.fingerprint != expected {
            return Err(Error::Fingerprint { expected, found: tb.fingerprint });
        }
        let c = &self.config;
        tb.validate(c.speech_stages, c.background_stages, c.codebook_size)?;
        let zs = lookup(&tb.speech_tokens(), &self.srvq.tables(&self.store))?;
        let zn = lookup(&tb.zb, &self.nrvq.tables(&self.store))?;
        Ok((zs, zn))
    }

    /// Tokens of the all-zero waveform covering `frames` frames.
    pub fn blank(&self, frames: usize) -> Result<TokenBundle> {
        let zero = Waveform::zeros(frames * self.hop(), self.config.sample_rate);
        Ok(self.encode(&zero)?.tokens)
    }

    /// FNV-1a-64 over the config text and every parameter value.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.config.to_text().as_bytes());
        for (_, p) in self.store.iter() {
            h.write(p.name.as_bytes());
            for v in p.tensor.data() {
                h.write(&v.to_le_bytes());
            }
        }
        h.finish()
    }

    /// Mean per-frame `|cos(S_t, N_t)|` of a waveform's projections.
    pub fn frame_cosine(&self, x: &Waveform) -> Result<f64> {
        let e = self.encode(x)?;
        Ok(sop::mean_abs_frame_cosine(&e.s, &e.n))
    }

    fn check_rate(&self, sr: u32) -> Result<()> {
        if sr != self.config.sample_rate {
            return Err(Error::Signal(format!("sample rate {sr} Hz, model runs at {} Hz", self.config.sample_rate)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig { codebook_size: 8, speech_stages: 2, background_stages: 2, ..ModelConfig::fast() }
    }

    fn noise(len: usize, sr: u32, seed: u64) -> Waveform {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.random_range(-0.3..0.3)).collect(), sr)
    }

    #[test]
    fn frame_count_and_padding() {
        let codec = Codec::new(tiny()).unwrap();
        let e = codec.encode(&noise(250, 4000, 1)).unwrap();
        assert_eq!(e.tokens.frames(), 32);
        assert_eq!(e.original_len, 250);
        assert_eq!(codec.decode(&e.zs, &e.zn).unwrap().len(), 256);
        assert_eq!(codec.reconstruct(&noise(250, 4000, 1)).unwrap().len(), 250);
    }

    #[test]
    fn detokenize_inverts_encode() {
        let codec = Codec::new(tiny()).unwrap();
        let e = codec.encode(&noise(400, 4000, 2)).unwrap();
        let (zs, zn) = codec.detokenize(&e.tokens).unwrap();
        assert_eq!(zs, e.zs);
        assert_eq!(zn, e.zn);
    }

    #[test]
    fn zero_bundle_sums_entry_zero() {
        let mut cfg = tiny();
        cfg.zero_entry = false;
        let codec = Codec::new(cfg).unwrap();
        let frames = 3;
        let tb = TokenBundle {
            zc: vec![0; frames],
            zr: vec![vec![0]; frames],
            zb: vec![vec![0; 2]; frames],
            fingerprint: codec.fingerprint(),
        };
        let (zs, _) = codec.detokenize(&tb).unwrap();
        let tables = codec.srvq.tables(&codec.store);
        for t in 0..frames {
            for (j, v) in zs.row(t).iter().enumerate() {
                assert_eq!(*v, tables[0].row(0)[j] + tables[1].row(0)[j]);
            }
        }
    }

    #[test]
    fn foreign_tokens_are_refused() {
        let a = Codec::new(tiny()).unwrap();
        let b = Codec::new(ModelConfig { seed: 9, ..tiny() }).unwrap();
        let e = a.encode(&noise(64, 4000, 3)).unwrap();
        assert!(matches!(b.detokenize(&e.tokens), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn blank_bundle_is_deterministic() {
        let codec = Codec::new(tiny()).unwrap();
        assert_eq!(codec.blank(5).unwrap(), codec.blank(5).unwrap());
    }

    #[test]
    fn causal_tokens_ignore_future_samples() {
        let codec = Codec::new(ModelConfig { causal: true, ..tiny() }).unwrap();
        let x = noise(256, 4000, 4);
        let mut y = x.clone();
        for v in &mut y.samples[160..] {
            *v = -*v + 0.1;
        }
        let (a, b) = (codec.encode(&x).unwrap(), codec.encode(&y).unwrap());
        // Frames whose receptive field ends before sample 160.
        for t in 0..20 {
            assert_eq!(a.s.row(t), b.s.row(t), "frame {t}");
            assert_eq!(a.n.row(t), b.n.row(t), "frame {t}");
            assert_eq!(a.tokens.zc[t], b.tokens.zc[t]);
        }
        assert_ne!(a.s.row(20), b.s.row(20));
    }

    #[test]
    fn concat_decoder_runs() {
        let codec = Codec::new(ModelConfig { concat_decoder: true, ..tiny() }).unwrap();
        let e = codec.encode(&noise(64, 4000, 5)).unwrap();
        assert_eq!(codec.decode(&e.zs, &e.zn).unwrap().len(), 64);
    }
}
