use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::training::LossWeights;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub sample_rate: u32,
    pub strides: Vec<usize>,
    pub stem_channels: usize,
    pub embed_dim: usize,
    pub kernel: usize,
    pub decoder_dim: usize,
    pub speech_stages: usize,
    pub background_stages: usize,
    pub codebook_size: usize,
    pub causal: bool,
    pub loss_weights: LossWeights,
    pub seed: u64,
    pub teacher_dim: usize,
    pub commitment_beta: f64,
    /// `P_N = I − P_S`.
    pub tied_projectors: bool,
    /// Decoder input `[Zs | Zn]` instead of `Zs + Zn`.
    pub concat_decoder: bool,
    /// Pin codebook entry 0 to the zero vector.
    pub zero_entry: bool,
}

impl ModelConfig {
    /// 16 kHz desk model with the full stride schedule.
    pub fn desk() -> Self {
        Self {
            sample_rate: 16_000,
            strides: vec![2, 4, 5, 8],
            stem_channels: 16,
            embed_dim: 64,
            kernel: 7,
            decoder_dim: 96,
            speech_stages: 4,
            background_stages: 4,
            codebook_size: 64,
            causal: false,
            loss_weights: LossWeights::default(),
            seed: 0,
            teacher_dim: 16,
            commitment_beta: 1.0,
            tied_projectors: false,
            concat_decoder: false,
            zero_entry: true,
        }
    }

    /// 4 kHz model small enough to train inside the test suite.
    pub fn fast() -> Self {
        Self {
            sample_rate: 4_000,
            strides: vec![2, 4],
            stem_channels: 8,
            embed_dim: 16,
            decoder_dim: 32,
            causal: false,
            teacher_dim: 8,
            ..Self::desk()
        }
    }

    pub fn large() -> Self {
        Self {
            stem_channels: 32,
            embed_dim: 1024,
            decoder_dim: 1536,
            speech_stages: 8,
            background_stages: 8,
            codebook_size: 1024,
            teacher_dim: 1024,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "fast" => Ok(Self::fast()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown preset {other:?} (desk, fast, large)"))),
        }
    }

    pub fn hop(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop() as f64
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        samples.div_ceil(self.hop())
    }

    pub fn bits_per_index(&self) -> f64 {
        (self.codebook_size as f64).log2()
    }

    pub fn speech_bitrate(&self) -> f64 {
        self.frame_rate() * self.speech_stages as f64 * self.bits_per_index()
    }

    pub fn background_bitrate(&self) -> f64 {
        self.frame_rate() * self.background_stages as f64 * self.bits_per_index()
    }

    /// `"S+B"` in kbps with one decimal.
    pub fn bitrate_label(&self) -> String {
        format!("{:.1}+{:.1}", self.speech_bitrate() / 1000.0, self.background_bitrate() / 1000.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.strides.is_empty() || self.strides.contains(&0) {
            return bad(format!("strides {:?} must be non-empty and positive", self.strides));
        }
        if self.sample_rate == 0 || self.sample_rate as usize % self.hop() != 0 {
            return bad(format!("sample rate {} is not a multiple of hop {}", self.sample_rate, self.hop()));
        }
        for (name, v) in [
            ("stem_channels", self.stem_channels),
            ("embed_dim", self.embed_dim),
            ("kernel", self.kernel),
            ("decoder_dim", self.decoder_dim),
            ("speech_stages", self.speech_stages),
            ("background_stages", self.background_stages),
            ("teacher_dim", self.teacher_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.codebook_size < 2 || self.codebook_size > 1 << 16 {
            return bad(format!("codebook_size {} outside 2..=65536", self.codebook_size));
        }
        let up = 1usize << self.strides.len();
        if self.decoder_dim % up != 0 {
            return bad(format!("decoder_dim {} must be divisible by {up} to halve per block", self.decoder_dim));
        }
        if !(self.commitment_beta >= 0.0 && self.commitment_beta.is_finite()) {
            return bad(format!("commitment_beta {} must be finite and non-negative", self.commitment_beta));
        }
        self.loss_weights.validate()
    }

    pub const KEYS: &'static [&'static str] = &[
        "sample_rate",
        "strides",
        "stem_channels",
        "embed_dim",
        "kernel",
        "decoder_dim",
        "speech_stages",
        "background_stages",
        "codebook_size",
        "causal",
        "seed",
        "teacher_dim",
        "commitment_beta",
        "tied_projectors",
        "concat_decoder",
        "zero_entry",
        "w_rst",
        "w_sg",
        "w_perp",
        "w_recon",
        "w_codebook",
        "w_commit",
    ];

    /// Sets one field from its text form. Unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let w = &mut self.loss_weights;
        match key {
            "sample_rate" => self.sample_rate = parse(key, v)?,
            "strides" => {
                self.strides = v.split(',').map(|s| parse(key, s.trim())).collect::<Result<_>>()?;
            }
            "stem_channels" => self.stem_channels = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "kernel" => self.kernel = parse(key, v)?,
            "decoder_dim" => self.decoder_dim = parse(key, v)?,
            "speech_stages" => self.speech_stages = parse(key, v)?,
            "background_stages" => self.background_stages = parse(key, v)?,
            "codebook_size" => self.codebook_size = parse(key, v)?,
            "causal" => self.causal = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "teacher_dim" => self.teacher_dim = parse(key, v)?,
            "commitment_beta" => self.commitment_beta = parse(key, v)?,
            "tied_projectors" => self.tied_projectors = parse(key, v)?,
            "concat_decoder" => self.concat_decoder = parse(key, v)?,
            "zero_entry" => self.zero_entry = parse(key, v)?,
            "w_rst" => w.rst = parse(key, v)?,
            "w_sg" => w.sg = parse(key, v)?,
            "w_perp" => w.perp = parse(key, v)?,
            "w_recon" => w.recon = parse(key, v)?,
            "w_codebook" => w.codebook = parse(key, v)?,
            "w_commit" => w.commit = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown model key {key:?}"))),
        }
        Ok(())
    }

    /// `key=value` lines in [`Self::KEYS`] order. Reals use the shortest exact form.
    pub fn to_text(&self) -> String {
        let w = &self.loss_weights;
        let strides = self.strides.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
        let values: [String; 22] = [
            self.sample_rate.to_string(),
            strides,
            self.stem_channels.to_string(),
            self.embed_dim.to_string(),
            self.kernel.to_string(),
            self.decoder_dim.to_string(),
            self.speech_stages.to_string(),
            self.background_stages.to_string(),
            self.codebook_size.to_string(),
            self.causal.to_string(),
            self.seed.to_string(),
            self.teacher_dim.to_string(),
            format!("{:?}", self.commitment_beta),
            self.tied_projectors.to_string(),
            self.concat_decoder.to_string(),
            self.zero_entry.to_string(),
            format!("{:?}", w.rst),
            format!("{:?}", w.sg),
            format!("{:?}", w.perp),
            format!("{:?}", w.recon),
            format!("{:?}", w.codebook),
            format!("{:?}", w.commit),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Parses [`Self::to_text`] output; missing keys keep their desk defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::desk();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}
