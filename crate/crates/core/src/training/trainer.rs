use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use super::data::{PairSampler, TrainPair};
use super::optim::{AdamW, AdamWConfig, StepOutcome};
use super::step::{rst_step, StepAux};
use super::{total_loss, LossBreakdown, Variant};
use crate::codec::{Codec, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, Tensor};
use crate::rvq::RvqEncoding;
use crate::signal::synth::rng_for;
use crate::signal::{default_mel_windows, CorpusConfig, MelAnalyzer};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optimizer: AdamWConfig,
    pub variant: Variant,
    pub steps: u64,
    pub batch: usize,
    /// Training crop length in codec frames.
    pub crop_frames: usize,
    pub corpus_seed: u64,
    pub mel_windows: Vec<usize>,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Initialize codebooks from the first batch's projections.
    pub data_init: bool,
    /// Training mixture SNR bounds in dB.
    pub snr_range: (f64, f64),
    pub swap_prob: f64,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        let mel_windows = default_mel_windows(model.sample_rate);
        let crop_frames = (mel_windows.iter().max().copied().unwrap_or(512) * 2).div_ceil(model.hop());
        Self {
            model,
            optimizer: AdamWConfig::default(),
            variant: Variant::FULL,
            steps: 1000,
            batch: 8,
            crop_frames,
            corpus_seed: 0,
            mel_windows,
            checkpoint_every: 0,
            data_init: true,
            snr_range: (-5.0, 40.0),
            swap_prob: 0.5,
        }
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig::new(self.model.sample_rate, self.model.hop())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch == 0 || self.crop_frames == 0 {
            return Err(Error::Config("batch and crop_frames must be positive".into()));
        }
        let crop = self.crop_frames * self.model.hop();
        if let Some(w) = self.mel_windows.iter().find(|w| **w > crop) {
            return Err(Error::Config(format!("mel window {w} exceeds the {crop}-sample training crop")));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.gamma > 0.0 && self.optimizer.gamma <= 1.0) {
            return Err(Error::Config("lr must be positive and gamma in (0, 1]".into()));
        }
        let (lo, hi) = self.snr_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("snr range [{lo}, {hi}] is not an interval")));
        }
        if !(0.0..=1.0).contains(&self.swap_prob) {
            return Err(Error::Config(format!("swap_prob {} outside [0, 1]", self.swap_prob)));
        }
        Ok(())
    }
}

pub const LOG_COLUMNS: &[&str] = &[
    "step",
    "rst",
    "sg",
    "perp",
    "recon",
    "codebook",
    "commit",
    "total",
    "lr",
    "grad_norm",
    "frame_cosine",
    "sg_cosine",
    "entropy_speech",
    "entropy_background",
    "reseeded",
    "skipped",
];

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub losses: LossBreakdown,
    pub total: f64,
    pub lr: f64,
    pub grad_norm: f64,
    /// Batch mean `|cos(S_t, N_t)|`.
    pub frame_cosine: f64,
    pub sg_cosine: f64,
    pub entropy_speech: f64,
    pub entropy_background: f64,
    pub reseeded: usize,
    pub skipped: bool,
}

impl LogRow {
    /// Reals in shortest exact form, so equal runs give byte-equal logs.
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        let reals = [l.rst, l.sg, l.perp, l.recon, l.codebook, l.commit, self.total, self.lr, self.grad_norm]
            .into_iter()
            .chain([self.frame_cosine, self.sg_cosine, self.entropy_speech, self.entropy_background])
            .map(|v| format!("{v:?}"))
            .collect::<Vec<_>>()
            .join(",");
        format!("{},{reals},{},{}", self.step, self.reseeded, u8::from(self.skipped))
    }
}

pub struct Trainer {
    pub codec: Codec,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    pub log: Vec<LogRow>,
    sampler: PairSampler,
    mel: MelAnalyzer,
    rng: ChaCha8Rng,
    initialized: bool,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let codec = Codec::new(config.model.clone())?;
        Self::from_codec(codec, config)
    }

    pub fn from_codec(codec: Codec, mut config: TrainConfig) -> Result<Self> {
        config.model = codec.config.clone();
        config.validate()?;
        let mut sampler = PairSampler::new(config.corpus(), config.crop_frames, config.corpus_seed);
        sampler.snr_range = config.snr_range;
        sampler.swap_prob = config.swap_prob;
        let mel = MelAnalyzer::new(config.model.sample_rate, &config.mel_windows)?;
        let optimizer = AdamW::new(config.optimizer.clone(), &codec.store);
        let rng = rng_for(config.corpus_seed, 0xDEAD);
        let initialized = !config.data_init;
        Ok(Self { codec, config, optimizer, log: vec![], sampler, mel, rng, initialized })
    }

    pub fn step_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn init_codebooks(&mut self, pairs: &[TrainPair]) -> Result<()> {
        let mut s_rows = vec![];
        let mut n_rows = vec![];
        let d = self.codec.config.embed_dim;
        for p in pairs {
            let e = self.codec.encode(p.first.y())?;
            s_rows.extend_from_slice(e.s.data());
            n_rows.extend_from_slice(e.n.data());
        }
        let s = Tensor::new(&[s_rows.len() / d, d], s_rows)?;
        let n = Tensor::new(&[n_rows.len() / d, d], n_rows)?;
        let codec = &mut self.codec;
        codec.srvq.init_from_data(&mut codec.store, &s, &mut self.rng);
        codec.nrvq.init_from_data(&mut codec.store, &n, &mut self.rng);
        Ok(())
    }

    /// One optimizer step over a fresh batch.
    pub fn step(&mut self) -> Result<LogRow> {
        let variant = self.config.variant;
        let pairs = (0..self.config.batch).map(|_| self.sampler.pair(variant.rst)).collect::<Result<Vec<_>>>()?;
        if !self.initialized {
            self.init_codebooks(&pairs)?;
            self.initialized = true;
        }
        let mut sum = LossBreakdown::default();
        let mut grads = ParamGrads::new(self.codec.store.len());
        let mut auxes: Vec<StepAux> = Vec::with_capacity(pairs.len());
        let mut failure = None;
        for p in &pairs {
            match rst_step(&self.codec, &self.mel, p, variant) {
                Ok((b, g, aux)) => {
                    sum.add(&b);
                    grads.merge(&g);
                    auxes.push(aux);
                }
                Err(e @ Error::NonFinite(_)) => {
                    failure = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let k = 1.0 / pairs.len() as f64;
        sum.scale(k);
        grads.scale(k);
        let step = self.step_index();
        let mut row = LogRow {
            step,
            total: total_loss(&sum, &self.effective_weights()),
            losses: sum,
            lr: self.optimizer.config.lr_at(self.optimizer.step),
            grad_norm: f64::NAN,
            frame_cosine: auxes.iter().map(|a| a.frame_cosine).sum::<f64>() / auxes.len().max(1) as f64,
            sg_cosine: auxes.iter().filter_map(|a| a.sg_cosine).sum::<f64>() / auxes.len().max(1) as f64,
            entropy_speech: 0.0,
            entropy_background: 0.0,
            reseeded: 0,
            skipped: false,
        };
        if let Some(e) = failure {
            eprintln!("step {step}: skipped, {e}");
            row.skipped = true;
            self.optimizer.skipped += 1;
            self.log.push(row.clone());
            return Ok(row);
        }
        match self.optimizer.update(&mut self.codec.store, &mut grads) {
            StepOutcome::Applied { grad_norm, .. } => row.grad_norm = grad_norm,
            StepOutcome::Skipped => {
                eprintln!("step {step}: skipped, non-finite gradient");
                row.skipped = true;
            }
        }
        let codec = &mut self.codec;
        codec.srvq.enforce_zero_entry(&mut codec.store);
        codec.nrvq.enforce_zero_entry(&mut codec.store);
        let speech: Vec<&RvqEncoding> = auxes.iter().map(|a| &a.speech).collect();
        let background: Vec<&RvqEncoding> = auxes.iter().map(|a| &a.background).collect();
        codec.srvq.record_usage(&speech);
        codec.nrvq.record_usage(&background);
        let mut reseeded = vec![];
        for (k, i) in codec.srvq.reseed_dead(&mut codec.store, &speech, &mut self.rng) {
            reseeded.push((codec.srvq.stages[k].entries, i));
        }
        for (k, i) in codec.nrvq.reseed_dead(&mut codec.store, &background, &mut self.rng) {
            reseeded.push((codec.nrvq.stages[k].entries, i));
        }
        for (id, i) in &reseeded {
            self.optimizer.reset_row(*id, *i);
        }
        row.reseeded = reseeded.len();
        row.entropy_speech = codec.srvq.usage_entropy();
        row.entropy_background = codec.nrvq.usage_entropy();
        self.log.push(row.clone());
        Ok(row)
    }

    /// Weights with the variant's disabled terms zeroed.
    pub fn effective_weights(&self) -> super::LossWeights {
        let mut w = self.codec.config.loss_weights.clone();
        if !self.config.variant.sop {
            w.perp = 0.0;
        }
        if !self.config.variant.sg {
            w.sg = 0.0;
        }
        w
    }

    /// Runs the remaining step budget. Writes `train_log.csv` and periodic checkpoints
    /// into `out_dir` when given, and calls `on_checkpoint` at each checkpoint step.
    pub fn run(&mut self, out_dir: Option<&Path>, mut on_checkpoint: impl FnMut(&Codec, u64)) -> Result<()> {
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                let mut f = std::io::BufWriter::new(fs::File::create(dir.join("train_log.csv"))?);
                writeln!(f, "{}", LOG_COLUMNS.join(","))?;
                Some(f)
            }
            None => None,
        };
        while self.step_index() < self.config.steps {
            let row = self.step()?;
            if let Some(f) = log.as_mut() {
                writeln!(f, "{}", row.to_csv())?;
            }
            let done = row.step + 1;
            let every = self.config.checkpoint_every;
            if every > 0 && done % every == 0 {
                if let Some(dir) = out_dir {
                    self.codec.save(checkpoint_path(dir, done))?;
                }
                on_checkpoint(&self.codec, done);
            }
        }
        if let Some(mut f) = log {
            f.flush()?;
        }
        if let Some(dir) = out_dir {
            self.codec.save(dir.join("final.dcck"))?;
        }
        Ok(())
    }

    pub fn log_csv(&self) -> String {
        let mut s = LOG_COLUMNS.join(",");
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.to_csv());
            s.push('\n');
        }
        s
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("checkpoint_{step:07}.dcck"))
}
