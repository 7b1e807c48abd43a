use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use decodec_core::signal::CorpusConfig;
use decodec_core::tasks::{run_task, Task, TaskSpec};
use decodec_core::training::{evaluate, gradcheck_config, gradcheck_terms, held_out, EvalReport, TermCheck, Trainer};
use decodec_core::{Codec, Waveform};

use crate::runconfig::RunConfig;
use crate::tokenfile::TokenFile;

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn train(config: &RunConfig) -> Result<PathBuf> {
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.txt"), config.train.model.to_text())?;
    let mut trainer = Trainer::new(config.train.clone())?;
    trainer.run(Some(dir), |_, step| eprintln!("checkpoint at step {step}"))?;
    Ok(dir.join("final.dcck"))
}

pub fn load_codec(checkpoint: &Path) -> Result<Codec> {
    Codec::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))
}

pub fn encode(codec: &Codec, input: &Waveform) -> Result<TokenFile> {
    let e = codec.encode(input)?;
    TokenFile::new(&codec.config, e.tokens)
}

/// Refuses token files from another model.
pub fn decode(codec: &Codec, file: &TokenFile) -> Result<Waveform> {
    file.check_model(&codec.config)?;
    let (zs, zn) = codec.detokenize(&file.tokens)?;
    Ok(codec.decode(&zs, &zn)?)
}

pub fn recombine(codec: &Codec, task: Task, input: &TokenFile, reference: Option<&TokenFile>) -> Result<Waveform> {
    if task.needs_reference() && reference.is_none() {
        bail!("task {task} needs --reference");
    }
    if !task.needs_reference() && reference.is_some() {
        bail!("task {task} takes no reference");
    }
    input.check_model(&codec.config)?;
    if let Some(r) = reference {
        r.check_model(&codec.config)?;
    }
    let spec = TaskSpec::new(codec, task, input.tokens.clone(), reference.map(|r| r.tokens.clone()))?;
    Ok(run_task(&spec, codec, None)?)
}

/// Held-out synthetic test set description, `key=value` per line.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub frames: usize,
    pub snr_db: f64,
}

impl Default for Manifest {
    fn default() -> Self {
        Self { seed: 7, count: 16, frames: 128, snr_db: 0.0 }
    }
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line.split_once('=').with_context(|| format!("manifest line {line:?} is not key=value"))?;
            let v = v.trim();
            let bad = || format!("manifest {k}: cannot parse {v:?}");
            match k.trim() {
                "seed" => m.seed = v.parse().with_context(bad)?,
                "count" => m.count = v.parse().with_context(bad)?,
                "frames" => m.frames = v.parse().with_context(bad)?,
                "snr_db" => m.snr_db = v.parse().with_context(bad)?,
                other => bail!("unknown manifest key {other:?}"),
            }
        }
        ensure!(m.count > 0 && m.frames > 0, "manifest needs positive count and frames");
        Ok(m)
    }
}

pub fn eval(codec: &Codec, manifest: &Manifest, mel_windows: &[usize]) -> Result<EvalReport> {
    let corpus = CorpusConfig::new(codec.config.sample_rate, codec.hop());
    let items = held_out(&corpus, manifest.seed, manifest.count, manifest.frames, manifest.snr_db)?;
    Ok(evaluate(codec, &items, mel_windows)?)
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub terms: Vec<TermCheck>,
    pub seconds: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(|t| t.max_rel_error() < GRADCHECK_TOLERANCE)
    }

    pub fn lines(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            let verdict = if t.max_rel_error() < GRADCHECK_TOLERANCE { "pass" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<9} {verdict}  input {:.3e}  params {:.3e}  ({} + {} coordinates)",
                t.term,
                t.input.max_rel_error,
                t.params.max_rel_error,
                t.input.coords,
                t.params.coords
            );
        }
        s
    }
}

/// Gradient checks of every loss term on the `D = 16`, two-stage toy model.
pub fn gradcheck(seed: u64, eps: f64) -> Result<GradcheckReport> {
    let start = std::time::Instant::now();
    let config = gradcheck_config(seed);
    let terms = gradcheck_terms(&config, &[128, 256], 64, eps)?;
    Ok(GradcheckReport { terms, seconds: start.elapsed().as_secs_f64() })
}
