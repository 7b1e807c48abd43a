//! Token recombination: each task picks the `zc`, `zr` and `zb` streams from the input,
//! a reference utterance or the blank (all-zero) waveform.

use std::fmt;
use std::str::FromStr;

use crate::codec::{Codec, TokenBundle};
use crate::error::{Error, Result};
use crate::signal::Waveform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Reconstruction,
    SE,
    BgsExtraction,
    OneShotVC,
    OneShotVCSE,
}

/// Where one token stream comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Input,
    Reference,
    Blank,
}

/// Sources of `(zc, zr, zb)` for a task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pattern {
    pub zc: Source,
    pub zr: Source,
    pub zb: Source,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Reconstruction, Task::SE, Task::BgsExtraction, Task::OneShotVC, Task::OneShotVCSE];

    pub fn pattern(self) -> Pattern {
        use Source::*;
        let (zc, zr, zb) = match self {
            Task::Reconstruction => (Input, Input, Input),
            Task::SE => (Input, Input, Blank),
            Task::BgsExtraction => (Blank, Blank, Input),
            Task::OneShotVC => (Input, Reference, Input),
            Task::OneShotVCSE => (Input, Reference, Blank),
        };
        Pattern { zc, zr, zb }
    }

    pub fn needs_reference(self) -> bool {
        matches!(self, Task::OneShotVC | Task::OneShotVCSE)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Reconstruction => "recon",
            Task::SE => "se",
            Task::BgsExtraction => "bgs",
            Task::OneShotVC => "vc",
            Task::OneShotVCSE => "vcse",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task {s:?} (recon, se, bgs, vc, vcse)")))
    }
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub task: Task,
    pub input: TokenBundle,
    pub reference: Option<TokenBundle>,
    pub blank: TokenBundle,
}

impl TaskSpec {
    /// Builds the spec with the blank bundle encoded from zeros of the input's length.
    /// The reference, if any, is aligned to the input.
    pub fn new(codec: &Codec, task: Task, input: TokenBundle, reference: Option<TokenBundle>) -> Result<Self> {
        let blank = codec.blank(input.frames())?;
        let reference = reference.map(|r| align_reference(&r, input.frames())).transpose()?;
        let spec = Self { task, input, reference, blank };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (self.task.needs_reference(), &self.reference) {
            (true, None) => return Err(Error::Config(format!("task {} needs a reference", self.task))),
            (false, Some(_)) => return Err(Error::Config(format!("task {} takes no reference", self.task))),
            _ => {}
        }
        let t = self.input.frames();
        let others = std::iter::once(("blank", &self.blank)).chain(self.reference.iter().map(|r| ("reference", r)));
        for (name, b) in others {
            if b.frames() != t {
                return Err(Error::Shape(format!("{name} has {} frames, input has {t}; align first", b.frames())));
            }
            if b.fingerprint != self.input.fingerprint {
                return Err(Error::Fingerprint { expected: self.input.fingerprint, found: b.fingerprint });
            }
        }
        Ok(())
    }

    fn source(&self, s: Source) -> &TokenBundle {
        match s {
            Source::Input => &self.input,
            Source::Reference => self.reference.as_ref().expect("validated"),
            Source::Blank => &self.blank,
        }
    }
}

/// Selects streams per the task pattern. Every output token is copied from a source bundle.
pub fn recombine(spec: &TaskSpec) -> Result<TokenBundle> {
    spec.validate()?;
    let p = spec.task.pattern();
    Ok(TokenBundle {
        zc: spec.source(p.zc).zc.clone(),
        zr: spec.source(p.zr).zr.clone(),
        zb: spec.source(p.zb).zb.clone(),
        fingerprint: spec.input.fingerprint,
    })
}

/// Truncates or circularly repeats frames so the result has exactly `target_frames`.
pub fn align_reference(reference: &TokenBundle, target_frames: usize) -> Result<TokenBundle> {
    let n = reference.frames();
    if n == 0 {
        return Err(Error::Shape("reference bundle is empty".into()));
    }
    let pick = |f: usize| f % n;
    Ok(TokenBundle {
        zc: (0..target_frames).map(|f| reference.zc[pick(f)]).collect(),
        zr: (0..target_frames).map(|f| reference.zr[pick(f)].clone()).collect(),
        zb: (0..target_frames).map(|f| reference.zb[pick(f)].clone()).collect(),
        fingerprint: reference.fingerprint,
    })
}

/// Decodes the recombined bundle, cropped to `len` samples when given.
pub fn run_task(spec: &TaskSpec, codec: &Codec, len: Option<usize>) -> Result<Waveform> {
    let tb = recombine(spec)?;
    let (zs, zn) = codec.detokenize(&tb)?;
    let len = len.unwrap_or(tb.frames() * codec.hop());
    codec.decode_to(&zs, &zn, len)
}
