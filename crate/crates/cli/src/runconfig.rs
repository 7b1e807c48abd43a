//! Plain-text `key=value` run configuration.
//!
//! `preset` picks the starting model; every other key is a model field or a training
//! setting. Later lines override earlier ones, and flags override the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use decodec_core::training::{TrainConfig, Variant};
use decodec_core::ModelConfig;

pub const TRAINING_KEYS: &[&str] = &[
    "variant",
    "steps",
    "batch",
    "crop_frames",
    "corpus_seed",
    "mel_windows",
    "checkpoint_every",
    "data_init",
    "lr",
    "gamma",
    "weight_decay",
    "clip_norm",
    "snr_min",
    "snr_max",
    "swap_prob",
    "out_dir",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().ok().with_context(|| format!("{key}: cannot parse {v:?}"))
}

impl RunConfig {
    pub fn from_preset(name: &str) -> Result<Self> {
        let model = ModelConfig::preset(name)?;
        Ok(Self { train: TrainConfig::new(model), out_dir: PathBuf::from("run") })
    }

    /// Parses `key=value` lines; `#` starts a comment line. Model keys are applied
    /// first so training defaults such as mel windows follow the final model.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = split_lines(text)?;
        let preset = pairs.iter().rev().find(|(k, _)| k == "preset").map_or("desk", |(_, v)| v.as_str());
        let mut model = ModelConfig::preset(preset)?;
        for (k, v) in pairs.iter().filter(|(k, _)| ModelConfig::KEYS.contains(&k.as_str())) {
            model.set(k, v)?;
        }
        let mut cfg = Self { train: TrainConfig::new(model), out_dir: PathBuf::from("run") };
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset" && !ModelConfig::KEYS.contains(&k.as_str())) {
            cfg.set(k, v)?;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        match key {
            "variant" => t.variant = Variant::parse(v)?,
            "steps" => t.steps = parse(key, v)?,
            "batch" => t.batch = parse(key, v)?,
            "crop_frames" => t.crop_frames = parse(key, v)?,
            "corpus_seed" => t.corpus_seed = parse(key, v)?,
            "mel_windows" => t.mel_windows = v.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "data_init" => t.data_init = parse(key, v)?,
            "lr" => t.optimizer.lr = parse(key, v)?,
            "gamma" => t.optimizer.gamma = parse(key, v)?,
            "weight_decay" => t.optimizer.weight_decay = parse(key, v)?,
            "clip_norm" => t.optimizer.clip_norm = if v == "none" { None } else { Some(parse(key, v)?) },
            "snr_min" => t.snr_range.0 = parse(key, v)?,
            "snr_max" => t.snr_range.1 = parse(key, v)?,
            "swap_prob" => t.swap_prob = parse(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "preset" => bail!("preset must be given in the config file, not as an override"),
            k if ModelConfig::KEYS.contains(&k) => t.model.set(k, v)?,
            k => bail!("unknown config key {k:?}"),
        }
        Ok(())
    }

    /// Applies `key=value` overrides, then revalidates.
    pub fn apply(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o.split_once('=').with_context(|| format!("override {o:?} is not key=value"))?;
            self.set(k.trim(), v)?;
        }
        self.train.validate()?;
        Ok(())
    }
}

fn split_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key=value, got {line:?}", n + 1);
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_then_overrides() {
        let c = RunConfig::parse("preset=fast\nsteps=12\nembed_dim=8\nlr=0.001\nvariant=sop_rst\nout_dir=/tmp/x\n").unwrap();
        assert_eq!(c.train.model.sample_rate, 4000);
        assert_eq!(c.train.model.embed_dim, 8);
        assert_eq!(c.train.steps, 12);
        assert_eq!(c.train.optimizer.lr, 1e-3);
        assert_eq!(c.train.variant, Variant::SOP_RST);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/x"));
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = RunConfig::parse("preset=fast\nlearning_rate=1\n").unwrap_err();
        assert!(format!("{e:#}").contains("learning_rate"), "{e:#}");
        let mut c = RunConfig::from_preset("fast").unwrap();
        assert!(c.apply(&["bogus=1".into()]).unwrap_err().to_string().contains("bogus"));
    }

    #[test]
    fn mel_windows_track_the_sample_rate() {
        let c = RunConfig::parse("sample_rate=4000\nstrides=2,4\n").unwrap();
        assert_eq!(c.train.mel_windows, TrainConfig::new(c.train.model.clone()).mel_windows);
    }
}
