use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use decodec_cli::commands::{self, Manifest};
use decodec_cli::{RunConfig, TokenFile};
use decodec_core::tasks::Task;
use decodec_core::training::TrainConfig;
use decodec_core::Waveform;

#[derive(Parser)]
#[command(name = "decodec", version, about = "Disentangled speech/background audio codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a key=value config file.
    Train {
        config: PathBuf,
        /// Overrides, applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode a 16-bit mono WAV into a token file.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Decode a token file to WAV.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Recombine token streams for a task and decode.
    Recombine {
        #[arg(long)]
        checkpoint: PathBuf,
        /// recon, se, bgs, vc or vcse.
        #[arg(long)]
        task: Task,
        input: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        output: PathBuf,
    },
    /// Metrics CSV on a held-out synthetic set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// key=value manifest (seed, count, frames, snr_db); defaults when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of every loss term on the toy model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, overrides, seed, out } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply(&overrides)?;
            if let Some(s) = seed {
                cfg.train.model.seed = s;
                cfg.train.corpus_seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let path = commands::train(&cfg)?;
            println!("{}", path.display());
        }
        Command::Encode { checkpoint, input, output } => {
            let codec = commands::load_codec(&checkpoint)?;
            let wav = Waveform::load(&input).with_context(|| format!("reading {}", input.display()))?;
            let file = commands::encode(&codec, &wav)?;
            file.save(&output)?;
            println!("{} frames, {} payload bytes", file.frames(), file.payload_len());
        }
        Command::Decode { checkpoint, input, output } => {
            let codec = commands::load_codec(&checkpoint)?;
            let wav = commands::decode(&codec, &TokenFile::load(&input)?)?;
            wav.save(&output)?;
        }
        Command::Recombine { checkpoint, task, input, reference, output } => {
            let codec = commands::load_codec(&checkpoint)?;
            let input = TokenFile::load(&input)?;
            let reference = reference.map(TokenFile::load).transpose()?;
            commands::recombine(&codec, task, &input, reference.as_ref())?.save(&output)?;
        }
        Command::Eval { checkpoint, manifest, output } => {
            let codec = commands::load_codec(&checkpoint)?;
            let m = match manifest {
                Some(p) => Manifest::parse(&std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)?,
                None => Manifest::default(),
            };
            let windows = TrainConfig::new(codec.config.clone()).mel_windows;
            let csv = commands::eval(&codec, &m, &windows)?.to_csv();
            match output {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
        }
        Command::Gradcheck { seed, eps } => {
            let r = commands::gradcheck(seed, eps)?;
            print!("{}", r.lines());
            println!("{:.1} s", r.seconds);
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
