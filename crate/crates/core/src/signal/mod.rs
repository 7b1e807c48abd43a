//! Audio containers, analysis, metrics and the synthetic corpus.

mod metrics;
mod mixing;
pub mod spectral;
pub mod synth;
mod waveform;

pub use metrics::{sdr, sdr_samples, snr_db};
pub use mixing::{mix, Mixture};
pub use spectral::{default_mel_windows, mel_distance, stft, MelAnalyzer, MelFilterbank, Spectrogram, MEL_BANDS, MEL_FLOOR};
pub use synth::{
    generate_background, generate_utterance, generate_utterance_for, BackgroundKind, CorpusConfig, Speaker,
    SyntheticUtterance, SYMBOLS,
};
pub use waveform::Waveform;
