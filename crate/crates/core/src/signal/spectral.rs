//! Short-time spectra and log-mel features.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::error::{Error, Result};
use crate::numerics::{CustomBackward, Graph, Tensor, Var};

pub const MEL_BANDS: usize = 64;
pub const MEL_FLOOR: f64 = 1e-5;

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// One-sided spectrogram: `frames × (window_len/2 + 1)` complex bins.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    pub window_len: usize,
    pub hop: usize,
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn frame(&self, f: usize) -> &[Complex<f64>] {
        &self.data[f * self.bins..(f + 1) * self.bins]
    }

    /// `Σ |X|²` over the full two-sided spectrum of every frame.
    pub fn energy(&self) -> f64 {
        let n = self.window_len;
        let mut total = 0.0;
        for f in 0..self.frames {
            for (k, c) in self.frame(f).iter().enumerate() {
                let w = if k == 0 || 2 * k == n { 1.0 } else { 2.0 };
                total += w * c.norm_sqr();
            }
        }
        total
    }
}

fn check_window(window_len: usize, hop: usize, len: usize) -> Result<usize> {
    if !window_len.is_power_of_two() || window_len < 2 {
        return Err(Error::Signal(format!("window length {window_len} is not a power of two")));
    }
    if hop == 0 || hop > window_len {
        return Err(Error::Signal(format!("hop {hop} must be in 1..={window_len}")));
    }
    if len < window_len {
        return Err(Error::Signal(format!("signal of {len} samples is shorter than one {window_len}-sample window")));
    }
    Ok(1 + (len - window_len) / hop)
}

/// Hann-windowed short-time DFT over full frames starting at multiples of `hop`.
pub fn stft(x: &Waveform, window_len: usize, hop: usize) -> Result<Spectrogram> {
    let frames = check_window(window_len, hop, x.len())?;
    let plan = FftPlanner::new().plan_fft_forward(window_len);
    let window = hann(window_len);
    Ok(stft_with(&x.samples, &window, hop, frames, plan.as_ref()))
}

fn stft_with(x: &[f64], window: &[f64], hop: usize, frames: usize, fft: &dyn Fft<f64>) -> Spectrogram {
    let n = window.len();
    let bins = n / 2 + 1;
    let mut data = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for f in 0..frames {
        let seg = &x[f * hop..f * hop + n];
        for ((b, s), w) in buf.iter_mut().zip(seg).zip(window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Spectrogram { window_len: n, hop, frames, bins, data }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the mel scale from 0 Hz to Nyquist, each scaled to unit
/// area in Hz.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    pub bands: usize,
    pub bins: usize,
    /// `bands × bins`, row-major.
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, window_len: usize, bands: usize) -> Self {
        let bins = window_len / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let top = hz_to_mel(nyquist);
        let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(top * i as f64 / (bands + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / window_len as f64;
        let mut weights = vec![0.0; bands * bins];
        for m in 0..bands {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            let norm = 2.0 / (hi - lo);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f < mid {
                    (f - lo) / (mid - lo)
                } else if f >= mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[m * bins + k] = w * norm;
            }
        }
        Self { bands, bins, weights }
    }

    pub fn band(&self, m: usize) -> &[f64] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }
}

struct Scale {
    window: Vec<f64>,
    hop: usize,
    fb: MelFilterbank,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Per-scale analysis kept for the backward pass.
struct ScaleTrace {
    spec: Spectrogram,
    mel: Vec<f64>,
    log_mel: Vec<f64>,
}

/// Multi-scale log-mel analysis with cached FFT plans. The hop is a quarter window.
pub struct MelAnalyzer {
    sample_rate: u32,
    scales: Vec<Arc<Scale>>,
}

impl Clone for MelAnalyzer {
    fn clone(&self) -> Self {
        Self { sample_rate: self.sample_rate, scales: self.scales.clone() }
    }
}

impl std::fmt::Debug for MelAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelAnalyzer")
            .field("sample_rate", &self.sample_rate)
            .field("windows", &self.windows())
            .finish()
    }
}

impl MelAnalyzer {
    pub fn new(sample_rate: u32, windows: &[usize]) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Signal("mel analysis needs at least one window length".into()));
        }
        let mut planner = FftPlanner::new();
        let mut scales = Vec::new();
        for &n in windows {
            check_window(n, (n / 4).max(1), n)?;
            scales.push(Arc::new(Scale {
                window: hann(n),
                hop: (n / 4).max(1),
                fb: MelFilterbank::new(sample_rate, n, MEL_BANDS),
                fwd: planner.plan_fft_forward(n),
                inv: planner.plan_fft_inverse(n),
            }));
        }
        Ok(Self { sample_rate, scales })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn windows(&self) -> Vec<usize> {
        self.scales.iter().map(|s| s.window.len()).collect()
    }

    fn analyze(&self, scale: &Scale, x: &[f64]) -> Result<ScaleTrace> {
        let frames = check_window(scale.window.len(), scale.hop, x.len())?;
        let spec = stft_with(x, &scale.window, scale.hop, frames, scale.fwd.as_ref());
        let bands = scale.fb.bands;
        let mut mel = vec![0.0; frames * bands];
        for f in 0..frames {
            let mags: Vec<f64> = spec.frame(f).iter().map(|c| c.norm()).collect();
            for m in 0..bands {
                mel[f * bands + m] = scale.fb.band(m).iter().zip(&mags).map(|(w, a)| w * a).sum();
            }
        }
        let log_mel = mel.iter().map(|v| v.max(MEL_FLOOR).ln()).collect();
        Ok(ScaleTrace { spec, mel, log_mel })
    }

    /// `frames × MEL_BANDS` natural-log mel magnitudes at each scale.
    pub fn log_mel(&self, x: &[f64]) -> Result<Vec<Tensor>> {
        self.scales
            .iter()
            .map(|s| {
                let t = self.analyze(s, x)?;
                Tensor::new(&[t.spec.frames, MEL_BANDS], t.log_mel)
            })
            .collect()
    }

    /// Mean over scales of the mean absolute log-mel difference.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Signal(format!("mel distance: lengths {} vs {}", a.len(), b.len())));
        }
        let (la, lb) = (self.log_mel(a)?, self.log_mel(b)?);
        let total: f64 = la
            .iter()
            .zip(&lb)
            .map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64)
            .sum();
        Ok(total / la.len() as f64)
    }

    /// [`MelAnalyzer::distance`] between a `len×1` graph signal and a fixed target,
    /// as a differentiable node.
    pub fn loss(&self, g: &mut Graph, x: Var, target: &[f64]) -> Result<Var> {
        let xs = g.value(x).data().to_vec();
        if xs.len() != target.len() {
            return Err(Error::Signal(format!("mel loss: lengths {} vs {}", xs.len(), target.len())));
        }
        let mut traces = Vec::new();
        let mut signs = Vec::new();
        let mut total = 0.0;
        for s in &self.scales {
            let tx = self.analyze(s, &xs)?;
            let tt = self.analyze(s, target)?;
            let n = tx.log_mel.len() as f64;
            let mut sg = Vec::with_capacity(tx.log_mel.len());
            let mut sum = 0.0;
            for (p, q) in tx.log_mel.iter().zip(&tt.log_mel) {
                let d = p - q;
                sum += d.abs();
                sg.push(if d > 0.0 { 1.0 / n } else if d < 0.0 { -1.0 / n } else { 0.0 });
            }
            total += sum / n;
            traces.push(tx);
            signs.push(sg);
        }
        let k = self.scales.len() as f64;
        let value = Tensor::scalar(total / k);
        let vjp = MelLossBackward { scales: self.scales.clone(), traces, signs, len: xs.len() };
        Ok(g.custom(vec![x], value, Box::new(vjp)))
    }
}

struct MelLossBackward {
    scales: Vec<Arc<Scale>>,
    traces: Vec<ScaleTrace>,
    /// `sign(Δ) / (frames·bands)` per log-mel cell.
    signs: Vec<Vec<f64>>,
    len: usize,
}

impl CustomBackward for MelLossBackward {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let k = grad.item() / self.scales.len() as f64;
        let mut dx = vec![0.0; self.len];
        for ((scale, tr), sg) in self.scales.iter().zip(&self.traces).zip(&self.signs) {
            let n = scale.window.len();
            let bins = tr.spec.bins;
            let bands = scale.fb.bands;
            let mut buf = vec![Complex::new(0.0, 0.0); n];
            let mut d_mag = vec![0.0; bins];
            for f in 0..tr.spec.frames {
                d_mag.iter_mut().for_each(|v| *v = 0.0);
                for m in 0..bands {
                    let cell = f * bands + m;
                    let mel = tr.mel[cell];
                    if mel <= MEL_FLOOR || sg[cell] == 0.0 {
                        continue;
                    }
                    let d = k * sg[cell] / mel;
                    for (dm, w) in d_mag.iter_mut().zip(scale.fb.band(m)) {
                        *dm += d * w;
                    }
                }
                // d|X|/dX = X/|X|; the real signal's gradient is w·Re(Σ_k c_k e^{+iθ}).
                buf.iter_mut().for_each(|b| *b = Complex::new(0.0, 0.0));
                for (kb, c) in tr.spec.frame(f).iter().enumerate() {
                    let a = c.norm();
                    if a > 0.0 && d_mag[kb] != 0.0 {
                        buf[kb] = *c * (d_mag[kb] / a);
                    }
                }
                scale.inv.process(&mut buf);
                let start = f * scale.hop;
                for (i, (b, w)) in buf.iter().zip(&scale.window).enumerate() {
                    dx[start + i] += w * b.re;
                }
            }
        }
        vec![Some(Tensor::new(inputs[0].shape(), dx).expect("mel loss gradient shape"))]
    }
}

/// [`MelAnalyzer::distance`] with a freshly planned analyzer.
pub fn mel_distance(a: &Waveform, b: &Waveform, windows: &[usize]) -> Result<f64> {
    a.check_compatible(b)?;
    MelAnalyzer::new(a.sample_rate, windows)?.distance(&a.samples, &b.samples)
}

/// Default analysis windows: `{512, 1024, 2048}` at 16 kHz, scaled with the sample
/// rate and never below 32 samples.
pub fn default_mel_windows(sample_rate: u32) -> Vec<usize> {
    let scale = sample_rate as f64 / 16_000.0;
    [512.0, 1024.0, 2048.0]
        .iter()
        .map(|w: &f64| ((w * scale).round() as usize).next_power_of_two().max(32))
        .collect()
}
