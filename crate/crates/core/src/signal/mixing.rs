use super::Waveform;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Mixture {
    pub y: Waveform,
    /// Gain applied to the background, so `y = s + alpha·n`.
    pub alpha: f64,
}

/// Adds `n` to `s` at the requested SNR. `f64::INFINITY` returns `s` unchanged.
pub fn mix(s: &Waveform, n: &Waveform, snr_db: f64) -> Result<Mixture> {
    s.check_compatible(n)?;
    let ps = s.power();
    if ps <= 0.0 {
        return Err(Error::Signal("mix: speech has zero power".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { y: s.clone(), alpha: 0.0 });
    }
    if !snr_db.is_finite() {
        return Err(Error::Signal(format!("mix: invalid SNR {snr_db}")));
    }
    let pn = n.power();
    if pn <= 0.0 {
        return Err(Error::Signal(format!("mix: background has zero power at finite SNR {snr_db} dB")));
    }
    let alpha = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let y = Waveform::new(s.samples.iter().zip(&n.samples).map(|(a, b)| a + alpha * b).collect(), s.sample_rate);
    Ok(Mixture { y, alpha })
}
