use super::Waveform;

const SDR_EPS: f64 = 1e-12;

/// Plain energy-ratio SDR in dB, `10·log10((‖r‖² + ε) / (‖r − e‖² + ε))`.
///
/// Panics if the lengths differ.
pub fn sdr(reference: &Waveform, estimate: &Waveform) -> f64 {
    sdr_samples(&reference.samples, &estimate.samples)
}

pub fn sdr_samples(reference: &[f64], estimate: &[f64]) -> f64 {
    assert_eq!(reference.len(), estimate.len(), "sdr: length mismatch");
    let num: f64 = reference.iter().map(|r| r * r).sum();
    let den: f64 = reference.iter().zip(estimate).map(|(r, e)| (r - e) * (r - e)).sum();
    10.0 * ((num + SDR_EPS) / (den + SDR_EPS)).log10()
}

/// Measured `10·log10(P_s / P_n)`.
pub fn snr_db(s: &Waveform, n: &Waveform) -> f64 {
    10.0 * (s.energy() / n.energy()).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Waveform {
        Waveform::new((0..64).map(|i| (i as f64 * 0.3).sin()).collect(), 8000)
    }

    #[test]
    fn perfect_estimate_hits_the_cap() {
        let r = ramp();
        assert!(sdr(&r, &r) >= 120.0);
    }

    #[test]
    fn half_amplitude_is_six_db() {
        let r = ramp();
        assert!((sdr(&r, &r.scaled(0.5)) - 10.0 * 4f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn silent_estimate_is_zero_db() {
        let r = ramp();
        assert!(sdr(&r, &Waveform::zeros(64, 8000)).abs() < 1e-9);
    }
}
