use decodec_core::signal::{generate_background, generate_utterance, mix, BackgroundKind, CorpusConfig};
use decodec_core::tasks::{recombine, run_task, Task, TaskSpec};
use decodec_core::{Codec, ModelConfig, Waveform};

fn codec() -> Codec {
    Codec::new(ModelConfig { seed: 5, zero_entry: false, ..ModelConfig::fast() }).unwrap()
}

fn noisy(codec: &Codec, seed: u64) -> Waveform {
    let cfg = CorpusConfig::new(codec.config.sample_rate, codec.hop());
    let s = generate_utterance(seed, 0.5, &cfg).unwrap();
    let n = generate_background(seed, 0.5, BackgroundKind::Chirp, codec.config.sample_rate).unwrap();
    mix(&s.waveform, &n, 0.0).unwrap().y
}

#[test]
fn vc_with_self_reference_equals_reconstruction() {
    let c = codec();
    let x = noisy(&c, 1);
    let tb = c.encode(&x).unwrap().tokens;
    let recon = run_task(&TaskSpec::new(&c, Task::Reconstruction, tb.clone(), None).unwrap(), &c, Some(x.len())).unwrap();
    let vc = run_task(&TaskSpec::new(&c, Task::OneShotVC, tb.clone(), Some(tb)).unwrap(), &c, Some(x.len())).unwrap();
    assert_eq!(recon.samples, vc.samples);
    assert_eq!(recon.samples, c.reconstruct(&x).unwrap().samples);
}

#[test]
fn se_takes_zero_waveform_background_tokens() {
    let c = codec();
    let tb = c.encode(&noisy(&c, 2)).unwrap().tokens;
    let zero = c.encode(&Waveform::zeros(tb.frames() * c.hop(), c.config.sample_rate)).unwrap().tokens;
    let out = recombine(&TaskSpec::new(&c, Task::SE, tb.clone(), None).unwrap()).unwrap();
    assert_eq!(out.zb, zero.zb);
    assert_eq!((&out.zc, &out.zr), (&tb.zc, &tb.zr));
    assert_eq!(c.blank(tb.frames()).unwrap(), c.blank(tb.frames()).unwrap());
}

#[test]
fn recombined_tokens_come_from_the_sources() {
    let c = codec();
    let input = c.encode(&noisy(&c, 3)).unwrap().tokens;
    let reference = c.encode(&noisy(&c, 4)).unwrap().tokens;
    for task in Task::ALL {
        let r = task.needs_reference().then(|| reference.clone());
        let spec = TaskSpec::new(&c, task, input.clone(), r).unwrap();
        let out = recombine(&spec).unwrap();
        let pool = [Some(&spec.input), spec.reference.as_ref(), Some(&spec.blank)];
        for f in 0..out.frames() {
            assert!(pool.iter().flatten().any(|b| b.zc[f] == out.zc[f]));
            assert!(pool.iter().flatten().any(|b| b.zr[f] == out.zr[f]));
            assert!(pool.iter().flatten().any(|b| b.zb[f] == out.zb[f]));
        }
    }
}

#[test]
fn short_reference_is_aligned_and_foreign_tokens_refused() {
    let c = codec();
    let input = c.encode(&noisy(&c, 5)).unwrap().tokens;
    let mut short = input.clone();
    short.zc.truncate(7);
    short.zr.truncate(7);
    short.zb.truncate(7);
    let spec = TaskSpec::new(&c, Task::OneShotVCSE, input.clone(), Some(short.clone())).unwrap();
    assert_eq!(spec.reference.as_ref().unwrap().zr[9], short.zr[2]);
    assert!(TaskSpec::new(&c, Task::OneShotVC, input.clone(), None).is_err());
    let mut foreign = input;
    foreign.fingerprint ^= 1;
    let spec = TaskSpec::new(&c, Task::Reconstruction, foreign, None);
    assert!(spec.is_err());
}
