use decodec_core::numerics::{Graph, Tensor};
use decodec_core::signal::MelAnalyzer;
use decodec_core::training::{build_step, gradcheck_config, PairSampler, TrainConfig, TrainPair, Trainer, Variant};
use decodec_core::{Codec, ModelConfig};

const MEL: [usize; 2] = [64, 128];

fn setup(seed: u64) -> (Codec, MelAnalyzer, PairSampler) {
    let config = gradcheck_config(seed);
    let codec = Codec::new(config.clone()).unwrap();
    let mel = MelAnalyzer::new(config.sample_rate, &MEL).unwrap();
    let sampler = PairSampler::new(decodec_core::signal::CorpusConfig::new(config.sample_rate, config.hop()), 32, seed);
    (codec, mel, sampler)
}

fn swapped(sampler: &mut PairSampler) -> TrainPair {
    TrainPair { first: sampler.side().unwrap(), second: sampler.side().unwrap(), identical: false }
}

#[test]
fn identical_pair_target_is_the_mixture_and_rst_is_reconstruction_error() {
    let (codec, mel, mut sampler) = setup(1);
    let pair = TrainPair::identical(sampler.side().unwrap());
    assert_eq!(pair.swap_target().samples, pair.first.y().samples);
    let mut g = Graph::new(&codec.store);
    let v = build_step(&codec, &mut g, &mel, &pair, Variant::SOP_RST, None, None).unwrap();
    let y = pair.first.y();
    let r = codec.reconstruct(y).unwrap();
    let l1 = r.samples.iter().zip(&y.samples).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64;
    let got = g.value(v.rst).item();
    assert!((got - l1).abs() < 1e-9 * l1.max(1.0), "{got} vs {l1}");
}

#[test]
fn constant_offset_gives_exact_l1_and_uniform_gradient() {
    let store = decodec_core::numerics::ParamStore::new();
    let mut g = Graph::new(&store);
    let target: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
    let x = g.input(Tensor::new(&[40, 1], target.iter().map(|t| t + 0.01).collect()).unwrap());
    let t = g.constant(Tensor::new(&[40, 1], target).unwrap());
    let l = g.mean_abs_diff(x, t);
    assert!((g.value(l).item() - 0.01).abs() < 1e-15);
    let grads = g.backward(l);
    for d in grads.wrt(x).unwrap().data() {
        assert!((d - 1.0 / 40.0).abs() < 1e-15);
    }
}

#[test]
fn total_gradient_is_the_weighted_sum_of_term_gradients() {
    let (codec, mel, mut sampler) = setup(2);
    let pair = swapped(&mut sampler);
    let mut g = Graph::new(&codec.store);
    let v = build_step(&codec, &mut g, &mel, &pair, Variant::FULL, None, None).unwrap();
    let w = &codec.config.loss_weights;
    let terms = [(v.rst, w.rst), (v.recon, w.recon), (v.codebook, w.codebook), (v.commit, w.commit), (v.perp, w.perp), (v.sg.unwrap(), w.sg)];
    let total = g.backward(v.total).params;
    let parts: Vec<_> = terms.iter().map(|&(t, _)| g.backward(t).params).collect();
    for (id, p) in codec.store.iter() {
        let n = p.tensor.len();
        let mut want = vec![0.0; n];
        for (part, &(_, wt)) in parts.iter().zip(&terms) {
            if let Some(t) = part.get(id) {
                for (a, b) in want.iter_mut().zip(t.data()) {
                    *a += wt * b;
                }
            }
        }
        let got = total.get(id).map_or(vec![0.0; n], |t| t.data().to_vec());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{}: {a} vs {b}", p.name);
        }
    }
}

#[test]
fn every_parameter_receives_gradient_except_unselected_codewords() {
    let (codec, mel, mut sampler) = setup(3);
    let pair = swapped(&mut sampler);
    let mut g = Graph::new(&codec.store);
    let v = build_step(&codec, &mut g, &mel, &pair, Variant::FULL, None, None).unwrap();
    let grads = g.backward(v.total).params;
    let mut codewords = vec![];
    for (stack, out) in [(&codec.srvq, &v.speech), (&codec.nrvq, &v.background)] {
        for (k, stage) in stack.stages.iter().enumerate() {
            let used: std::collections::BTreeSet<usize> = out.frozen.encoding.tokens.iter().map(|f| f[k] as usize).collect();
            codewords.push((stage.entries, used));
        }
    }
    for (id, p) in codec.store.iter() {
        let grad = grads.get(id);
        if let Some((_, used)) = codewords.iter().find(|(e, _)| *e == id) {
            let t = grad.unwrap_or_else(|| panic!("{} has no gradient", p.name));
            for r in 0..t.rows() {
                let nonzero = t.row(r).iter().any(|x| *x != 0.0);
                assert_eq!(nonzero, used.contains(&r), "{} row {r}", p.name);
            }
        } else {
            let nonzero = grad.is_some_and(|t| t.data().iter().any(|x| *x != 0.0));
            assert!(nonzero, "{} received no gradient", p.name);
        }
    }
}

#[test]
fn sop_only_training_never_swaps() {
    let (_, _, mut sampler) = setup(4);
    assert!((0..50).all(|_| sampler.pair(false).unwrap().identical));
    assert!((0..50).any(|_| !sampler.pair(true).unwrap().identical));
}

fn short_run(seed: u64) -> Trainer {
    let model = ModelConfig { seed, ..gradcheck_config(seed) };
    let mut cfg = TrainConfig::new(model);
    cfg.steps = 3;
    cfg.batch = 2;
    cfg.crop_frames = 32;
    cfg.mel_windows = MEL.to_vec();
    cfg.variant = Variant::FULL;
    let mut t = Trainer::new(cfg).unwrap();
    t.run(None, |_, _| {}).unwrap();
    t
}

#[test]
fn training_is_deterministic_for_a_seed() {
    let a = short_run(9);
    let b = short_run(9);
    assert_eq!(a.log_csv(), b.log_csv());
    assert_eq!(a.codec.fingerprint(), b.codec.fingerprint());
    assert_ne!(a.codec.fingerprint(), short_run(10).codec.fingerprint());
    assert!(a.log.iter().all(|r| !r.skipped && r.total.is_finite()));
}
