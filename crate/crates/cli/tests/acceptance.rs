//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 1, 2, 3, 8 and 9 are exact properties of the implementation and fail the
//! run. Criteria 4 to 7 measure what a short training run learns; their verdicts are
//! reported but do not change the exit status.
//!
//! Two training profiles share the fast model. The orthogonality profile trains for
//! 5k steps on the default -5..40 dB mixtures (criteria 3, 4, 9). The decoupling
//! profile trains four times longer on -5..5 dB mixtures (criteria 5 to 7).
//!
//! `DECODEC_ACCEPTANCE_STEPS` sets the orthogonality run length, for smoke testing;
//! decoupling runs scale with it.

use std::process::ExitCode;
use std::time::Instant;

use decodec_cli::commands;
use decodec_cli::TokenFile;
use decodec_core::rvq::rvq_encode;
use decodec_core::signal::CorpusConfig;
use decodec_core::sop::projector_orthogonality_report;
use decodec_core::tasks::{align_reference, recombine, run_task, Task, TaskSpec};
use decodec_core::training::{
    evaluate, held_out, held_out_pairs, swap_probe, EvalItem, EvalReport, TrainConfig, Trainer, Variant,
};
use decodec_core::{Codec, ModelConfig, Tensor, TokenBundle, Waveform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_SECONDS: f64 = 120.0;
const COSINE_MAX: f64 = 0.1;
const SDR_GAIN_DB: f64 = 3.0;
const SWAP_FRACTION: f64 = 0.9;
const SG_COSINE_MIN: f64 = 0.8;
const ABLATION_SECONDS: f64 = 4.0 * 3600.0;
const RANDOM_INPUTS: usize = 1000;
const SWAP_PAIRS: usize = 200;
const EVAL_ITEMS: usize = 32;
const EVAL_FRAMES: usize = 128;
const CHECKPOINTS: u64 = 5;
/// Projector reports per checkpoint interval, averaged into one smoothed value.
const REPORTS_PER_CHECKPOINT: u64 = 4;

struct Verdict {
    id: u8,
    pass: bool,
    exact: bool,
    detail: String,
}

fn verdict(id: u8, exact: bool, pass: bool, detail: String) -> Verdict {
    println!("criterion {id}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    Verdict { id, pass, exact, detail }
}

const DECOUPLING_STEPS_FACTOR: u64 = 4;
const DECOUPLING_SNR_DB: (f64, f64) = (-5.0, 5.0);

fn profile(variant: Variant, steps: u64) -> TrainConfig {
    let mut t = TrainConfig::new(ModelConfig::fast());
    t.variant = variant;
    t.steps = steps;
    t.batch = 4;
    t.crop_frames = 64;
    t.mel_windows = vec![64, 128, 256];
    t.optimizer.lr = 1e-3;
    t
}

fn steps() -> u64 {
    std::env::var("DECODEC_ACCEPTANCE_STEPS").ok().and_then(|s| s.parse().ok()).unwrap_or(5000)
}

fn criterion_1() -> Verdict {
    match commands::gradcheck(0, 1e-5) {
        Ok(r) => {
            let worst = r.terms.iter().map(|t| t.max_rel_error()).fold(0.0, f64::max);
            let terms = r.terms.iter().map(|t| format!("{} {:.1e}", t.term, t.max_rel_error())).collect::<Vec<_>>().join(", ");
            let pass = r.passed() && worst < GRADCHECK_TOL && r.seconds < GRADCHECK_SECONDS;
            verdict(1, true, pass, format!("{terms}; {:.0} s", r.seconds))
        }
        Err(e) => verdict(1, true, false, format!("error {e:#}")),
    }
}

fn criterion_2() -> Verdict {
    let c = ModelConfig::large();
    let pass = c.sample_rate == 16_000
        && c.strides == [2, 4, 5, 8]
        && c.speech_bitrate() == 4000.0
        && c.background_bitrate() == 4000.0
        && c.bitrate_label() == "4.0+4.0";
    verdict(2, true, pass, format!("{} kbps", c.bitrate_label()))
}

fn random_waveform(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32) -> Waveform {
    let scale = rng.random_range(0.01..0.5);
    Waveform::new((0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(), sample_rate)
}

fn criterion_3(codec: &Codec) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = codec.config.embed_dim;
    let tables = [codec.srvq.tables(&codec.store), codec.nrvq.tables(&codec.store)];
    let mut norm_violations = 0;
    let mut nondeterministic = 0;
    let mut round_trip_failures = 0;
    for i in 0..RANDOM_INPUTS {
        let frames = rng.random_range(1..16);
        let scale = rng.random_range(0.01..4.0);
        let x = Tensor::new(&[frames, dim], (0..frames * dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .expect("shape");
        for t in &tables {
            let e = rvq_encode(&x, t);
            norm_violations += e.residual_norms.windows(2).filter(|w| w[1] > w[0]).count();
            nondeterministic += usize::from(rvq_encode(&x, t) != e);
        }
        if i % 4 == 0 {
            let len = rng.random_range(1..48) * codec.hop();
            let w = random_waveform(&mut rng, len, codec.config.sample_rate);
            let a = codec.encode(&w).expect("encode");
            let b = codec.encode(&w).expect("encode");
            nondeterministic += usize::from(a.tokens != b.tokens || a.zs != b.zs);
            let file = TokenFile::new(&codec.config, a.tokens.clone()).expect("token file");
            let parsed = TokenFile::from_bytes(&file.to_bytes()).expect("parse");
            let (zs, zn) = codec.detokenize(&parsed.tokens).expect("detokenize");
            let exact = parsed == file
                && parsed.to_bytes() == file.to_bytes()
                && zs == a.zs
                && zn == a.zn
                && commands::decode(codec, &parsed).expect("decode").samples
                    == codec.decode(&a.zs, &a.zn).expect("decode").samples;
            round_trip_failures += usize::from(!exact);
        }
    }
    let pass = norm_violations == 0 && nondeterministic == 0 && round_trip_failures == 0;
    verdict(
        3,
        true,
        pass,
        format!(
            "{RANDOM_INPUTS} inputs: {norm_violations} norm increases, {nondeterministic} nondeterministic, {round_trip_failures} round-trip mismatches"
        ),
    )
}

struct Run {
    codec: Codec,
    log_csv: String,
    /// Smoothed projector mean |cos| per checkpoint interval.
    projector: Vec<f64>,
    report: EvalReport,
    seconds: f64,
}

fn decoupling(variant: Variant, steps: u64) -> TrainConfig {
    let mut t = profile(variant, steps * DECOUPLING_STEPS_FACTOR);
    t.snr_range = DECOUPLING_SNR_DB;
    t
}

fn train(mut config: TrainConfig, items: &[EvalItem]) -> Run {
    let start = Instant::now();
    let (variant, steps) = (config.variant, config.steps);
    config.checkpoint_every = (steps / (CHECKPOINTS * REPORTS_PER_CHECKPOINT)).max(1);
    let mut trainer = Trainer::new(config.clone()).expect("trainer");
    let mut reports = vec![];
    trainer
        .run(None, |codec, _| {
            let (ps, pn) = codec.sop.matrices(&codec.store);
            reports.push(projector_orthogonality_report(&ps, &pn).mean_abs_cosine);
        })
        .expect("training");
    let projector = reports.chunks(REPORTS_PER_CHECKPOINT as usize).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let report = evaluate(&trainer.codec, items, &config.mel_windows).expect("evaluate");
    println!(
        "  trained {:<8} {steps} steps, SNR {:?} dB, in {:.0} s: SDR-O {:.2} SDR-S {:.2} SDR-B {:.2} |cos| {:.3} agree {:.3} sg {:.3}",
        variant.name(),
        config.snr_range,
        start.elapsed().as_secs_f64(),
        report.mean(|r| r.sdr_o),
        report.mean(|r| r.sdr_s),
        report.mean(|r| r.sdr_b),
        report.mean(|r| r.l_perp),
        report.mean(|r| r.token_agree),
        report.mean(|r| r.sg_cosine),
    );
    Run { log_csv: trainer.log_csv(), codec: trainer.codec, projector, report, seconds: start.elapsed().as_secs_f64() }
}

fn criterion_4(untrained: &EvalReport, run: &Run) -> Verdict {
    let before = untrained.mean(|r| r.l_perp);
    let after = run.report.mean(|r| r.l_perp);
    let monotone = run.projector.len() == CHECKPOINTS as usize && run.projector.windows(2).all(|w| w[1] < w[0]);
    let series = run.projector.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" > ");
    let pass = after < COSINE_MAX && after < before && monotone;
    verdict(4, false, pass, format!("held-out |cos| {after:.3} (untrained {before:.3}); projector |cos| {series}"))
}

fn criterion_5(sop: &EvalReport, rst: &EvalReport, both: &EvalReport, seconds: f64) -> Verdict {
    let s = |r: &EvalReport| r.mean(|x| x.sdr_s);
    let b = |r: &EvalReport| r.mean(|x| x.sdr_b);
    let mix_s = both.mean(|x| x.mix_sdr_s);
    let mix_b = both.mean(|x| x.mix_sdr_b);
    let gains = s(both) >= mix_s + SDR_GAIN_DB && b(both) >= mix_b + SDR_GAIN_DB;
    let order = s(sop) < s(both) && b(sop) < b(both) && s(rst) < s(both) && b(rst) < b(both);
    let pass = gains && order && seconds < ABLATION_SECONDS;
    verdict(
        5,
        false,
        pass,
        format!(
            "SDR-S/B sop+rst {:.2}/{:.2} (mixture {mix_s:.2}/{mix_b:.2}), sop {:.2}/{:.2}, rst {:.2}/{:.2}; {seconds:.0} s",
            s(both),
            b(both),
            s(sop),
            b(sop),
            s(rst),
            b(rst)
        ),
    )
}

fn criterion_6(codec: &Codec) -> Verdict {
    let corpus = CorpusConfig::new(codec.config.sample_rate, codec.hop());
    let pairs = held_out_pairs(&corpus, 61, SWAP_PAIRS, EVAL_FRAMES).expect("pairs");
    let r = swap_probe(codec, &pairs).expect("swap probe");
    let f = r.fraction_positive();
    let mean = r.margins.iter().sum::<f64>() / r.margins.len() as f64;
    verdict(6, false, f >= SWAP_FRACTION, format!("{:.1}% of {SWAP_PAIRS} pairs favour the swap, mean margin {mean:.2} dB", 100.0 * f))
}

fn criterion_7(with_sg: &EvalReport, without_sg: &EvalReport) -> Verdict {
    let cos = with_sg.mean(|r| r.sg_cosine);
    let a = with_sg.mean(|r| r.token_agree);
    let b = without_sg.mean(|r| r.token_agree);
    verdict(7, false, cos > SG_COSINE_MIN && a > b, format!("cos(W·Zc, H) {cos:.3}; Zc agreement {a:.3} with SG, {b:.3} without"))
}

fn criterion_8(codec: &Codec, items: &[EvalItem]) -> Verdict {
    let fake = |tag: u32, frames: u32| TokenBundle {
        zc: (0..frames).map(|f| tag * 100 + f).collect(),
        zr: (0..frames).map(|f| vec![tag * 100 + 50 + f]).collect(),
        zb: (0..frames).map(|f| vec![tag * 100 + 70 + f]).collect(),
        fingerprint: 1,
    };
    let rows = [
        (Task::Reconstruction, [1, 1, 1]),
        (Task::SE, [1, 1, 3]),
        (Task::BgsExtraction, [3, 3, 1]),
        (Task::OneShotVC, [1, 2, 1]),
        (Task::OneShotVCSE, [1, 2, 3]),
    ];
    let mut pattern_ok = true;
    for (task, [c, r, b]) in rows {
        let spec = TaskSpec { task, input: fake(1, 6), reference: task.needs_reference().then(|| fake(2, 6)), blank: fake(3, 6) };
        let out = recombine(&spec).expect("recombine");
        pattern_ok &= out.zc == fake(c, 6).zc && out.zr == fake(r, 6).zr && out.zb == fake(b, 6).zb;
    }
    let y = items[0].side.y();
    let tb = codec.encode(y).expect("encode").tokens;
    let recon = run_task(&TaskSpec::new(codec, Task::Reconstruction, tb.clone(), None).expect("spec"), codec, None);
    let vc = run_task(&TaskSpec::new(codec, Task::OneShotVC, tb.clone(), Some(tb)).expect("spec"), codec, None);
    let vc_ok = recon.expect("recon").samples == vc.expect("vc").samples;
    let a100 = align_reference(&fake(0, 100), 60).expect("align").zc == (0..60).collect::<Vec<u32>>();
    let want: Vec<u32> = (0..40).chain(0..40).chain(0..20).collect();
    let a40 = align_reference(&fake(0, 40), 100).expect("align").zc == want;
    let same = align_reference(&fake(0, 40), 40).expect("align") == fake(0, 40);
    let pass = pattern_ok && vc_ok && a100 && a40 && same;
    verdict(8, true, pass, format!("table pattern {pattern_ok}, vc(self) == recon {vc_ok}, alignment {}", a100 && a40 && same))
}

fn criterion_9(a: &Run, b: &Run) -> Verdict {
    let pass = a.log_csv == b.log_csv && a.codec.fingerprint() == b.codec.fingerprint();
    let lines = a.log_csv.lines().count() - 1;
    verdict(9, true, pass, format!("{lines}-step logs identical {}, final fingerprints identical {}", a.log_csv == b.log_csv, a.codec.fingerprint() == b.codec.fingerprint()))
}

fn main() -> ExitCode {
    // Respect libtest's filter arguments: run only when unfiltered or named.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let steps = steps();
    let corpus = CorpusConfig::new(ModelConfig::fast().sample_rate, ModelConfig::fast().hop());
    let items = held_out(&corpus, 17, EVAL_ITEMS, EVAL_FRAMES, 0.0).expect("held-out set");
    let mut verdicts = vec![criterion_1(), criterion_2()];

    let untrained = Codec::new(profile(Variant::SOP_RST, steps).model).expect("codec");
    let untrained_report = evaluate(&untrained, &items, &profile(Variant::SOP_RST, steps).mel_windows).expect("evaluate");
    let ortho = train(profile(Variant::SOP_RST, steps), &items);
    let again = train(profile(Variant::SOP_RST, steps), &items);
    verdicts.push(criterion_3(&ortho.codec));
    verdicts.push(criterion_4(&untrained_report, &ortho));

    let both = train(decoupling(Variant::SOP_RST, steps), &items);
    let sop = train(decoupling(Variant::SOP_ONLY, steps), &items);
    let rst = train(decoupling(Variant::RST_ONLY, steps), &items);
    let ablation_seconds = both.seconds + sop.seconds + rst.seconds;
    let full = train(decoupling(Variant::FULL, steps), &items);
    verdicts.push(criterion_5(&sop.report, &rst.report, &both.report, ablation_seconds));
    verdicts.push(criterion_6(&both.codec));
    verdicts.push(criterion_7(&full.report, &both.report));
    verdicts.push(criterion_8(&both.codec, &items));
    verdicts.push(criterion_9(&ortho, &again));

    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!("acceptance: {passed}/{} PASS in {:.0} s", verdicts.len(), start.elapsed().as_secs_f64());
    let broken: Vec<&Verdict> = verdicts.iter().filter(|v| v.exact && !v.pass).collect();
    for v in &broken {
        println!("exact criterion {} failed: {}", v.id, v.detail);
    }
    if broken.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
