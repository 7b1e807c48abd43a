//! One swap-training step as a tape, and finite-difference checks of its terms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{PairSampler, TrainPair};
use super::{LossBreakdown, Variant};
use crate::codec::{Codec, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{grad_check_in, grad_check_params, GradCheck, Graph, ParamGrads, Tensor, Var};
use crate::rvq::{mean_sg_cosine, sg_loss, Assignment, FrozenPoint, RvqEncoding, RvqOutput, SemanticTeacher};
use crate::signal::{CorpusConfig, MelAnalyzer};
use crate::sop::{mean_abs_frame_cosine, orthogonality_loss};

/// Scalar nodes of one step. `sg` is absent when the variant disables guidance.
pub struct StepVars {
    pub rst: Var,
    pub recon: Var,
    pub perp: Var,
    pub sg: Option<Var>,
    pub codebook: Var,
    pub commit: Var,
    pub total: Var,
    pub speech: RvqOutput,
    pub background: RvqOutput,
    /// `(S1, N1)` projections of the first mixture.
    pub s1: Var,
    pub n1: Var,
    pub sg_projection: Option<Var>,
}

/// Quantizer snapshots for both branches, replayed by gradient checks.
#[derive(Clone, Copy)]
pub struct FrozenPair<'a> {
    pub speech: &'a FrozenPoint,
    pub background: &'a FrozenPoint,
}

/// Builds `Y11, Y22 → S1, N2 → Zs1, Zn2 → ŷ12` and every loss term.
/// `x1` replaces the first mixture input when given.
pub fn build_step(
    codec: &Codec,
    g: &mut Graph,
    mel: &MelAnalyzer,
    pair: &TrainPair,
    variant: Variant,
    frozen: Option<FrozenPair>,
    x1: Option<Var>,
) -> Result<StepVars> {
    let len = pair.first.y().len();
    if pair.second.y().len() != len {
        return Err(Error::Shape(format!("pair lengths differ: {len} vs {}", pair.second.y().len())));
    }
    let x1 = match x1 {
        Some(v) => v,
        None => g.input(codec.pad(&pair.first.y().samples)),
    };
    let a1 = codec.analyze(g, x1)?;
    let a2 = if pair.identical {
        a1
    } else {
        let x2 = g.input(codec.pad(&pair.second.y().samples));
        codec.analyze(g, x2)?
    };
    let (fs, fn_) = match frozen {
        Some(f) => (Assignment::Frozen(f.speech), Assignment::Frozen(f.background)),
        None => (Assignment::Fresh, Assignment::Fresh),
    };
    let speech = codec.srvq.forward(g, a1.s, fs)?;
    let background = codec.nrvq.forward(g, a2.n, fn_)?;
    let out = codec.decode_graph(g, speech.z, background.z)?;
    let out = g.crop_rows(out, len);
    let target = pair.swap_target();
    let tgt = g.constant(Tensor::new(&[len, 1], target.samples.clone())?);
    let rst = g.mean_abs_diff(out, tgt);
    let recon = mel.loss(g, out, &target.samples)?;
    let perp = if pair.identical {
        orthogonality_loss(g, a1.s, a1.n)?
    } else {
        let p1 = orthogonality_loss(g, a1.s, a1.n)?;
        let p2 = orthogonality_loss(g, a2.s, a2.n)?;
        g.weighted_sum(vec![(p1, 0.5), (p2, 0.5)])
    };
    let (sg, sg_projection) = if variant.sg {
        let h = codec.teacher.produce(&pair.first.clean);
        let p = codec.sg_head.forward(g, speech.stage1)?;
        (Some(sg_loss(g, p, &h)?), Some(p))
    } else {
        (None, None)
    };
    let codebook = g.weighted_sum(vec![(speech.codebook_loss, 1.0), (background.codebook_loss, 1.0)]);
    let beta = codec.config.commitment_beta;
    let commit = g.weighted_sum(vec![(speech.commitment_loss, beta), (background.commitment_loss, beta)]);
    let w = &codec.config.loss_weights;
    let mut terms = vec![(rst, w.rst), (recon, w.recon), (codebook, w.codebook), (commit, w.commit)];
    if variant.sop {
        terms.push((perp, w.perp));
    }
    if let Some(sg) = sg {
        terms.push((sg, w.sg));
    }
    let total = g.weighted_sum(terms);
    Ok(StepVars { rst, recon, perp, sg, codebook, commit, total, speech, background, s1: a1.s, n1: a1.n, sg_projection })
}

/// What a step leaves behind besides gradients.
#[derive(Clone, Debug)]
pub struct StepAux {
    pub speech: RvqEncoding,
    pub background: RvqEncoding,
    /// Mean per-frame `|cos(S1_t, N1_t)|`.
    pub frame_cosine: f64,
    pub sg_cosine: Option<f64>,
}

/// Loss values, parameter gradients of the weighted total, and the quantizer encodings.
pub fn rst_step(
    codec: &Codec,
    mel: &MelAnalyzer,
    pair: &TrainPair,
    variant: Variant,
) -> Result<(LossBreakdown, ParamGrads, StepAux)> {
    let mut g = Graph::new(&codec.store);
    let v = build_step(codec, &mut g, mel, pair, variant, None, None)?;
    let val = |x: Var| g.value(x).item();
    let b = LossBreakdown {
        rst: val(v.rst),
        sg: v.sg.map_or(0.0, val),
        perp: val(v.perp),
        recon: val(v.recon),
        codebook: val(v.codebook),
        commit: val(v.commit),
    };
    if !b.is_finite() {
        return Err(Error::NonFinite(format!("loss terms {b:?}")));
    }
    let sg_cosine = match v.sg_projection {
        Some(p) => Some(mean_sg_cosine(g.value(p), &codec.teacher.produce(&pair.first.clean))?),
        None => None,
    };
    let aux = StepAux {
        frame_cosine: mean_abs_frame_cosine(g.value(v.s1), g.value(v.n1)),
        sg_cosine,
        speech: v.speech.frozen.encoding.clone(),
        background: v.background.frozen.encoding.clone(),
    };
    let grads = g.backward(v.total).params;
    Ok((b, grads, aux))
}

pub const GRADCHECK_TERMS: [&str; 6] = ["rst", "perp", "sg", "recon", "commit", "codebook"];

#[derive(Clone, Debug)]
pub struct TermCheck {
    pub term: &'static str,
    /// Against the first mixture's samples.
    pub input: GradCheck,
    /// Against a strided subset of every parameter.
    pub params: GradCheck,
}

impl TermCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.input.max_rel_error.max(self.params.max_rel_error)
    }
}

/// The toy model used by gradient checks: `D = 16`, two stages per branch.
/// No pinned zero entry: a stage-1 code of exactly zero is a point where the
/// guidance cosine is undefined, and finite differences straddle it.
pub fn gradcheck_config(seed: u64) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        speech_stages: 2,
        background_stages: 2,
        codebook_size: 8,
        zero_entry: false,
        seed,
        ..ModelConfig::fast()
    }
}

fn pick(v: &StepVars, term: &str) -> Var {
    match term {
        "rst" => v.rst,
        "perp" => v.perp,
        "sg" => v.sg.expect("sg enabled"),
        "recon" => v.recon,
        "commit" => v.commit,
        "codebook" => v.codebook,
        _ => v.total,
    }
}

/// Central-difference checks of each loss term with quantizer assignments frozen at
/// the base point.
pub fn gradcheck_terms(config: &ModelConfig, mel_windows: &[usize], frames: usize, eps: f64) -> Result<Vec<TermCheck>> {
    let mut codec = Codec::new(config.clone())?;
    let corpus = CorpusConfig::new(config.sample_rate, config.hop());
    let mut sampler = PairSampler::new(corpus, frames, config.seed);
    let pair = loop {
        let p = sampler.pair(true)?;
        if !p.identical {
            break p;
        }
    };
    // Spread assignments over the codebooks so every stage sees several entries.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let e1 = codec.encode(pair.first.y())?;
    let e2 = codec.encode(pair.second.y())?;
    let store = &mut codec.store;
    codec.srvq.init_from_data(store, &e1.s, &mut rng);
    codec.nrvq.init_from_data(store, &e2.n, &mut rng);
    let codec = codec;
    let mel = MelAnalyzer::new(config.sample_rate, mel_windows)?;
    let variant = Variant::FULL;
    let (fs, fb) = {
        let mut g = Graph::new(&codec.store);
        let v = build_step(&codec, &mut g, &mel, &pair, variant, None, None)?;
        (v.speech.frozen, v.background.frozen)
    };
    let frozen = FrozenPair { speech: &fs, background: &fb };
    let x0 = codec.pad(&pair.first.y().samples);
    let ids: Vec<_> = codec.store.iter().map(|(id, _)| id).collect();
    let stride = (codec.store.num_scalars() / 400).max(1);
    GRADCHECK_TERMS
        .iter()
        .map(|&term| {
            let input = grad_check_in(
                &codec.store,
                |g, x| Ok(pick(&build_step(&codec, g, &mel, &pair, variant, Some(frozen), Some(x))?, term)),
                &x0,
                eps,
            )?;
            let params = grad_check_params(
                &codec.store,
                &ids,
                |g| Ok(pick(&build_step(&codec, g, &mel, &pair, variant, Some(frozen), None)?, term)),
                eps,
                stride,
            )?;
            Ok(TermCheck { term, input, params })
        })
        .collect()
}
