use super::data::{EvalItem, TrainPair};
use super::trainer::{TrainConfig, Trainer};
use super::Variant;
use crate::codec::{Codec, Encoded};
use crate::error::Result;
use crate::numerics::{Graph, Tensor};
use crate::rvq::{mean_sg_cosine, SemanticTeacher};
use crate::signal::{mel_distance, sdr, SyntheticUtterance, Waveform};
use crate::sop::mean_abs_frame_cosine;

pub const EVAL_COLUMNS: &[&str] = &["item", "SDR_O", "SDR_S", "SDR_B", "MEL_DIST", "L_PERP", "TOKEN_AGREE"];

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub item: usize,
    /// Reconstruction of the mixture.
    pub sdr_o: f64,
    /// `decode(Zs, 0)` against the clean speech.
    pub sdr_s: f64,
    /// `decode(0, Zn)` against the scaled background.
    pub sdr_b: f64,
    pub mel_dist: f64,
    /// Mean per-frame `|cos(S_t, N_t)|`.
    pub l_perp: f64,
    /// Fraction of frames whose `Zc` token is the same for clean speech and the mixture.
    pub token_agree: f64,
    /// `sdr(s, y)`.
    pub mix_sdr_s: f64,
    /// `sdr(alpha·n, y)`.
    pub mix_sdr_b: f64,
    /// Mean `cos(W·Zc, H)` on the mixture.
    pub sg_cosine: f64,
    /// Fraction of speech tokens equal between the mixture and the same speech over another background.
    pub speech_token_stability: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn mean(&self, f: impl Fn(&EvalRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// The frozen-column metrics CSV with a trailing `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = EVAL_COLUMNS.join(",");
        s.push('\n');
        let line = |name: String, r: [f64; 6]| {
            let v: Vec<String> = r.iter().map(|x| format!("{x:.6}")).collect();
            format!("{name},{}\n", v.join(","))
        };
        for r in &self.rows {
            s.push_str(&line(r.item.to_string(), [r.sdr_o, r.sdr_s, r.sdr_b, r.mel_dist, r.l_perp, r.token_agree]));
        }
        s.push_str(&line(
            "mean".into(),
            [
                self.mean(|r| r.sdr_o),
                self.mean(|r| r.sdr_s),
                self.mean(|r| r.sdr_b),
                self.mean(|r| r.mel_dist),
                self.mean(|r| r.l_perp),
                self.mean(|r| r.token_agree),
            ],
        ));
        s
    }
}

fn sg_projection_cosine(codec: &Codec, e: &Encoded, clean: &SyntheticUtterance) -> Result<f64> {
    let mut g = Graph::new(&codec.store);
    let zc = g.input(e.speech.quantized[0].clone());
    let p = codec.sg_head.forward(&mut g, zc)?;
    mean_sg_cosine(g.value(p), &codec.teacher.produce(clean))
}

fn agreement(a: &[Vec<u32>], b: &[Vec<u32>]) -> f64 {
    let (mut same, mut total) = (0usize, 0usize);
    for (x, y) in a.iter().zip(b) {
        same += x.iter().zip(y).filter(|(p, q)| p == q).count();
        total += x.len();
    }
    same as f64 / total.max(1) as f64
}

pub fn evaluate(codec: &Codec, items: &[EvalItem], mel_windows: &[usize]) -> Result<EvalReport> {
    let rows = items
        .iter()
        .enumerate()
        .map(|(item, it)| {
            let side = &it.side;
            let (y, s) = (side.y(), side.speech());
            let bg = side.scaled_background();
            let len = y.len();
            let e = codec.encode(y)?;
            let zero = Tensor::zeros(e.zs.shape());
            let y_hat = codec.decode_to(&e.zs, &e.zn, len)?;
            let s_hat = codec.decode_to(&e.zs, &zero, len)?;
            let b_hat = codec.decode_to(&zero, &e.zn, len)?;
            let clean = codec.encode(s)?;
            let frames = e.tokens.frames();
            let same = (0..frames).filter(|t| e.tokens.zc[*t] == clean.tokens.zc[*t]).count();
            let alt = Waveform::new(
                s.samples.iter().zip(&it.alt_background.samples).map(|(a, b)| a + side.mixture.alpha * b).collect(),
                s.sample_rate,
            );
            let e_alt = codec.encode(&alt)?;
            Ok(EvalRow {
                item,
                sdr_o: sdr(y, &y_hat),
                sdr_s: sdr(s, &s_hat),
                sdr_b: sdr(&bg, &b_hat),
                mel_dist: mel_distance(y, &y_hat, mel_windows)?,
                l_perp: mean_abs_frame_cosine(&e.s, &e.n),
                token_agree: same as f64 / frames.max(1) as f64,
                mix_sdr_s: sdr(s, y),
                mix_sdr_b: sdr(&bg, y),
                sg_cosine: sg_projection_cosine(codec, &e, &side.clean)?,
                speech_token_stability: agreement(&e.speech.tokens, &e_alt.speech.tokens),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapReport {
    /// Per pair `sdr(s1 + n2, ŷ12) − sdr(y11, ŷ12)`.
    pub margins: Vec<f64>,
}

impl SwapReport {
    pub fn fraction_positive(&self) -> f64 {
        self.margins.iter().filter(|m| **m > 0.0).count() as f64 / self.margins.len().max(1) as f64
    }
}

/// Decodes speech of the first mixture with background of the second.
pub fn swap_probe(codec: &Codec, pairs: &[TrainPair]) -> Result<SwapReport> {
    let margins = pairs
        .iter()
        .map(|p| {
            let e1 = codec.encode(p.first.y())?;
            let e2 = codec.encode(p.second.y())?;
            let out = codec.decode_to(&e1.zs, &e2.zn, p.first.y().len())?;
            Ok(sdr(&p.swap_target(), &out) - sdr(p.first.y(), &out))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SwapReport { margins })
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: EvalReport,
    pub codec: Codec,
}

/// Trains each variant from the same seed and evaluates it on `items`.
pub fn run_ablation(base: &TrainConfig, variants: &[Variant], items: &[EvalItem]) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let mut t = Trainer::new(TrainConfig { variant, ..base.clone() })?;
            t.run(None, |_, _| {})?;
            let report = evaluate(&t.codec, items, &base.mel_windows)?;
            Ok(AblationRow { variant, report, codec: t.codec })
        })
        .collect()
}
