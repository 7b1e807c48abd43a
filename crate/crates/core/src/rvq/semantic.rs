//! Semantic guidance on the first speech stage.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::layers::Linear;
use crate::numerics::{CustomBackward, Graph, ParamStore, Tensor, Var};
use crate::signal::synth::rng_for;
use crate::signal::{SyntheticUtterance, SYMBOLS};

/// Produces a target sequence `frames × dim` at the codec frame rate.
pub trait SemanticTeacher {
    fn dim(&self) -> usize;
    fn produce(&self, clean: &SyntheticUtterance) -> Tensor;
}

/// Fixed random `tanh(W·x + b)` over the 3-frame smoothed one-hot content track.
#[derive(Clone, Debug)]
pub struct ContentTeacher {
    weight: Tensor,
    bias: Vec<f64>,
}

impl ContentTeacher {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = rng_for(seed, 0x7EAC);
        let weight = Tensor::new(&[dim, SYMBOLS], (0..dim * SYMBOLS).map(|_| rng.random_range(-1.5..1.5)).collect())
            .expect("shape");
        let bias = (0..dim).map(|_| rng.random_range(-0.2..0.2)).collect();
        Self { weight, bias }
    }
}

impl SemanticTeacher for ContentTeacher {
    fn dim(&self) -> usize {
        self.bias.len()
    }

    fn produce(&self, clean: &SyntheticUtterance) -> Tensor {
        let track = &clean.content_track;
        let t = track.len();
        let dim = self.dim();
        let mut h = Tensor::zeros(&[t, dim]);
        for f in 0..t {
            let lo = f.saturating_sub(1);
            let hi = (f + 1).min(t - 1);
            let mut x = [0.0; SYMBOLS];
            for s in &track[lo..=hi] {
                x[*s as usize] += 1.0 / (hi - lo + 1) as f64;
            }
            for (j, o) in h.row_mut(f).iter_mut().enumerate() {
                let w = &self.weight.row(j);
                let a: f64 = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + self.bias[j];
                *o = a.tanh();
            }
        }
        h
    }
}

/// `W: Dh × D`, no bias.
#[derive(Clone, Debug)]
pub struct SgHead {
    pub linear: Linear,
}

impl SgHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, teacher_dim: usize, rng: &mut R) -> Self {
        Self { linear: Linear::new(store, name, dim, teacher_dim, false, rng) }
    }

    pub fn forward(&self, g: &mut Graph, zc: Var) -> Result<Var> {
        self.linear.forward(g, zc)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Cos {
    value: f64,
    na: f64,
    nb: f64,
}

fn frame_cos(a: &[f64], b: &[f64]) -> Cos {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let value = if na == 0.0 || nb == 0.0 { 0.0 } else { a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb) };
    Cos { value, na, nb }
}

fn check(p: &Tensor, h: &Tensor) -> Result<()> {
    if p.shape() != h.shape() {
        return Err(Error::Shape(format!("sg: projected {:?} vs teacher {:?}", p.shape(), h.shape())));
    }
    Ok(())
}

/// `(1/T) Σ_t |log σ(cos(P_t, H_t))|` on plain tensors, with `P = W·Zc` already applied.
pub fn sg_loss_value(p: &Tensor, h: &Tensor) -> Result<f64> {
    check(p, h)?;
    let t = p.rows().max(1) as f64;
    Ok((0..p.rows()).map(|f| softplus(-frame_cos(p.row(f), h.row(f)).value)).sum::<f64>() / t)
}

/// Mean per-frame cosine between `P` and `H`.
pub fn mean_sg_cosine(p: &Tensor, h: &Tensor) -> Result<f64> {
    check(p, h)?;
    let t = p.rows().max(1) as f64;
    Ok((0..p.rows()).map(|f| frame_cos(p.row(f), h.row(f)).value).sum::<f64>() / t)
}

/// Semantic-guidance loss of projected frames `p` against constant teacher frames `h`.
pub fn sg_loss(g: &mut Graph, p: Var, h: &Tensor) -> Result<Var> {
    let value = sg_loss_value(g.value(p), h)?;
    Ok(g.custom(vec![p], Tensor::scalar(value), Box::new(SgBackward { h: h.clone() })))
}

struct SgBackward {
    h: Tensor,
}

impl CustomBackward for SgBackward {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let p = inputs[0];
        let frames = p.rows().max(1) as f64;
        let mut dp = Tensor::zeros(p.shape());
        for f in 0..p.rows() {
            let (a, b) = (p.row(f), self.h.row(f));
            let c = frame_cos(a, b);
            if c.na == 0.0 || c.nb == 0.0 {
                continue;
            }
            // d softplus(-c)/dc = -σ(-c)
            let k = -sigmoid(-c.value) * grad.item() / frames;
            for ((o, av), bv) in dp.row_mut(f).iter_mut().zip(a).zip(b) {
                *o = k * (bv / (c.na * c.nb) - c.value * av / (c.na * c.na));
            }
        }
        vec![Some(dp)]
    }
}
