//! Residual vector quantization with straight-through gradients.

mod semantic;

pub use semantic::{mean_sg_cosine, sg_loss, sg_loss_value, ContentTeacher, SemanticTeacher, SgHead};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Steps an entry may go unselected before it is re-seeded.
pub const DEAD_AFTER: u32 = 200;

/// Per-frame nearest entry by squared distance; ties go to the lowest index.
pub fn quantize_stage(residual: &Tensor, table: &Tensor) -> (Vec<u32>, Tensor) {
    let d = table.cols();
    assert_eq!(residual.cols(), d, "quantize: residual width {} vs codebook {:?}", residual.cols(), table.shape());
    let mut idx = Vec::with_capacity(residual.rows());
    let mut q = Tensor::zeros(residual.shape());
    for t in 0..residual.rows() {
        let r = residual.row(t);
        let mut best = (f64::INFINITY, 0usize);
        for (k, e) in table.data().chunks_exact(d).enumerate() {
            let mut dist = 0.0;
            for (a, b) in r.iter().zip(e) {
                dist += (a - b) * (a - b);
            }
            if dist < best.0 {
                best = (dist, k);
            }
        }
        idx.push(best.1 as u32);
        q.row_mut(t).copy_from_slice(table.row(best.1));
    }
    (idx, q)
}

/// Result of running a residual chain over a frame sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RvqEncoding {
    /// `frames × stages`.
    pub tokens: Vec<Vec<u32>>,
    /// `Σ_k Q^k`.
    pub z: Tensor,
    /// `‖residual_k‖` for `k = 0..=stages`, with `residual_0 = X`.
    pub residual_norms: Vec<f64>,
    pub quantized: Vec<Tensor>,
    /// The input of each stage.
    pub residuals: Vec<Tensor>,
}

impl RvqEncoding {
    pub fn frames(&self) -> usize {
        self.z.rows()
    }

    pub fn stage_tokens(&self, k: usize) -> Vec<u32> {
        self.tokens.iter().map(|row| row[k]).collect()
    }
}

pub fn rvq_encode(x: &Tensor, tables: &[&Tensor]) -> RvqEncoding {
    let frames = x.rows();
    let mut residual = x.clone();
    let mut z = Tensor::zeros(x.shape());
    let mut tokens = vec![Vec::with_capacity(tables.len()); frames];
    let mut residual_norms = vec![x.sq_norm().sqrt()];
    let mut quantized = Vec::with_capacity(tables.len());
    let mut residuals = Vec::with_capacity(tables.len());
    for table in tables {
        let (idx, q) = quantize_stage(&residual, table);
        for (row, i) in tokens.iter_mut().zip(&idx) {
            row.push(*i);
        }
        residuals.push(residual.clone());
        for ((r, zv), qv) in residual.data_mut().iter_mut().zip(z.data_mut()).zip(q.data()) {
            *r -= qv;
            *zv += qv;
        }
        residual_norms.push(residual.sq_norm().sqrt());
        quantized.push(q);
    }
    RvqEncoding { tokens, z, residual_norms, quantized, residuals }
}

/// Sum of looked-up entries, the inverse of token assignment.
pub fn lookup(tokens: &[Vec<u32>], tables: &[&Tensor]) -> Result<Tensor> {
    let d = tables.first().map_or(0, |t| t.cols());
    let mut z = Tensor::zeros(&[tokens.len(), d]);
    for (t, row) in tokens.iter().enumerate() {
        if row.len() != tables.len() {
            return Err(Error::Shape(format!("frame {t} has {} tokens for {} stages", row.len(), tables.len())));
        }
        for (k, (&i, table)) in row.iter().zip(tables).enumerate() {
            if i as usize >= table.rows() {
                return Err(Error::Format(format!(
                    "token {i} at frame {t}, stage {k} exceeds codebook size {}",
                    table.rows()
                )));
            }
            for (o, v) in z.row_mut(t).iter_mut().zip(table.row(i as usize)) {
                *o += v;
            }
        }
    }
    Ok(z)
}

/// `(codebook_loss, commitment_loss)` from stage inputs and outputs, both summed over
/// stages of per-element mean squares.
pub fn vq_losses(residuals: &[Tensor], quantized: &[Tensor]) -> (f64, f64) {
    let mut total = 0.0;
    for (r, q) in residuals.iter().zip(quantized) {
        let n = r.len().max(1) as f64;
        total += r.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    }
    (total, total)
}

#[derive(Clone, Debug)]
pub struct Codebook {
    pub entries: ParamId,
    pub size: usize,
    pub dim: usize,
    /// Selections since creation.
    pub usage_counts: Vec<u64>,
    /// Consecutive steps without a selection.
    pub idle_steps: Vec<u32>,
}

/// How a forward pass picks codebook entries.
#[derive(Clone, Copy, Debug)]
pub enum Assignment<'a> {
    /// Nearest entries for the current input.
    Fresh,
    /// Replays a previous encoding: same indices, and the stop-gradient values
    /// (stage inputs, stage outputs, straight-through offsets) recorded at that point. Used by gradient checks, where
    /// the quantizer must behave as a fixed affine map.
    Frozen(&'a FrozenPoint),
}

/// Snapshot of the non-differentiable parts of a quantizer pass.
#[derive(Clone, Debug)]
pub struct FrozenPoint {
    pub encoding: RvqEncoding,
    /// `Z − X` at the snapshot.
    pub offset: Tensor,
    /// `Q¹ − X` at the snapshot.
    pub stage1_offset: Tensor,
}

pub struct RvqOutput {
    /// Straight-through `Z`: forward value `Σ Q^k`, gradient identity to the input.
    pub z: Var,
    /// Straight-through first stage `Q¹`.
    pub stage1: Var,
    pub codebook_loss: Var,
    pub commitment_loss: Var,
    pub frozen: FrozenPoint,
}

impl RvqOutput {
    pub fn encoding(&self) -> &RvqEncoding {
        &self.frozen.encoding
    }
}

#[derive(Clone, Debug)]
pub struct RvqStack {
    pub stages: Vec<Codebook>,
    pub commitment_beta: f64,
    /// Entry 0 of every stage is pinned to the zero vector, which makes residual norms
    /// non-increasing for any input.
    pub zero_entry: bool,
}

impl RvqStack {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        stages: usize,
        size: usize,
        dim: usize,
        commitment_beta: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if size < 2 {
            return Err(Error::Config(format!("{name}: codebook size {size} must be at least 2")));
        }
        if stages == 0 {
            return Err(Error::Config(format!("{name}: at least one stage is required")));
        }
        let stages = (0..stages)
            .map(|k| Codebook {
                entries: store.register_uniform(format!("{name}.stage{k}"), &[size, dim], dim, rng),
                size,
                dim,
                usage_counts: vec![0; size],
                idle_steps: vec![0; size],
            })
            .collect();
        Ok(Self { stages, commitment_beta, zero_entry: false })
    }

    /// Pins entry 0 of every stage to zero. Call again after each parameter update.
    pub fn pin_zero_entry(&mut self, store: &mut ParamStore) {
        self.zero_entry = true;
        self.enforce_zero_entry(store);
    }

    pub fn enforce_zero_entry(&self, store: &mut ParamStore) {
        if self.zero_entry {
            for cb in &self.stages {
                store.tensor_mut(cb.entries).row_mut(0).fill(0.0);
            }
        }
    }

    fn first_free(&self) -> usize {
        usize::from(self.zero_entry)
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn tables<'s>(&self, store: &'s ParamStore) -> Vec<&'s Tensor> {
        self.stages.iter().map(|c| store.tensor(c.entries)).collect()
    }

    pub fn encode(&self, store: &ParamStore, x: &Tensor) -> RvqEncoding {
        rvq_encode(x, &self.tables(store))
    }

    pub fn freeze(&self, store: &ParamStore, x: &Tensor) -> FrozenPoint {
        let encoding = self.encode(store, x);
        let mut offset = encoding.z.clone();
        let mut stage1_offset = encoding.quantized[0].clone();
        for ((o, s1), xv) in offset.data_mut().iter_mut().zip(stage1_offset.data_mut()).zip(x.data()) {
            *o -= xv;
            *s1 -= xv;
        }
        FrozenPoint { encoding, offset, stage1_offset }
    }

    /// Quantizes `x` on the tape. Codebooks receive gradient from the codebook loss only.
    pub fn forward(&self, g: &mut Graph, x: Var, assign: Assignment) -> Result<RvqOutput> {
        let d = self.stages[0].dim;
        if g.value(x).cols() != d {
            return Err(Error::Shape(format!("rvq: input width {} vs codebook dim {d}", g.value(x).cols())));
        }
        let frozen = match assign {
            Assignment::Fresh => self.freeze(g.params(), g.value(x)),
            Assignment::Frozen(p) => {
                if p.encoding.frames() != g.value(x).rows() || p.encoding.tokens.first().map_or(0, |r| r.len()) != self.len() {
                    return Err(Error::Shape("rvq: frozen assignment does not match input".into()));
                }
                p.clone()
            }
        };
        let frames = g.value(x).rows();
        let mut residual = x;
        let mut cb_terms = Vec::with_capacity(self.len());
        let mut commit_terms = Vec::with_capacity(self.len());
        for (k, cb) in self.stages.iter().enumerate() {
            let idx: Vec<usize> = (0..frames).map(|t| frozen.encoding.tokens[t][k] as usize).collect();
            let table = g.param(cb.entries);
            let q_live = g.gather(table, idx);
            let q_sg = g.constant(frozen.encoding.quantized[k].clone());
            let r_sg = match assign {
                Assignment::Fresh => g.detach(residual),
                Assignment::Frozen(_) => g.constant(frozen.encoding.residuals[k].clone()),
            };
            cb_terms.push((g.mean_sq_diff(r_sg, q_live), 1.0));
            commit_terms.push((g.mean_sq_diff(residual, q_sg), 1.0));
            residual = g.sub(residual, q_sg);
        }
        let codebook_loss = g.weighted_sum(cb_terms);
        let commitment_loss = g.weighted_sum(commit_terms);
        let off = g.constant(frozen.offset.clone());
        let z = g.add(x, off);
        let off1 = g.constant(frozen.stage1_offset.clone());
        let stage1 = g.add(x, off1);
        Ok(RvqOutput { z, stage1, codebook_loss, commitment_loss, frozen })
    }

    /// Records which entries were selected during one optimizer step.
    pub fn record_usage(&mut self, encodings: &[&RvqEncoding]) {
        for (k, cb) in self.stages.iter_mut().enumerate() {
            let mut used = vec![false; cb.size];
            for e in encodings {
                for row in &e.tokens {
                    used[row[k] as usize] = true;
                    cb.usage_counts[row[k] as usize] += 1;
                }
            }
            for (idle, u) in cb.idle_steps.iter_mut().zip(used) {
                *idle = if u { 0 } else { idle.saturating_add(1) };
            }
        }
    }

    /// Re-seeds entries idle for [`DEAD_AFTER`] steps with random frames of the stage
    /// inputs in `pool`. Returns `(stage, entry)` pairs that were replaced.
    pub fn reseed_dead<R: Rng>(
        &mut self,
        store: &mut ParamStore,
        pool: &[&RvqEncoding],
        rng: &mut R,
    ) -> Vec<(usize, usize)> {
        let mut replaced = vec![];
        let first = self.first_free();
        for (k, cb) in self.stages.iter_mut().enumerate() {
            let frames: Vec<&[f64]> =
                pool.iter().flat_map(|e| (0..e.residuals[k].rows()).map(move |t| e.residuals[k].row(t))).collect();
            if frames.is_empty() {
                continue;
            }
            for i in first..cb.size {
                if cb.idle_steps[i] >= DEAD_AFTER {
                    let src = frames[rng.random_range(0..frames.len())];
                    store.tensor_mut(cb.entries).row_mut(i).copy_from_slice(src);
                    cb.idle_steps[i] = 0;
                    replaced.push((k, i));
                }
            }
        }
        replaced
    }

    /// Sets every entry from random frames of the data, stage by stage: stage `k`
    /// draws from the residuals left after quantizing with stages `< k`.
    pub fn init_from_data<R: Rng>(&self, store: &mut ParamStore, x: &Tensor, rng: &mut R) {
        let mut residual = x.clone();
        for cb in &self.stages {
            if residual.rows() == 0 {
                return;
            }
            for i in self.first_free()..cb.size {
                let t = rng.random_range(0..residual.rows());
                let src = residual.row(t).to_vec();
                store.tensor_mut(cb.entries).row_mut(i).copy_from_slice(&src);
            }
            let (_, q) = quantize_stage(&residual, store.tensor(cb.entries));
            for (r, v) in residual.data_mut().iter_mut().zip(q.data()) {
                *r -= v;
            }
        }
    }

    /// Mean over stages of the entropy (bits) of the lifetime selection histogram.
    pub fn usage_entropy(&self) -> f64 {
        let mut total = 0.0;
        for cb in &self.stages {
            let n: u64 = cb.usage_counts.iter().sum();
            if n == 0 {
                continue;
            }
            total -= cb
                .usage_counts
                .iter()
                .filter(|c| **c > 0)
                .map(|c| {
                    let p = *c as f64 / n as f64;
                    p * p.log2()
                })
                .sum::<f64>();
        }
        total / self.stages.len().max(1) as f64
    }
}

/// Splits speech tokens into the first stage `Zc` and the remaining stages `Zr`.
/// A single-stage stack yields an empty `Zr` and prints a warning.
pub fn split_tokens(tokens: &[Vec<u32>]) -> (Vec<u32>, Vec<Vec<u32>>) {
    if tokens.first().is_some_and(|r| r.len() < 2) {
        eprintln!("warning: speech quantizer has a single stage; Zr is empty");
    }
    let zc = tokens.iter().map(|r| r[0]).collect();
    let zr = tokens.iter().map(|r| r[1..].to_vec()).collect();
    (zc, zr)
}

pub fn merge_tokens(zc: &[u32], zr: &[Vec<u32>]) -> Vec<Vec<u32>> {
    zc.iter()
        .zip(zr)
        .map(|(c, r)| {
            let mut row = Vec::with_capacity(r.len() + 1);
            row.push(*c);
            row.extend_from_slice(r);
            row
        })
        .collect()
}
