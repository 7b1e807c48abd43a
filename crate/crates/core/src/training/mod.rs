//! Swap training: paired mixtures, the weighted loss, AdamW, the trainer loop,
//! held-out evaluation and the ablation runner.

mod data;
mod eval;
mod optim;
mod step;
mod trainer;

pub use data::{held_out, held_out_pairs, EvalItem, PairSampler, Side, TrainPair};
pub use eval::{evaluate, run_ablation, swap_probe, AblationRow, EvalReport, EvalRow, SwapReport, EVAL_COLUMNS};
pub use optim::{AdamW, AdamWConfig, StepOutcome};
pub use step::{
    build_step, gradcheck_config, gradcheck_terms, rst_step, FrozenPair, StepAux, StepVars, TermCheck, GRADCHECK_TERMS,
};
pub use trainer::{LogRow, TrainConfig, Trainer, LOG_COLUMNS};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub rst: f64,
    pub sg: f64,
    pub perp: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { rst: 500.0, sg: 150.0, perp: 10.0, recon: 10.0, codebook: 1.0, commit: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("w_rst", self.rst),
            ("w_sg", self.sg),
            ("w_perp", self.perp),
            ("w_recon", self.recon),
            ("w_codebook", self.codebook),
            ("w_commit", self.commit),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss terms of one step. `commit` already includes `commitment_beta`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub rst: f64,
    pub sg: f64,
    pub perp: f64,
    pub recon: f64,
    pub codebook: f64,
    pub commit: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    pub fn values(&self) -> [f64; 6] {
        [self.rst, self.sg, self.perp, self.recon, self.codebook, self.commit]
    }

    pub fn add(&mut self, o: &LossBreakdown) {
        self.rst += o.rst;
        self.sg += o.sg;
        self.perp += o.perp;
        self.recon += o.recon;
        self.codebook += o.codebook;
        self.commit += o.commit;
    }

    pub fn scale(&mut self, k: f64) {
        for v in [&mut self.rst, &mut self.sg, &mut self.perp, &mut self.recon, &mut self.codebook, &mut self.commit] {
            *v *= k;
        }
    }
}

pub fn total_loss(b: &LossBreakdown, w: &LossWeights) -> f64 {
    w.rst * b.rst + w.sg * b.sg + w.perp * b.perp + w.recon * b.recon + w.codebook * b.codebook + w.commit * b.commit
}

/// Which ingredients a training run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    /// Orthogonality penalty on the projections.
    pub sop: bool,
    /// Swapped pairs; without it every pair is identical.
    pub rst: bool,
    /// Semantic guidance on the first speech stage.
    pub sg: bool,
}

impl Variant {
    pub const SOP_ONLY: Self = Self { sop: true, rst: false, sg: false };
    pub const RST_ONLY: Self = Self { sop: false, rst: true, sg: false };
    pub const SOP_RST: Self = Self { sop: true, rst: true, sg: false };
    pub const FULL: Self = Self { sop: true, rst: true, sg: true };
    pub const ALL: [Self; 4] = [Self::SOP_ONLY, Self::RST_ONLY, Self::SOP_RST, Self::FULL];

    pub fn name(&self) -> &'static str {
        match (self.sop, self.rst, self.sg) {
            (true, false, false) => "sop",
            (false, true, false) => "rst",
            (true, true, false) => "sop_rst",
            (true, true, true) => "full",
            (false, false, false) => "plain",
            (false, false, true) => "sg",
            (true, false, true) => "sop_sg",
            (false, true, true) => "rst_sg",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        [Self::SOP_ONLY, Self::RST_ONLY, Self::SOP_RST, Self::FULL]
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown variant {name:?} (sop, rst, sop_rst, full)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights_sum() {
        let ones = LossBreakdown { rst: 1.0, sg: 1.0, perp: 1.0, recon: 1.0, codebook: 1.0, commit: 1.0 };
        assert_eq!(total_loss(&ones, &LossWeights::default()), 681.0);
        assert_eq!(total_loss(&LossBreakdown::default(), &LossWeights::default()), 0.0);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
    }
}
