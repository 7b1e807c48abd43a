use crate::numerics::{ParamGrads, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    /// Per-step multiplicative decay of the learning rate.
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, gamma: 0.999996, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-4, clip_norm: Some(5.0) }
    }
}

impl AdamWConfig {
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr * self.gamma.powf(step as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { lr: f64, grad_norm: f64 },
    /// Non-finite gradient; parameters untouched.
    Skipped,
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    /// Updates applied so far.
    pub step: u64,
    pub skipped: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect::<Vec<_>>();
        Self { config, step: 0, skipped: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &mut ParamGrads) -> StepOutcome {
        if !grads.is_finite() {
            self.skipped += 1;
            return StepOutcome::Skipped;
        }
        let c = &self.config;
        let grad_norm = grads.global_norm();
        if let Some(max) = c.clip_norm {
            if grad_norm > max {
                grads.scale(max / grad_norm);
            }
        }
        let lr = c.lr_at(self.step);
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let i = id.index();
            let p = store.tensor_mut(id);
            let decay = 1.0 - lr * c.weight_decay;
            match grads.get(id) {
                Some(g) => {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for (((p, g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let upd = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                        *p = *p * decay - lr * upd;
                    }
                }
                None => {
                    // Moments still decay; a parameter without gradient only shrinks.
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    for ((p, m), v) in p.data_mut().iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m *= c.beta1;
                        *v *= c.beta2;
                        let upd = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                        *p = *p * decay - lr * upd;
                    }
                }
            }
        }
        StepOutcome::Applied { lr, grad_norm }
    }

    /// Clears the moment estimates of one row of a matrix parameter.
    pub fn reset_row(&mut self, id: ParamId, row: usize) {
        self.m[id.index()].row_mut(row).fill(0.0);
        self.v[id.index()].row_mut(row).fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("w", Tensor::new(&[v.len()], v.to_vec()).unwrap());
        (s, id)
    }

    #[test]
    fn schedule() {
        let c = AdamWConfig::default();
        assert_eq!(c.lr_at(0), 1e-4);
        assert!((c.lr_at(1_000_000) - 1.83e-6).abs() < 0.01e-6, "{}", c.lr_at(1_000_000));
        let want = 1e-4 * (1_000_000.0 * 0.999996f64.ln()).exp();
        assert!((c.lr_at(1_000_000) - want).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_applies_only_weight_decay() {
        let (mut s, id) = store(&[2.0, -1.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::zeros(&[2]));
        opt.update(&mut s, &mut g);
        let k = 1.0 - 1e-4 * 1e-4;
        assert_eq!(s.tensor(id).data(), &[2.0 * k, -k]);
    }

    #[test]
    fn first_step_moves_by_lr_against_the_sign() {
        let (mut s, id) = store(&[0.0, 0.0]);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::new(&[2], vec![3.0, -0.5]).unwrap());
        assert_eq!(opt.update(&mut s, &mut g), StepOutcome::Applied { lr: 1e-4, grad_norm: (9.25f64).sqrt() });
        for (p, want) in s.tensor(id).data().iter().zip([-1e-4, 1e-4]) {
            assert!((p - want).abs() < 1e-11);
        }
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let (mut s, id) = store(&[1.0]);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::new(&[1], vec![f64::NAN]).unwrap());
        assert_eq!(opt.update(&mut s, &mut g), StepOutcome::Skipped);
        assert_eq!(s.tensor(id).data(), &[1.0]);
        assert_eq!((opt.step, opt.skipped), (0, 1));
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let (mut s, id) = store(&[0.0; 3]);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let mut g = ParamGrads::new(1);
        g.accumulate(id, &Tensor::new(&[3], vec![30.0, 40.0, 0.0]).unwrap());
        opt.update(&mut s, &mut g);
        assert!((g.global_norm() - 5.0).abs() < 1e-12);
    }
}
