//! Central-difference verification of tape gradients.

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// `max |analytic − fd| / max(|analytic|, |fd|, floor)` over probed coordinates.
    pub max_rel_error: f64,
    /// Magnitude below which a derivative is not resolvable by central differences in
    /// f64 at this `eps`: `max(1e-8, 1e-10·|f|/eps)`.
    pub floor: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coords: usize,
}

impl GradCheck {
    fn new(f0: f64, eps: f64) -> Self {
        let floor = (1e-10 * f0.abs() / eps).max(1e-8);
        Self { max_rel_error: 0.0, floor, worst_coord: 0, analytic: 0.0, numeric: 0.0, coords: 0 }
    }

    fn record(&mut self, i: usize, analytic: f64, numeric: f64) {
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(self.floor);
        self.coords += 1;
        if rel > self.max_rel_error || self.coords == 1 {
            self.max_rel_error = rel.max(self.max_rel_error);
            self.worst_coord = i;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }

    pub fn merge(&mut self, other: &GradCheck) {
        if other.max_rel_error > self.max_rel_error {
            self.floor = other.floor;
            self.max_rel_error = other.max_rel_error;
            self.worst_coord = other.worst_coord;
            self.analytic = other.analytic;
            self.numeric = other.numeric;
        }
        self.coords += other.coords;
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-6, 1e-3]")));
    }
    Ok(())
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("grad_check: f = {v} at {what}")))
    }
}

/// Checks the gradient of a scalar function of `point`.
pub fn grad_check<F>(f: F, point: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_in(&ParamStore::new(), f, point, eps)
}

/// [`grad_check`] for a function that also reads parameters from `store`.
pub fn grad_check_in<F>(store: &ParamStore, f: F, point: &Tensor, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    check_eps(eps)?;
    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new(store);
        let x = g.input(t.clone());
        let y = f(&mut g, x)?;
        Ok(g.value(y).item())
    };
    let (f0, analytic) = {
        let mut g = Graph::new(store);
        let x = g.input(point.clone());
        let y = f(&mut g, x)?;
        let f0 = finite(g.value(y).item(), "base point")?;
        let grads = g.backward(y);
        (f0, grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape())))
    };
    let mut report = GradCheck::new(f0, eps);
    let mut probe = point.clone();
    for i in 0..point.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = finite(eval(&probe)?, &format!("coordinate {i} + eps"))?;
        probe.data_mut()[i] = orig - eps;
        let minus = finite(eval(&probe)?, &format!("coordinate {i} - eps"))?;
        probe.data_mut()[i] = orig;
        report.record(i, analytic.data()[i], (plus - minus) / (2.0 * eps));
    }
    Ok(report)
}

/// Checks the gradient of a scalar function of model parameters. Coordinates are
/// numbered consecutively across `ids` in the given order. `stride` > 1 probes every
/// `stride`-th coordinate only.
pub fn grad_check_params<F>(store: &ParamStore, ids: &[ParamId], f: F, eps: f64, stride: usize) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    check_eps(eps)?;
    let (f0, grads) = {
        let mut g = Graph::new(store);
        let y = f(&mut g)?;
        let f0 = finite(g.value(y).item(), "base point")?;
        (f0, g.backward(y).params)
    };
    let mut work = store.clone();
    let mut report = GradCheck::new(f0, eps);
    let mut coord = 0;
    for &id in ids {
        let n = store.tensor(id).len();
        for i in 0..n {
            let here = coord;
            coord += 1;
            if here % stride.max(1) != 0 {
                continue;
            }
            let orig = store.tensor(id).data()[i];
            work.tensor_mut(id).data_mut()[i] = orig + eps;
            let plus = {
                let mut g = Graph::new(&work);
                let y = f(&mut g)?;
                finite(g.value(y).item(), &format!("{}[{i}] + eps", store.get(id).name))?
            };
            work.tensor_mut(id).data_mut()[i] = orig - eps;
            let minus = {
                let mut g = Graph::new(&work);
                let y = f(&mut g)?;
                finite(g.value(y).item(), &format!("{}[{i}] - eps", store.get(id).name))?
            };
            work.tensor_mut(id).data_mut()[i] = orig;
            let a = grads.get(id).map_or(0.0, |t| t.data()[i]);
            report.record(here, a, (plus - minus) / (2.0 * eps));
        }
    }
    Ok(report)
}
