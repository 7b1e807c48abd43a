//! Subspace orthogonal projection: two learned square maps splitting an embedding
//! sequence into speech and background parts, and diagnostics of how orthogonal they are.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{CustomBackward, Graph, ParamId, ParamStore, Tensor, Var};

/// Half-width of the uniform noise added to the `½I` initialization.
pub const INIT_NOISE: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct ProjectionPair {
    pub p_s: ParamId,
    /// `None` when tied: `P_N = I − P_S`.
    pub p_n: Option<ParamId>,
    pub dim: usize,
}

impl ProjectionPair {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, tied: bool, rng: &mut R) -> Self {
        let init = |rng: &mut R| {
            let mut t = Tensor::zeros(&[dim, dim]);
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v = if i / dim == i % dim { 0.5 } else { 0.0 } + rng.random_range(-INIT_NOISE..INIT_NOISE);
            }
            t
        };
        let p_s = store.register(format!("{name}.p_s"), init(rng));
        let p_n = (!tied).then(|| store.register(format!("{name}.p_n"), init(rng)));
        Self { p_s, p_n, dim }
    }

    pub fn tied(&self) -> bool {
        self.p_n.is_none()
    }

    /// `S = Y·P_Sᵀ`, `N = Y·P_Nᵀ`, frame by frame.
    pub fn project(&self, g: &mut Graph, y: Var) -> Result<(Var, Var)> {
        let d = g.value(y).cols();
        if d != self.dim {
            return Err(Error::Config(format!("sop: embedding width {d}, projections are {0}×{0}", self.dim)));
        }
        let ps = g.param(self.p_s);
        let s = g.linear(y, ps, None);
        let n = match self.p_n {
            Some(id) => {
                let pn = g.param(id);
                g.linear(y, pn, None)
            }
            None => g.sub(y, s),
        };
        Ok((s, n))
    }

    /// `(P_S, P_N)` as plain matrices.
    pub fn matrices(&self, store: &ParamStore) -> (Tensor, Tensor) {
        let ps = store.tensor(self.p_s).clone();
        let pn = match self.p_n {
            Some(id) => store.tensor(id).clone(),
            None => {
                let mut t = ps.clone();
                for (i, v) in t.data_mut().iter_mut().enumerate() {
                    *v = if i / self.dim == i % self.dim { 1.0 } else { 0.0 } - *v;
                }
                t
            }
        };
        (ps, pn)
    }
}

/// Frame-wise projection outside the tape.
pub fn project(y: &Tensor, p_s: &Tensor, p_n: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = y.cols();
    if p_s.shape() != [d, d] || p_n.shape() != [d, d] {
        return Err(Error::Config(format!(
            "sop: embedding width {d} vs projections {:?} / {:?}",
            p_s.shape(),
            p_n.shape()
        )));
    }
    let apply = |p: &Tensor| {
        let mut out = Tensor::zeros(&[y.rows(), d]);
        for t in 0..y.rows() {
            let yt = y.row(t);
            for (o, prow) in out.row_mut(t).iter_mut().zip(p.data().chunks_exact(d)) {
                *o = prow.iter().zip(yt).map(|(a, b)| a * b).sum();
            }
        }
        out
    };
    Ok((apply(p_s), apply(p_n)))
}

fn frame_dots(s: &Tensor, n: &Tensor) -> Vec<f64> {
    (0..s.rows()).map(|t| s.row(t).iter().zip(n.row(t)).map(|(a, b)| a * b).sum()).collect()
}

/// `sqrt(Σ_t ⟨S_t, N_t⟩²) / T`.
pub fn orthogonality_value(s: &Tensor, n: &Tensor) -> f64 {
    assert_eq!(s.shape(), n.shape(), "orthogonality: shape mismatch");
    let t = s.rows().max(1) as f64;
    frame_dots(s, n).iter().map(|d| d * d).sum::<f64>().sqrt() / t
}

/// Differentiable [`orthogonality_value`].
pub fn orthogonality_loss(g: &mut Graph, s: Var, n: Var) -> Result<Var> {
    let (ts, tn) = (g.value(s), g.value(n));
    if ts.shape() != tn.shape() {
        return Err(Error::Shape(format!("orthogonality: {:?} vs {:?}", ts.shape(), tn.shape())));
    }
    let dots = frame_dots(ts, tn);
    let norm = dots.iter().map(|d| d * d).sum::<f64>().sqrt();
    let frames = ts.rows().max(1) as f64;
    let value = Tensor::scalar(norm / frames);
    Ok(g.custom(vec![s, n], value, Box::new(OrthBackward { dots, norm, frames })))
}

struct OrthBackward {
    dots: Vec<f64>,
    norm: f64,
    frames: f64,
}

impl CustomBackward for OrthBackward {
    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let (s, n) = (inputs[0], inputs[1]);
        if self.norm == 0.0 {
            return vec![Some(Tensor::zeros(s.shape())), Some(Tensor::zeros(n.shape()))];
        }
        let k = grad.item() / (self.frames * self.norm);
        let mut ds = Tensor::zeros(s.shape());
        let mut dn = Tensor::zeros(n.shape());
        for (t, d) in self.dots.iter().enumerate() {
            let c = k * d;
            for (o, v) in ds.row_mut(t).iter_mut().zip(n.row(t)) {
                *o = c * v;
            }
            for (o, v) in dn.row_mut(t).iter_mut().zip(s.row(t)) {
                *o = c * v;
            }
        }
        vec![Some(ds), Some(dn)]
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Mean over frames of `|cos(S_t, N_t)|`; zero-norm frames count as 0.
pub fn mean_abs_frame_cosine(s: &Tensor, n: &Tensor) -> f64 {
    assert_eq!(s.shape(), n.shape());
    let t = s.rows();
    if t == 0 {
        return 0.0;
    }
    (0..t).map(|i| cosine(s.row(i), n.row(i)).abs()).sum::<f64>() / t as f64
}

/// `‖Y − (S + N)‖_F / ‖Y‖_F`, how far the pair is from an exact additive split.
pub fn split_residual(y: &Tensor, s: &Tensor, n: &Tensor) -> f64 {
    let num: f64 = y.data().iter().zip(s.data()).zip(n.data()).map(|((a, b), c)| (a - b - c).powi(2)).sum();
    let den = y.sq_norm();
    if den == 0.0 {
        return 0.0;
    }
    (num / den).sqrt()
}

#[derive(Clone, Debug)]
pub struct ProjectorReport {
    /// Mean `|cos|` between row `i` of `P_S` and row `i` of `P_N`.
    pub mean_abs_cosine: f64,
    /// The same over every pair of rows `(i, j)`.
    pub all_pairs_mean_abs_cosine: f64,
    pub row_cosines: Vec<f64>,
    pub singular_values_s: Vec<f64>,
    pub singular_values_n: Vec<f64>,
}

impl ProjectorReport {
    /// Counts of `|cos|` for corresponding rows in `bins` equal bins over `[0, 1]`.
    pub fn histogram(&self, bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins.max(1)];
        for c in &self.row_cosines {
            let b = ((c.abs() * bins as f64) as usize).min(bins - 1);
            h[b] += 1;
        }
        h
    }

    /// Plain-text listing: summary lines, then histogram bins and both spectra.
    pub fn to_csv(&self, bins: usize) -> String {
        let mut out = String::new();
        out.push_str(&format!("mean_abs_cosine,{:.9}\n", self.mean_abs_cosine));
        out.push_str(&format!("all_pairs_mean_abs_cosine,{:.9}\n", self.all_pairs_mean_abs_cosine));
        out.push_str("bin_lo,bin_hi,count\n");
        for (i, c) in self.histogram(bins).iter().enumerate() {
            out.push_str(&format!("{:.4},{:.4},{c}\n", i as f64 / bins as f64, (i + 1) as f64 / bins as f64));
        }
        out.push_str("index,sigma_s,sigma_n\n");
        for (i, (a, b)) in self.singular_values_s.iter().zip(&self.singular_values_n).enumerate() {
            out.push_str(&format!("{i},{a:.9},{b:.9}\n"));
        }
        out
    }
}

pub fn projector_orthogonality_report(p_s: &Tensor, p_n: &Tensor) -> ProjectorReport {
    let d = p_s.rows();
    let row_cosines: Vec<f64> = (0..d).map(|i| cosine(p_s.row(i), p_n.row(i))).collect();
    let mean_abs_cosine = row_cosines.iter().map(|c| c.abs()).sum::<f64>() / d.max(1) as f64;
    let mut all = 0.0;
    for i in 0..d {
        for j in 0..d {
            all += cosine(p_s.row(i), p_n.row(j)).abs();
        }
    }
    ProjectorReport {
        mean_abs_cosine,
        all_pairs_mean_abs_cosine: all / (d * d).max(1) as f64,
        row_cosines,
        singular_values_s: singular_values(p_s),
        singular_values_n: singular_values(p_n),
    }
}

/// One-sided Jacobi SVD; singular values in descending order.
pub fn singular_values(a: &Tensor) -> Vec<f64> {
    let (m, n) = (a.rows(), a.cols());
    // Columns of `a`, stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..m).map(|i| a.row(i)[j]).collect()).collect();
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt());
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (x, y) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// `‖P_S·Ĉ·P_Nᵀ‖_F` with `Ĉ = YᵀY / T` the frame second-moment matrix.
pub fn gram_norm(y: &Tensor, p_s: &Tensor, p_n: &Tensor) -> f64 {
    let d = y.cols();
    let t = y.rows().max(1) as f64;
    let mut c = vec![0.0; d * d];
    for r in 0..y.rows() {
        let row = y.row(r);
        for i in 0..d {
            for j in 0..d {
                c[i * d + j] += row[i] * row[j] / t;
            }
        }
    }
    // P_S·Ĉ, then (P_S·Ĉ)·P_Nᵀ.
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let v = p_s.row(i)[k];
            for j in 0..d {
                a[i * d + j] += v * c[k * d + j];
            }
        }
    }
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| a[i * d + k] * p_n.row(j)[k]).sum();
            total += v * v;
        }
    }
    total.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    fn eye(d: usize, k: f64) -> Tensor {
        let mut e = Tensor::zeros(&[d, d]);
        for i in 0..d {
            e.data_mut()[i * d + i] = k;
        }
        e
    }

    #[test]
    fn identity_and_zero_projectors() {
        let y = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let (s, n) = project(&y, &eye(3, 1.0), &eye(3, 0.0)).unwrap();
        assert_eq!(s, y);
        assert!(n.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn half_identity_splits_exactly() {
        let y = t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        let (s, n) = project(&y, &eye(3, 0.5), &eye(3, 0.5)).unwrap();
        assert_eq!(s, n);
        assert_eq!(split_residual(&y, &s, &n), 0.0);
    }

    #[test]
    fn dimension_mismatch_is_a_config_error() {
        let y = Tensor::zeros(&[2, 3]);
        assert!(matches!(project(&y, &eye(2, 1.0), &eye(2, 1.0)), Err(Error::Config(_))));
    }

    #[test]
    fn orthogonality_hand_cases() {
        assert_eq!(orthogonality_value(&t(&[1, 2], &[1.0, 0.0]), &t(&[1, 2], &[0.0, 1.0])), 0.0);
        assert_eq!(orthogonality_value(&t(&[1, 2], &[1.0, 0.0]), &t(&[1, 2], &[1.0, 0.0])), 1.0);
        // Inner products 3 and 4: norm 5, over two frames 2.5.
        let s = t(&[2, 1], &[3.0, 4.0]);
        let n = t(&[2, 1], &[1.0, 1.0]);
        assert_eq!(orthogonality_value(&s, &n), 2.5);
    }

    #[test]
    fn orthogonality_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Tensor::new(&[5, 4], (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let n0 = Tensor::new(&[5, 4], (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let r = grad_check(
            |g, s| {
                let n = g.constant(n0.clone());
                orthogonality_loss(g, s, n)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn tied_pair_sums_to_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pp = ProjectionPair::new(&mut store, "sop", 4, true, &mut rng);
        let (ps, pn) = pp.matrices(&store);
        for i in 0..16 {
            let want = if i / 4 == i % 4 { 1.0 } else { 0.0 };
            assert!((ps.data()[i] + pn.data()[i] - want).abs() < 1e-15);
        }
        let y = Tensor::new(&[3, 4], (0..12).map(|i| i as f64 * 0.1).collect()).unwrap();
        let mut g = Graph::new(&store);
        let yv = g.input(y.clone());
        let (s, n) = pp.project(&mut g, yv).unwrap();
        assert!(split_residual(&y, g.value(s), g.value(n)) < 1e-15);
    }

    #[test]
    fn zero_partner_gives_zero_cosines() {
        let r = projector_orthogonality_report(&eye(4, 1.0), &eye(4, 0.0));
        assert!(r.row_cosines.iter().all(|c| *c == 0.0));
        assert_eq!(r.mean_abs_cosine, 0.0);
        assert_eq!(r.singular_values_s, vec![1.0; 4]);
        assert_eq!(r.singular_values_n, vec![0.0; 4]);
    }

    #[test]
    fn jacobi_matches_a_known_spectrum() {
        // [[3, 0], [4, 5]] has singular values sqrt(45) and sqrt(5).
        let sv = singular_values(&t(&[2, 2], &[3.0, 0.0, 4.0, 5.0]));
        assert!((sv[0] - 45f64.sqrt()).abs() < 1e-12);
        assert!((sv[1] - 5f64.sqrt()).abs() < 1e-12);
    }
}
