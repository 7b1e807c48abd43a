//! Raw compute kernels on row-major slices. No graph bookkeeping here.

/// `c = beta * c + a·b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths checked above; strides describe row-major layouts.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = beta * c + a·bᵀ` for `a: m×k`, `b: n×k`.
pub fn matmul_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above; `b` is read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = beta * c + aᵀ·b` for `a: k×m`, `b: k×n`.
pub fn matmul_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], beta: f64) {
    debug_assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above; `a` is read transposed through its strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry shared by a strided convolution and its adjoint.
///
/// Frame `t` of the short side touches long-side sample `t * stride + k - pad_left`
/// for `k` in `0..kernel`. Samples outside `0..long_len` are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub long_len: usize,
    pub short_len: usize,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    #[inline]
    fn source(&self, t: usize, k: usize) -> Option<usize> {
        let i = (t * self.stride + k) as isize - self.pad_left as isize;
        (i >= 0 && (i as usize) < self.long_len).then_some(i as usize)
    }
}

/// Gathers `x: long_len × channels` into `cols: short_len × (channels·kernel)`, column
/// index `c * kernel + k` to match a `[out][in][k]` kernel layout.
pub fn im2col(geom: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (ch, kk) = (geom.channels, geom.kernel);
    let width = ch * kk;
    cols[..geom.short_len * width].fill(0.0);
    for t in 0..geom.short_len {
        let row = &mut cols[t * width..(t + 1) * width];
        for k in 0..kk {
            if let Some(i) = geom.source(t, k) {
                let src = &x[i * ch..(i + 1) * ch];
                for (c, v) in src.iter().enumerate() {
                    row[c * kk + k] = *v;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds `cols` back onto `x`.
pub fn col2im(geom: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let (ch, kk) = (geom.channels, geom.kernel);
    let width = ch * kk;
    for t in 0..geom.short_len {
        let row = &cols[t * width..(t + 1) * width];
        for k in 0..kk {
            if let Some(i) = geom.source(t, k) {
                let dst = &mut x[i * ch..(i + 1) * ch];
                for (c, v) in dst.iter_mut().enumerate() {
                    *v += row[c * kk + k];
                }
            }
        }
    }
}

pub fn add_bias_rows(out: &mut [f64], bias: &[f64]) {
    let n = bias.len();
    for row in out.chunks_exact_mut(n) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

pub fn col_sums(x: &[f64], cols: usize, out: &mut [f64]) {
    for row in x.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Cached activations of one LSTM direction over a whole sequence.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// Post-activation gates per step in computation order, `[i f g o]` blocks of `hidden`.
    pub gates: Vec<f64>,
    pub cell: Vec<f64>,
    pub cell_tanh: Vec<f64>,
    pub hidden_out: Vec<f64>,
}

/// Runs one LSTM direction. `x: frames × input`, `w_ih: 4H × input`, `w_hh: 4H × H`.
/// Returns the hidden sequence (`frames × H`, indexed by time) and the trace.
#[allow(clippy::too_many_arguments)]
pub fn lstm_forward(
    frames: usize,
    input: usize,
    hidden: usize,
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    bias: &[f64],
    reverse: bool,
) -> LstmTrace {
    let h4 = 4 * hidden;
    let mut pre = vec![0.0; frames * h4];
    matmul_nt(frames, input, h4, x, w_ih, &mut pre, 0.0);
    add_bias_rows(&mut pre, bias);

    let mut gates = vec![0.0; frames * h4];
    let mut cell = vec![0.0; frames * hidden];
    let mut cell_tanh = vec![0.0; frames * hidden];
    let mut hidden_out = vec![0.0; frames * hidden];
    let mut h_prev = vec![0.0; hidden];
    let mut c_prev = vec![0.0; hidden];
    let mut z = vec![0.0; h4];
    for step in 0..frames {
        let t = if reverse { frames - 1 - step } else { step };
        z.copy_from_slice(&pre[t * h4..(t + 1) * h4]);
        for (r, zr) in z.iter_mut().enumerate() {
            let w = &w_hh[r * hidden..(r + 1) * hidden];
            let mut acc = 0.0;
            for (a, b) in w.iter().zip(&h_prev) {
                acc += a * b;
            }
            *zr += acc;
        }
        let g = &mut gates[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            let i_g = sigmoid(z[j]);
            let f_g = sigmoid(z[hidden + j]);
            let g_g = z[2 * hidden + j].tanh();
            let o_g = sigmoid(z[3 * hidden + j]);
            g[j] = i_g;
            g[hidden + j] = f_g;
            g[2 * hidden + j] = g_g;
            g[3 * hidden + j] = o_g;
            let c = f_g * c_prev[j] + i_g * g_g;
            let ct = c.tanh();
            cell[t * hidden + j] = c;
            cell_tanh[t * hidden + j] = ct;
            hidden_out[t * hidden + j] = o_g * ct;
        }
        c_prev.copy_from_slice(&cell[t * hidden..(t + 1) * hidden]);
        h_prev.copy_from_slice(&hidden_out[t * hidden..(t + 1) * hidden]);
    }
    LstmTrace { gates, cell, cell_tanh, hidden_out }
}

/// Gradients of one LSTM direction given the upstream gradient `d_out: frames × H`.
pub struct LstmGrads {
    pub d_x: Vec<f64>,
    pub d_w_ih: Vec<f64>,
    pub d_w_hh: Vec<f64>,
    pub d_bias: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn lstm_backward(
    frames: usize,
    input: usize,
    hidden: usize,
    x: &[f64],
    w_ih: &[f64],
    w_hh: &[f64],
    trace: &LstmTrace,
    d_out: &[f64],
    reverse: bool,
) -> LstmGrads {
    let h4 = 4 * hidden;
    let mut dz_all = vec![0.0; frames * h4];
    // h of the previous computation step, aligned by time index.
    let mut h_prev_all = vec![0.0; frames * hidden];
    let mut dh_next = vec![0.0; hidden];
    let mut dc_next = vec![0.0; hidden];
    let zeros = vec![0.0; hidden];
    for step in (0..frames).rev() {
        let t = if reverse { frames - 1 - step } else { step };
        let prev_t = if step == 0 {
            None
        } else if reverse {
            Some(t + 1)
        } else {
            Some(t - 1)
        };
        let c_prev = prev_t.map_or(&zeros[..], |p| &trace.cell[p * hidden..(p + 1) * hidden]);
        if let Some(p) = prev_t {
            h_prev_all[t * hidden..(t + 1) * hidden]
                .copy_from_slice(&trace.hidden_out[p * hidden..(p + 1) * hidden]);
        }
        let g = &trace.gates[t * h4..(t + 1) * h4];
        let dz = &mut dz_all[t * h4..(t + 1) * h4];
        for j in 0..hidden {
            let (i_g, f_g, g_g, o_g) = (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
            let ct = trace.cell_tanh[t * hidden + j];
            let dh = d_out[t * hidden + j] + dh_next[j];
            let d_o = dh * ct;
            let dc = dh * o_g * (1.0 - ct * ct) + dc_next[j];
            let d_i = dc * g_g;
            let d_g = dc * i_g;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f_g;
            dz[j] = d_i * i_g * (1.0 - i_g);
            dz[hidden + j] = d_f * f_g * (1.0 - f_g);
            dz[2 * hidden + j] = d_g * (1.0 - g_g * g_g);
            dz[3 * hidden + j] = d_o * o_g * (1.0 - o_g);
        }
        // dh_prev = w_hhᵀ · dz
        dh_next.fill(0.0);
        for (r, dzr) in dz.iter().enumerate() {
            if *dzr == 0.0 {
                continue;
            }
            let w = &w_hh[r * hidden..(r + 1) * hidden];
            for (d, wv) in dh_next.iter_mut().zip(w) {
                *d += dzr * wv;
            }
        }
    }
    let mut d_w_ih = vec![0.0; h4 * input];
    matmul_tn(h4, frames, input, &dz_all, x, &mut d_w_ih, 0.0);
    let mut d_w_hh = vec![0.0; h4 * hidden];
    matmul_tn(h4, frames, hidden, &dz_all, &h_prev_all, &mut d_w_hh, 0.0);
    let mut d_bias = vec![0.0; h4];
    col_sums(&dz_all, h4, &mut d_bias);
    let mut d_x = vec![0.0; frames * input];
    matmul_nn(frames, h4, input, &dz_all, w_ih, &mut d_x, 0.0);
    LstmGrads { d_x, d_w_ih, d_w_hh, d_bias }
}
