//! Parameterised layers built on the tape.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};

/// Left padding of a forward convolution. Causal pads only the past.
pub fn conv_pad_left(kernel: usize, stride: usize, causal: bool) -> usize {
    if causal {
        kernel - 1
    } else {
        kernel.saturating_sub(stride) / 2
    }
}

/// Left offset of a transposed convolution. The causal variant places frame `t`'s
/// contribution at samples `t·stride ..`, so no output depends on a later frame.
pub fn conv_transpose_pad_left(kernel: usize, stride: usize, causal: bool) -> usize {
    if causal {
        0
    } else {
        kernel.saturating_sub(stride) / 2
    }
}

/// 1-D convolution over `frames × Cin` producing `ceil(frames / stride) × Cout`.
pub fn conv1d(g: &mut Graph, x: Var, kernel: Var, bias: Option<Var>, stride: usize, causal: bool) -> Result<Var> {
    let ks = g.value(kernel).shape().to_vec();
    if ks.len() != 3 || stride == 0 || ks[2] == 0 {
        return Err(Error::Config(format!("conv1d: bad kernel {ks:?} / stride {stride}")));
    }
    let cin = g.value(x).cols();
    if cin != ks[1] {
        return Err(Error::Config(format!("conv1d: input has {cin} channels, kernel expects {}", ks[1])));
    }
    let frames = g.value(x).rows();
    let out = frames.div_ceil(stride);
    Ok(g.conv(x, kernel, bias, stride, conv_pad_left(ks[2], stride, causal), out))
}

/// Transposed 1-D convolution `frames × Cin` → `frames·stride × Cout`, kernel `Cin×Cout×K`.
pub fn conv1d_transposed(g: &mut Graph, x: Var, kernel: Var, bias: Option<Var>, stride: usize, causal: bool) -> Result<Var> {
    let ks = g.value(kernel).shape().to_vec();
    if ks.len() != 3 || stride == 0 || ks[2] == 0 {
        return Err(Error::Config(format!("conv1d_transposed: bad kernel {ks:?} / stride {stride}")));
    }
    let cin = g.value(x).cols();
    if cin != ks[0] {
        return Err(Error::Config(format!(
            "conv1d_transposed: input has {cin} channels, kernel expects {}",
            ks[0]
        )));
    }
    let long = g.value(x).rows() * stride;
    Ok(g.conv_transpose(x, kernel, bias, stride, conv_transpose_pad_left(ks[2], stride, causal), long))
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub causal: bool,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kernel;
        let weight = store.register_uniform(format!("{name}.weight"), &[cout, cin, kernel], fan_in, rng);
        let bias = store.register_uniform(format!("{name}.bias"), &[cout], fan_in, rng);
        Self { weight, bias, stride, causal }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        conv1d(g, x, w, Some(b), self.stride, self.causal)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub causal: bool,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        // Each output sample sees about kernel/stride input frames.
        let fan_in = cin * kernel.div_ceil(stride);
        let weight = store.register_uniform(format!("{name}.weight"), &[cin, cout, kernel], fan_in, rng);
        let bias = store.register_uniform(format!("{name}.bias"), &[cout], fan_in, rng);
        Self { weight, bias, stride, causal }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        conv1d_transposed(g, x, w, Some(b), self.stride, self.causal)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool, rng: &mut R) -> Self {
        let weight = store.register_uniform(format!("{name}.weight"), &[dout, din], din, rng);
        let bias = bias.then(|| store.register_uniform(format!("{name}.bias"), &[dout], din, rng));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let din = g.value(w).cols();
        if g.value(x).cols() != din {
            return Err(Error::Config(format!(
                "linear: input width {} vs weight {:?}",
                g.value(x).cols(),
                g.value(w).shape()
            )));
        }
        let b = self.bias.map(|b| g.param(b));
        Ok(g.linear(x, w, b))
    }
}

#[derive(Clone, Debug)]
struct LstmDirection {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl LstmDirection {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = store.register_uniform(format!("{name}.w_ih"), &[4 * hidden, input], input, rng);
        let w_hh = store.register_uniform(format!("{name}.w_hh"), &[4 * hidden, hidden], hidden, rng);
        let bias = store.register(format!("{name}.bias"), super::Tensor::zeros(&[4 * hidden]));
        Self { w_ih, w_hh, bias }
    }

    fn forward(&self, g: &mut Graph, x: Var, reverse: bool) -> Var {
        let (wi, wh, b) = (g.param(self.w_ih), g.param(self.w_hh), g.param(self.bias));
        g.lstm(x, wi, wh, b, reverse)
    }
}

/// Recurrent layer with standard LSTM gating. The bidirectional variant returns the
/// sum of the forward pass and the time-reversed backward pass, so the width stays `C`.
#[derive(Clone, Debug)]
pub struct Recurrent {
    forward: LstmDirection,
    backward: Option<LstmDirection>,
}

impl Recurrent {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, channels: usize, bidirectional: bool, rng: &mut R) -> Self {
        let forward = LstmDirection::new(store, &format!("{name}.fwd"), channels, channels, rng);
        let backward = bidirectional.then(|| LstmDirection::new(store, &format!("{name}.bwd"), channels, channels, rng));
        Self { forward, backward }
    }

    pub fn bidirectional(&self) -> bool {
        self.backward.is_some()
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let f = self.forward.forward(g, x, false);
        match &self.backward {
            Some(bwd) => {
                let b = bwd.forward(g, x, true);
                g.add(f, b)
            }
            None => f,
        }
    }
}
