//! Layers as thin records of parameter ids; all state lives in a [`ParamStore`].

use ndarray::Array2;
use rand::Rng;

use crate::conv::ConvGeom;
use crate::params::{glorot, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Pointwise nonlinearity applied between dense layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
            Activation::Softplus => x.softplus(),
            Activation::Identity => x,
        }
    }
}

/// Affine map `x W + b` with `W: (in, out)`, `b: (1, out)`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self::with_gain(store, name, in_dim, out_dim, 1.0, rng)
    }

    pub fn with_gain<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(rng, in_dim, out_dim, gain));
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, out_dim)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        x.matmul(tape.param(store, self.weight)) + tape.param(store, self.bias)
    }

    pub fn num_scalars(&self) -> usize {
        (self.in_dim + 1) * self.out_dim
    }
}

/// Stack of dense layers. The activation follows every layer except the
/// last unless `activate_last` is set.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub activate_last: bool,
}

impl Mlp {
    /// `widths` lists every layer's width including input and output:
    /// `[in, h1, h2, out]` builds three layers.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        activate_last: bool,
        rng: &mut R,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            activation,
            activate_last,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, mut x: Var<'t>) -> Var<'t> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, store, x);
            if i + 1 < n || self.activate_last {
                x = self.activation.apply(x);
            }
        }
        x
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_scalars(&self) -> usize {
        self.layers.iter().map(Linear::num_scalars).sum()
    }
}

/// Gated recurrent unit.
///
/// `r = σ(x W_r + h U_r)`, `u = σ(x W_u + h U_u)`,
/// `n = tanh(x W_n + r ⊙ (h U_n))`, `h' = n + u ⊙ (h − n)`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input: Linear,
    pub hidden: Linear,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        let input = Linear::new(store, &format!("{name}.input"), in_dim, 3 * hidden_dim, rng);
        let hidden = Linear::new(
            store,
            &format!("{name}.hidden"),
            hidden_dim,
            3 * hidden_dim,
            rng,
        );
        Self {
            input,
            hidden,
            hidden_dim,
        }
    }

    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Var<'t> {
        let hd = self.hidden_dim;
        let gi = self.input.forward(tape, store, x);
        let gh = self.hidden.forward(tape, store, h);
        let r = (gi.slice_cols(0, hd) + gh.slice_cols(0, hd)).sigmoid();
        let u = (gi.slice_cols(hd, 2 * hd) + gh.slice_cols(hd, 2 * hd)).sigmoid();
        let n = (gi.slice_cols(2 * hd, 3 * hd) + r * gh.slice_cols(2 * hd, 3 * hd)).tanh();
        n + u * (h - n)
    }

    pub fn num_scalars(&self) -> usize {
        self.input.num_scalars() + self.hidden.num_scalars()
    }
}

/// Convolution layer over flattened `(C, H, W)` images.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        geom: ConvGeom,
        rng: &mut R,
    ) -> Self {
        let fan_in = geom.patch_len();
        let fan_out = geom.out_channels * geom.kernel * geom.kernel;
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_simple_fn((geom.out_channels, fan_in), || {
            rng.random_range(-bound..=bound)
        });
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(
            format!("{name}.bias"),
            Array2::zeros((1, geom.out_channels)),
        );
        Self { weight, bias, geom }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        tape.conv2d(
            x,
            tape.param(store, self.weight),
            tape.param(store, self.bias),
            self.geom,
        )
    }

    pub fn num_scalars(&self) -> usize {
        self.geom.out_channels * (self.geom.patch_len() + 1)
    }
}

/// Transposed convolution from `(in_channels, in_h, in_w)` to
/// `(out_channels, out_h, out_w)`.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: ParamId,
    /// Geometry of the adjoint forward convolution (output image -> input image).
    pub geom: ConvGeom,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        in_hw: (usize, usize),
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let (oh, ow) = ConvGeom::transposed_out(in_hw.0, in_hw.1, kernel, stride, pad);
        let geom = ConvGeom {
            in_channels: out_channels,
            out_channels: in_channels,
            in_h: oh,
            in_w: ow,
            kernel,
            stride,
            pad,
        };
        debug_assert_eq!((geom.out_h(), geom.out_w()), in_hw);
        let fan = (in_channels + out_channels) * kernel * kernel;
        let bound = (6.0 / fan as f64).sqrt();
        let w = Array2::from_shape_simple_fn((in_channels, geom.patch_len()), || {
            rng.random_range(-bound..=bound)
        });
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(format!("{name}.bias"), Array2::zeros((1, out_channels)));
        Self { weight, bias, geom }
    }

    pub fn out_hw(&self) -> (usize, usize) {
        (self.geom.in_h, self.geom.in_w)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        tape.conv_transpose2d(
            x,
            tape.param(store, self.weight),
            tape.param(store, self.bias),
            self.geom,
        )
    }

    pub fn num_scalars(&self) -> usize {
        self.geom.out_channels * self.geom.patch_len() + self.geom.in_channels
    }
}
