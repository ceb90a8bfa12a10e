//! Parameterized building blocks shared by every network.

use super::params::{Init, ParamBuilder, ParamId};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Selu,
}

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(pb, name, in_dim, out_dim, Init::FanIn, true)
    }

    pub fn no_bias(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(pb, name, in_dim, out_dim, Init::FanIn, false)
    }

    /// Weights and bias start at zero.
    pub fn zeros(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_init(pb, name, in_dim, out_dim, Init::Zeros, true)
    }

    pub fn with_init(pb: &mut ParamBuilder, name: &str, in_dim: usize, out_dim: usize, init: Init, bias: bool) -> Self {
        let mut sub = pb.sub(name);
        let weight = sub.param("w", in_dim, out_dim, init);
        let bias = bias.then(|| sub.param("b", 1, out_dim, Init::Zeros));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let y = t.matmul(x, t.param(self.weight));
        match self.bias {
            Some(b) => t.add_row(y, t.param(b)),
            None => y,
        }
    }
}

/// Row-wise layer norm with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder, name: &str, width: usize) -> Self {
        let mut sub = pb.sub(name);
        Self {
            gain: sub.param("gain", 1, width, Init::Ones),
            bias: sub.param("bias", 1, width, Init::Zeros),
        }
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let y = t.mul_row(t.layer_norm(x), t.param(self.gain));
        t.add_row(y, t.param(self.bias))
    }
}

/// Single-hidden-layer perceptron.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(
        pb: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        let mut sub = pb.sub(name);
        Self {
            hidden: Linear::new(&mut sub, "hidden", in_dim, hidden),
            out: Linear::new(&mut sub, "out", hidden, out_dim),
            activation,
        }
    }

    /// Output layer starts at zero, so the MLP initially returns zeros.
    pub fn zero_output(
        pb: &mut ParamBuilder,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: Activation,
    ) -> Self {
        let mut sub = pb.sub(name);
        Self {
            hidden: Linear::new(&mut sub, "hidden", in_dim, hidden),
            out: Linear::zeros(&mut sub, "out", hidden, out_dim),
            activation,
        }
    }

    pub fn forward(&self, t: &Tape, x: Var) -> Var {
        let h = self.hidden.forward(t, x);
        let h = match self.activation {
            Activation::Gelu => t.gelu(h),
            Activation::Selu => t.selu(h),
        };
        self.out.forward(t, h)
    }
}
