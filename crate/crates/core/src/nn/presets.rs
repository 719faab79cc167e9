use std::fmt;
use std::str::FromStr;

use super::LayerSpec;
use crate::error::{arg, Error, Result};
use crate::kwta::k_from_gamma;

pub const MNIST_INPUT: [usize; 3] = [1, 28, 28];

/// Nonlinearity placed after hidden layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Kwta(f64),
}

impl Activation {
    pub fn spec(&self) -> LayerSpec {
        match *self {
            Activation::Relu => LayerSpec::Relu,
            Activation::Kwta(gamma) => LayerSpec::Kwta { gamma },
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match *self {
            Activation::Relu => None,
            Activation::Kwta(g) => Some(g),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Kwta(g) => write!(f, "kwta-{g}"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    /// `relu`, or `kwta:<gamma>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "relu" {
            return Ok(Activation::Relu);
        }
        if let Some(g) = s.strip_prefix("kwta:") {
            let gamma: f64 = g.parse().map_err(|_| arg(format!("bad sparsity ratio `{g}`")))?;
            k_from_gamma(gamma, 1)?;
            return Ok(Activation::Kwta(gamma));
        }
        Err(arg(format!("unknown activation `{s}`")))
    }
}

/// The four-convolution MNIST network with every width divided by `width_divisor`.
///
/// At divisor 1 this is 128/128/256/256 channels and a 10000-unit hidden
/// layer; the default desk-scale build uses divisor 8. There is no activation
/// between the last convolution and the first linear layer.
pub fn mnist_cnn_specs(act: Activation, width_divisor: usize) -> Result<Vec<LayerSpec>> {
    if width_divisor == 0 || 128 % width_divisor != 0 || 10000 % width_divisor != 0 {
        return Err(arg(format!("width divisor {width_divisor} must divide 128 and 10000")));
    }
    let c1 = 128 / width_divisor;
    let c2 = 256 / width_divisor;
    let hidden = 10000 / width_divisor;
    let conv = |i, o, stride| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
        kernel_size: 3,
        stride,
        padding: 1,
    };
    Ok(vec![
        conv(1, c1, 1),
        act.spec(),
        conv(c1, c1, 2),
        act.spec(),
        conv(c1, c2, 1),
        act.spec(),
        conv(c2, c2, 2),
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: c2 * 7 * 7,
            out_dim: hidden,
        },
        act.spec(),
        LayerSpec::Dense {
            in_dim: hidden,
            out_dim: 10,
        },
    ])
}

/// Fully connected network over a flat input, activation after each hidden layer.
pub fn mlp_specs(input_dim: usize, hidden: &[usize], outputs: usize, act: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(2 * hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec::Dense {
            in_dim: prev,
            out_dim: h,
        });
        specs.push(act.spec());
        prev = h;
    }
    specs.push(LayerSpec::Dense {
        in_dim: prev,
        out_dim: outputs,
    });
    specs
}
