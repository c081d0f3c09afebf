//! Feed-forward networks with hand-derived backward passes.
//!
//! Each layer computes `post = act(input · Wᵀ + b)` with `W` stored as
//! `(out, in)`. An optional softmax head turns the last layer's output into
//! row-wise probabilities.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{Matrix, Scalar};
use super::softmax::{softmax_backward, softmax_rows};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    None,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Architecture of a network: input width, then `(width, activation)` per layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSpec {
    pub input: usize,
    pub layers: Vec<(usize, Activation)>,
    pub head: OutputHead,
}

impl NetSpec {
    /// One tanh layer; its output is the representation.
    pub fn encoder(input: usize, width: usize) -> Self {
        Self {
            input,
            layers: vec![(width, Activation::Tanh)],
            head: OutputHead::None,
        }
    }

    /// One tanh hidden layer followed by a softmax over `classes`.
    pub fn classifier(input: usize, hidden: usize, classes: usize) -> Self {
        Self {
            input,
            layers: vec![(hidden, Activation::Tanh), (classes, Activation::Identity)],
            head: OutputHead::Softmax,
        }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T = f32> {
    pub layers: Vec<Layer<T>>,
    pub head: OutputHead,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T = f32> {
    pub input: Matrix<T>,
    pub pre: Vec<Matrix<T>>,
    pub post: Vec<Matrix<T>>,
    /// Final output: probabilities under a softmax head, else the last `post`.
    pub outputs: Matrix<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Pre-head output of the last layer.
    pub fn logits(&self) -> &Matrix<T> {
        self.post.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T = f32> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T = f32> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weight: Matrix::zeros(l.out_dim(), l.in_dim()),
                    bias: vec![T::zero(); l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer count differs".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight)?;
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + y;
            }
        }
        Ok(())
    }

    /// Flattened in the same order as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn is_zero(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| *v == T::zero()))
    }
}

/// Draws parameters for `spec`: weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
pub fn init_params<T: Scalar>(spec: &NetSpec, rng: &RngStream) -> Result<Mlp<T>> {
    if spec.input == 0 || spec.layers.is_empty() {
        return Err(Error::Config("network needs an input and at least one layer".into()));
    }
    let mut r = rng.rng();
    let mut fan_in = spec.input;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for &(width, activation) in &spec.layers {
        if width == 0 {
            return Err(Error::Config("zero-width layer".into()));
        }
        let limit = (6.0 / (fan_in + width) as f64).sqrt();
        let data = (0..width * fan_in)
            .map(|_| T::from_f64(r.random_range(-limit..=limit)))
            .collect();
        layers.push(Layer {
            weight: Matrix::from_vec(width, fan_in, data)?,
            bias: vec![T::zero(); width],
            activation,
        });
        fan_in = width;
    }
    Ok(Mlp {
        layers,
        head: spec.head,
    })
}

impl<T: Scalar> Mlp<T> {
    /// Network of shape `spec` with every parameter zero.
    pub fn zeros(spec: &NetSpec) -> Result<Self> {
        if spec.input == 0 || spec.layers.is_empty() || spec.layers.iter().any(|l| l.0 == 0) {
            return Err(Error::Config("network needs an input and non-empty layers".into()));
        }
        let mut fan_in = spec.input;
        let layers = spec
            .layers
            .iter()
            .map(|&(width, activation)| {
                let layer = Layer {
                    weight: Matrix::zeros(width, fan_in),
                    bias: vec![T::zero(); width],
                    activation,
                };
                fan_in = width;
                layer
            })
            .collect();
        Ok(Self {
            layers,
            head: spec.head,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn spec(&self) -> NetSpec {
        NetSpec {
            input: self.in_dim(),
            layers: self.layers.iter().map(|l| (l.out_dim(), l.activation)).collect(),
            head: self.head,
        }
    }

    /// Checks that dimensions chain and all parameters are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} bias length")));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Input(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix<T>) -> Result<ForwardTrace<T>> {
        if batch.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        if !batch.is_finite() {
            return Err(Error::Input("non-finite value in network input".into()));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Matrix<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = post.last().unwrap_or(batch);
            let mut z = input.matmul_t(&layer.weight)?;
            for r in 0..z.rows() {
                for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v = *v + b;
                }
            }
            let a = match layer.activation {
                Activation::Identity => z.clone(),
                Activation::Tanh => z.map(T::tanh),
            };
            pre.push(z);
            post.push(a);
        }
        let last = post.last().expect("at least one layer");
        let outputs = match self.head {
            OutputHead::None => last.clone(),
            OutputHead::Softmax => softmax_rows(last),
        };
        Ok(ForwardTrace {
            input: batch.clone(),
            pre,
            post,
            outputs,
        })
    }

    /// Outputs only.
    pub fn predict(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward(batch)?.outputs)
    }

    /// Backward pass from a gradient on `trace.outputs`.
    ///
    /// With `detach_input` the returned input gradient is all zeros, so
    /// nothing upstream of this network receives signal from it.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        upstream: &Matrix<T>,
        detach_input: bool,
    ) -> Result<(MlpGrads<T>, Matrix<T>)> {
        if upstream.shape() != trace.outputs.shape() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs outputs {:?}",
                upstream.shape(),
                trace.outputs.shape()
            )));
        }
        match self.head {
            OutputHead::None => self.backward_logits(trace, upstream, detach_input),
            OutputHead::Softmax => {
                let g = softmax_backward(&trace.outputs, upstream)?;
                self.backward_logits(trace, &g, detach_input)
            }
        }
    }

    /// Backward pass from a gradient on the pre-head output (logits).
    pub fn backward_logits(
        &self,
        trace: &ForwardTrace<T>,
        grad_logits: &Matrix<T>,
        detach_input: bool,
    ) -> Result<(MlpGrads<T>, Matrix<T>)> {
        if grad_logits.shape() != trace.logits().shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} vs logits {:?}",
                grad_logits.shape(),
                trace.logits().shape()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut dz = upstream;
            if layer.activation == Activation::Tanh {
                for (g, &a) in dz.as_mut_slice().iter_mut().zip(trace.post[i].as_slice()) {
                    *g = *g * (T::one() - a * a);
                }
            }
            let input = if i == 0 { &trace.input } else { &trace.post[i - 1] };
            let weight = dz.t_matmul(input)?;
            let bias = dz.sum_rows();
            grads.push(LayerGrads { weight, bias });
            upstream = if i == 0 && detach_input {
                Matrix::zeros(trace.input.rows(), trace.input.cols())
            } else {
                dz.matmul(&layer.weight)?
            };
        }
        grads.reverse();
        Ok((MlpGrads { layers: grads }, upstream))
    }

    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        let total: usize = self.blocks().map(<[T]>::len).sum();
        if values.len() != total {
            return Err(Error::Shape(format!(
                "{} values for {total} parameters",
                values.len()
            )));
        }
        let mut offset = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Parameter blocks in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn blocks(&self) -> impl Iterator<Item = &[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flat_map(|l| {
            let Layer { weight, bias, .. } = l;
            [weight.as_mut_slice(), bias.as_mut_slice()]
        })
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|b| U::from_f64(b.as_f64())).collect(),
                    activation: l.activation,
                })
                .collect(),
            head: self.head,
        }
    }
}
