use serde::{Deserialize, Serialize};

use super::{RngStream, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    /// Elementwise nonlinearity.
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Fully-connected layer `y = act(W x + b)`, `W` stored row-major as
/// `outputs x inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    fn check(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::Shape("layer with zero width".into()));
        }
        if self.weight.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "layer {}x{} has {} weights and {} biases",
                self.outputs,
                self.inputs,
                self.weight.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// Parameters of a multi-layer perceptron. Also used as the container for
/// parameter gradients, which have exactly the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Intermediate values of one forward pass, consumed by
/// [`MlpParams::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("trace holds the input at least")
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("perceptron needs at least one layer".into()));
        }
        for l in &layers {
            l.check()?;
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Shape(format!(
                    "layer output {} feeds layer input {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Random perceptron with widths `dims` (input first). Hidden layers use
    /// `hidden` activation with scaled-normal weights, the last layer uses
    /// `output` activation and has its weights multiplied by `output_scale`.
    pub fn random(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_scale: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Shape("need input and output widths".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (inp, out) = (dims[i], dims[i + 1]);
                let last = i + 1 == n;
                let act = if last { output } else { hidden };
                let std = (1.0 / inp.max(1) as f64).sqrt() * if last { output_scale } else { 1.0 };
                let weight = (0..inp * out).map(|_| rng.normal() * std).collect();
                Layer {
                    inputs: inp,
                    outputs: out,
                    weight,
                    bias: vec![0.0; out],
                    activation: act,
                }
            })
            .collect();
        Self::new(layers)
    }

    /// Single identity layer of width `dim`.
    pub fn identity(dim: usize) -> Self {
        let mut l = Layer::zeros(dim, dim, Activation::Identity);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        Self { layers: vec![l] }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs, l.activation))
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Appends all parameters (per layer: weights then biases) to `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight);
            out.extend_from_slice(&l.bias);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        self.flatten_into(&mut v);
        v
    }

    /// Overwrites the parameters from `flat`, returning the unread tail.
    pub fn load_flat<'a>(&mut self, flat: &'a [f64]) -> Result<&'a [f64]> {
        let mut rest = flat;
        for l in &mut self.layers {
            let need = l.weight.len() + l.bias.len();
            if rest.len() < need {
                return Err(Error::Shape("flat parameter vector too short".into()));
            }
            let (w, tail) = rest.split_at(l.weight.len());
            l.weight.copy_from_slice(w);
            let (b, tail) = tail.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(rest)
    }

    /// `self += alpha * other`; shapes must agree.
    pub fn add_scaled(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "perceptron expects input of width {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut x = input.to_vec();
        for l in &self.layers {
            x = layer_forward(l, &x);
        }
        Ok(x)
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<MlpTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "perceptron expects input of width {}, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for l in &self.layers {
            let next = layer_forward(l, activations.last().unwrap());
            activations.push(next);
        }
        Ok(MlpTrace { activations })
    }

    /// Reverse-mode pass for the scalar `<upstream, output>`: accumulates the
    /// parameter gradient into `grads` and returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace, upstream: &[f64], grads: &mut MlpParams) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.output_dim());
        let mut delta = upstream.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let out = &trace.activations[k + 1];
            let inp = &trace.activations[k];
            for (d, &y) in delta.iter_mut().zip(out) {
                *d *= l.activation.derivative_from_output(y);
            }
            let g = &mut grads.layers[k];
            let mut prev = vec![0.0; l.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = o * l.inputs;
                let wrow = &l.weight[row..row + l.inputs];
                let grow = &mut g.weight[row..row + l.inputs];
                for i in 0..l.inputs {
                    grow[i] += d * inp[i];
                    prev[i] += d * wrow[i];
                }
            }
            delta = prev;
        }
        delta
    }
}

fn layer_forward(l: &Layer, x: &[f64]) -> Vec<f64> {
    (0..l.outputs)
        .map(|o| {
            let row = &l.weight[o * l.inputs..(o + 1) * l.inputs];
            let z = l.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            l.activation.apply(z)
        })
        .collect()
}

/// Applies the perceptron to a vector (shape `[in]`) or to each row of a
/// matrix (shape `[n, in]`).
pub fn mlp_apply(params: &MlpParams, input: &Tensor) -> Result<Tensor> {
    match input.shape() {
        [_] => Ok(Tensor::vector(params.forward(input.data())?)),
        [n, w] => {
            if *w != params.input_dim() {
                return Err(Error::Shape(format!(
                    "perceptron expects rows of width {}, got {w}",
                    params.input_dim()
                )));
            }
            let mut out = Vec::with_capacity(n * params.output_dim());
            for row in input.data().chunks(*w) {
                out.extend(params.forward(row)?);
            }
            Tensor::new(vec![*n, params.output_dim()], out)
        }
        s => Err(Error::Shape(format!(
            "perceptron input must be 1-D or 2-D, got {s:?}"
        ))),
    }
}

/// Exact gradients of `<upstream, mlp_apply(params, input)>` with respect to
/// the parameters and the input. Accepts the same input shapes as
/// [`mlp_apply`]; for matrices the parameter gradient is summed over rows.
pub fn mlp_grad(
    params: &MlpParams,
    input: &Tensor,
    upstream: &Tensor,
) -> Result<(MlpParams, Tensor)> {
    let mut grads = params.zeros_like();
    match (input.shape(), upstream.shape()) {
        ([_], [u]) => {
            if *u != params.output_dim() {
                return Err(Error::Shape(format!(
                    "upstream width {u} does not match output width {}",
                    params.output_dim()
                )));
            }
            let trace = params.forward_trace(input.data())?;
            let gx = params.backward(&trace, upstream.data(), &mut grads);
            Ok((grads, Tensor::vector(gx)))
        }
        ([n, w], [m, u]) if n == m => {
            if *u != params.output_dim() {
                return Err(Error::Shape(format!(
                    "upstream width {u} does not match output width {}",
                    params.output_dim()
                )));
            }
            let mut gx = Vec::with_capacity(n * w);
            for (row, up) in input.data().chunks(*w).zip(upstream.data().chunks(*u)) {
                let trace = params.forward_trace(row)?;
                gx.extend(params.backward(&trace, up, &mut grads));
            }
            Ok((grads, Tensor::new(vec![*n, *w], gx)?))
        }
        (a, b) => Err(Error::Shape(format!(
            "input {a:?} and upstream {b:?} disagree"
        ))),
    }
}
