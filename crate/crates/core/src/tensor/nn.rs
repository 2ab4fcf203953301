//! Affine layers and multilayer perceptrons.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{add_row, matmul, Graph, Tensor, TensorStore, Var};
use crate::error::{Error, Result};

/// Anything holding named parameter tensors.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_params(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn to_store(&self, prefix: &str) -> TensorStore {
        let mut store = TensorStore::default();
        self.visit(prefix, &mut |n, t| store.push(n, t.clone()));
        store
    }

    /// Overwrites every parameter with the same-named, same-shaped entry.
    fn load_from(&mut self, prefix: &str, store: &TensorStore) -> Result<()> {
        let mut result = Ok(());
        self.visit_mut(prefix, &mut |n, t| {
            if result.is_err() {
                return;
            }
            result = match store.get(&n) {
                Ok(src) if src.shape() == t.shape() => {
                    *t = src.clone();
                    Ok(())
                }
                Ok(src) => Err(Error::Shape(format!("{n}: stored {:?}, expected {:?}", src.shape(), t.shape()))),
                Err(e) => Err(e),
            };
        });
        result
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, t: &Tensor) -> Tensor {
        match self {
            Activation::Tanh => t.map(f64::tanh),
            Activation::Relu => t.map(|x| x.max(0.0)),
            Activation::Identity => t.clone(),
        }
    }

    fn apply_graph(self, g: &mut Graph, v: Var) -> Var {
        match self {
            Activation::Tanh => g.tanh(v),
            Activation::Relu => g.relu(v),
            Activation::Identity => v,
        }
    }
}

/// `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform init with variance `gain^2 / fan_in`, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        let bound = gain * (3.0 / input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::matrix(input, output, data).expect("sized"),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        add_row(&matmul(x, &self.weight)?, &self.bias)
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundLinear {
        let (weight, bias) = if trainable {
            (g.leaf(self.weight.clone()), g.leaf(self.bias.clone()))
        } else {
            (g.constant(self.weight.clone()), g.constant(self.bias.clone()))
        };
        BoundLinear { weight, bias }
    }
}

impl Parameterized for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Graph handles for one [`Linear`].
#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_row(h, self.bias)
    }
}

/// Fully connected network; the activation applies to hidden layers only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`. Hidden layers use gain √2,
    /// the output layer uses `output_gain`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        output_gain: f64,
        rng: &mut R,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output sizes");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { 2f64.sqrt() };
                Linear::init(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    /// Width of the last hidden layer (the input width when there is none).
    pub fn feature_dim(&self) -> usize {
        self.layers.last().expect("non-empty").input_dim()
    }

    fn check_input(&self, layer: usize, x: &Tensor) -> Result<()> {
        let expected = self.layers[layer].input_dim();
        if x.cols() != expected {
            return Err(Error::Dimension {
                layer,
                expected,
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Features after the last hidden layer.
    pub fn hidden(&self, x: &Tensor) -> Result<Tensor> {
        let n = self.layers.len();
        let mut h = x.clone();
        for (i, layer) in self.layers[..n - 1].iter().enumerate() {
            self.check_input(i, &h)?;
            h = self.activation.apply(&layer.forward(&h)?);
        }
        Ok(h)
    }

    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        self.check_input(last, features)?;
        self.layers[last].forward(features)
    }

    /// Graph-free forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let out = self.head(&self.hidden(x)?)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("mlp output".into()));
        }
        Ok(out)
    }

    /// Records the parameters on `g`, as leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(g, trainable)).collect(),
            activation: self.activation,
            input_dims: self.layers.iter().map(Linear::input_dim).collect(),
        }
    }
}

impl Parameterized for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("l{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("l{i}")), f);
        }
    }
}

/// An [`Mlp`] whose parameters live on a [`Graph`].
#[derive(Clone, Debug)]
pub struct BoundMlp {
    pub layers: Vec<BoundLinear>,
    activation: Activation,
    input_dims: Vec<usize>,
}

impl BoundMlp {
    fn check_input(&self, g: &Graph, layer: usize, x: Var) -> Result<()> {
        let found = g.value(x).cols();
        if found != self.input_dims[layer] {
            return Err(Error::Dimension {
                layer,
                expected: self.input_dims[layer],
                found,
            });
        }
        Ok(())
    }

    pub fn hidden(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let n = self.layers.len();
        let mut h = x;
        for i in 0..n - 1 {
            self.check_input(g, i, h)?;
            let z = self.layers[i].forward(g, h)?;
            h = self.activation.apply_graph(g, z);
        }
        Ok(h)
    }

    pub fn head(&self, g: &mut Graph, features: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        self.check_input(g, last, features)?;
        self.layers[last].forward(g, features)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.hidden(g, x)?;
        self.head(g, h)
    }

    /// Parameter handles named like [`Parameterized::visit`] names them.
    pub fn params(&self, prefix: &str) -> Vec<(String, Var)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("l{i}"));
            out.push((join(&p, "weight"), l.weight));
            out.push((join(&p, "bias"), l.bias));
        }
        out
    }
}
