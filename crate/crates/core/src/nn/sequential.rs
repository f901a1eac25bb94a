use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv2d, ConvTranspose2d, Dense, Dims, Layer, Saved, Window};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Declarative description of one stage of a network, as written in
/// experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv { channels: usize, kernel: usize, stride: usize, padding: usize },
    Deconv { channels: usize, kernel: usize, stride: usize, padding: usize },
    Reshape { channels: usize, height: usize, width: usize },
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequential<T> {
    layers: Vec<Layer<T>>,
    input: Dims,
    output: Dims,
}

/// Forward-pass record consumed by [`Sequential::backward`].
#[derive(Debug, Clone)]
pub struct Tape<T> {
    saved: Vec<Saved<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn build<R: Rng + ?Sized>(input: Dims, specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        let mut dims = input;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let bad = |why: String| Error::Config(format!("layer {i} ({spec:?}) on input {dims:?}: {why}"));
            let layer = match *spec {
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(bad("zero units".into()));
                    }
                    Layer::Dense(Dense::new(dims.len(), units, rng))
                }
                LayerSpec::Conv { channels, kernel, stride, padding } => Layer::Conv(
                    Conv2d::new(dims, channels, Window { kernel, stride, padding }, rng)
                        .filter(|_| channels > 0 && kernel > 0)
                        .ok_or_else(|| bad("kernel does not fit".into()))?,
                ),
                LayerSpec::Deconv { channels, kernel, stride, padding } => Layer::Deconv(
                    ConvTranspose2d::new(dims, channels, Window { kernel, stride, padding }, rng)
                        .filter(|_| channels > 0 && kernel > 0 && stride > 0)
                        .ok_or_else(|| bad("empty output".into()))?,
                ),
                LayerSpec::Reshape { channels, height, width } => {
                    let to = Dims::new(channels, height, width);
                    if to.len() != dims.len() {
                        return Err(bad(format!("cannot reshape {} features into {to:?}", dims.len())));
                    }
                    Layer::Reshape(to)
                }
                LayerSpec::Relu => Layer::Act(Activation::Relu),
                LayerSpec::LeakyRelu { slope } => Layer::Act(Activation::LeakyRelu { slope }),
                LayerSpec::Tanh => Layer::Act(Activation::Tanh),
                LayerSpec::Sigmoid => Layer::Act(Activation::Sigmoid),
            };
            dims = match &layer {
                Layer::Dense(d) => Dims::flat(d.bias.len()),
                Layer::Conv(c) => c.output,
                Layer::Deconv(c) => c.output,
                Layer::Reshape(to) => *to,
                Layer::Act(_) => dims,
            };
            layers.push(layer);
        }
        Ok(Self { layers, input, output: dims })
    }

    pub fn input_dims(&self) -> Dims {
        self.input
    }

    pub fn output_dims(&self) -> Dims {
        self.output
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// A copy with every parameter set to zero, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.fill(T::zero());
        z
    }

    pub fn fill(&mut self, v: T) {
        for p in self.params_mut() {
            p.fill(v);
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        debug_assert_eq!(x.ncols(), self.input.len());
        let mut h = x.to_owned();
        for l in &self.layers {
            h = l.forward(h.view());
        }
        h
    }

    pub fn forward_tape(&self, x: Array2<T>) -> (Array2<T>, Tape<T>) {
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            let (y, s) = l.forward_saved(h);
            saved.push(s);
            h = y;
        }
        (h, Tape { saved })
    }

    /// Back-propagates `grad` (d loss / d output). Parameter gradients are
    /// accumulated into `grads` when given. Returns d loss / d input when
    /// `want_dx` is set.
    pub fn backward(&self, tape: &Tape<T>, grad: Array2<T>, mut grads: Option<&mut Self>, want_dx: bool) -> Option<Array2<T>> {
        let mut g = grad;
        let n = self.layers.len();
        for i in (0..n).rev() {
            let need = want_dx || i > 0;
            let gl = grads.as_deref_mut().map(|gs| &mut gs.layers[i]);
            match self.layers[i].backward(&tape.saved[i], g, gl, need) {
                Some(next) => g = next,
                None => return None,
            }
        }
        Some(g)
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
