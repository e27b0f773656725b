use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::layers::{self, PoolGeom};
use super::spec::{ConvGeom, LayerSpec, NetworkSpec};
use super::{Mode, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Layer<T> {
    Conv {
        geom: ConvGeom,
        weight: Vec<T>,
        bias: Vec<T>,
    },
    BatchNorm {
        eps: f64,
        momentum: f64,
        gamma: Vec<T>,
        beta: Vec<T>,
        running_mean: Vec<f64>,
        running_var: Vec<f64>,
    },
    Relu,
    MaxPool(PoolGeom),
    Fc {
        weight: Vec<T>,
        bias: Vec<T>,
    },
}

/// Per-layer state kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
enum Aux<T> {
    None,
    Pool(Vec<u32>),
    BatchNorm {
        /// Normalized input, same layout as the layer input.
        xhat: Vec<T>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
}

/// Result of a forward pass: scores plus everything backward needs.
#[derive(Clone, Debug)]
pub struct Forward<T> {
    mode: Mode,
    /// Input of every layer, then the final output.
    activations: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

impl<T: Scalar> Forward<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Class scores, shape `(n, C, 1, 1)`.
    pub fn scores(&self) -> &Tensor<T> {
        self.activations.last().unwrap()
    }

    /// Scores of sample `n` as `f64`.
    pub fn sample_scores(&self, n: usize) -> Vec<f64> {
        self.scores().sample(n).iter().map(|v| v.as_f64()).collect()
    }
}

/// Gradients in [`Network::params`] order, plus the optional input gradient.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub params: Vec<Vec<T>>,
    pub input: Option<Tensor<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    shapes: Vec<[usize; 3]>,
    pub(crate) layers: Vec<Layer<T>>,
}

fn he_init<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
    (0..len).map(|_| T::from_f64(normal.sample(rng))).collect()
}

impl<T: Scalar> Network<T> {
    /// Builds a network with He-scaled normal weights, zero biases and unit
    /// batch-norm scales.
    pub fn new<R: Rng + ?Sized>(spec: &NetworkSpec, rng: &mut R) -> Result<Self> {
        Self::build(spec, |len, fan_in| he_init(rng, len, fan_in))
    }

    /// Builds a network whose weights are all zero.
    pub fn zeroed(spec: &NetworkSpec) -> Result<Self> {
        Self::build(spec, |len, _| vec![T::zero(); len])
    }

    fn build(spec: &NetworkSpec, mut init: impl FnMut(usize, usize) -> Vec<T>) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, &input) in spec.layers.iter().zip(&shapes) {
            let [c, h, w] = input;
            layers.push(match *layer {
                LayerSpec::Conv {
                    kernel,
                    out_channels,
                    stride,
                    padding,
                } => {
                    let geom = ConvGeom::new(input, kernel, out_channels, stride, padding)?;
                    let fan_in = c * kernel.0 * kernel.1;
                    Layer::Conv {
                        geom,
                        weight: init(out_channels * fan_in, fan_in),
                        bias: vec![T::zero(); out_channels],
                    }
                }
                LayerSpec::BatchNorm { eps, momentum } => Layer::BatchNorm {
                    eps,
                    momentum,
                    gamma: vec![T::one(); c],
                    beta: vec![T::zero(); c],
                    running_mean: vec![0.0; c],
                    running_var: vec![1.0; c],
                },
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { kernel, stride } => {
                    let [_, out_h, out_w] = layer.output_shape(input)?;
                    Layer::MaxPool(PoolGeom {
                        c,
                        in_h: h,
                        in_w: w,
                        out_h,
                        out_w,
                        kh: kernel.0,
                        kw: kernel.1,
                        sh: stride.0,
                        sw: stride.1,
                    })
                }
                LayerSpec::FullyConnected { out_features } => {
                    let fan_in = c * h * w;
                    Layer::Fc {
                        weight: init(out_features * fan_in, fan_in),
                        bias: vec![T::zero(); out_features],
                    }
                }
            });
        }
        Ok(Network {
            spec: spec.clone(),
            shapes,
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.spec.input
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    /// Trainable parameter tensors, layer by layer: conv and fc give
    /// `(weight, bias)`, batch norm gives `(gamma, beta)`.
    pub fn params(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Relu | Layer::MaxPool(_) => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { weight, bias, .. } | Layer::Fc { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    out.push(gamma);
                    out.push(beta);
                }
                Layer::Relu | Layer::MaxPool(_) => {}
            }
        }
        out
    }

    /// `(mean, var)` running statistics of each batch-norm layer.
    pub fn running_stats(&self) -> Vec<(&[f64], &[f64])> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((running_mean.as_slice(), running_var.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn running_stats_mut(&mut self) -> Vec<(&mut Vec<f64>, &mut Vec<f64>)> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm {
                    running_mean,
                    running_var,
                    ..
                } => Some((running_mean, running_var)),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Same network at another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect::<Vec<U>>();
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv { geom, weight, bias } => Layer::Conv {
                    geom: *geom,
                    weight: conv(weight),
                    bias: conv(bias),
                },
                Layer::BatchNorm {
                    eps,
                    momentum,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                } => Layer::BatchNorm {
                    eps: *eps,
                    momentum: *momentum,
                    gamma: conv(gamma),
                    beta: conv(beta),
                    running_mean: running_mean.clone(),
                    running_var: running_var.clone(),
                },
                Layer::Relu => Layer::Relu,
                Layer::MaxPool(g) => Layer::MaxPool(*g),
                Layer::Fc { weight, bias } => Layer::Fc {
                    weight: conv(weight),
                    bias: conv(bias),
                },
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            layers,
        }
    }

    /// Runs the network on a batch. In [`Mode::Train`] batch norm uses batch
    /// statistics (and needs at least two samples); the running statistics
    /// are only updated by [`Network::commit_batch_stats`].
    pub fn forward(&self, input: &Tensor<T>, mode: Mode) -> Result<Forward<T>> {
        if input.sample_shape() != self.spec.input {
            return Err(Error::Shape(format!(
                "input sample shape {:?}, network expects {:?}",
                input.sample_shape(),
                self.spec.input
            )));
        }
        let batch = input.batch();
        if batch == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut aux = Vec::with_capacity(self.layers.len());
        activations.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let [c, h, w] = self.shapes[i + 1];
            let mut y = Tensor::zeros([batch, c, h, w]);
            let out_len = c * h * w;
            let in_len = x.sample_len();
            let a = match layer {
                Layer::Conv { geom, weight, bias } => {
                    y.data_mut()
                        .par_chunks_mut(out_len)
                        .zip(x.data().par_chunks(in_len))
                        .for_each(|(o, xi)| layers::conv_forward(geom, weight, bias, xi, o));
                    Aux::None
                }
                Layer::Fc { weight, bias } => {
                    y.data_mut()
                        .par_chunks_mut(out_len)
                        .zip(x.data().par_chunks(in_len))
                        .for_each(|(o, xi)| layers::fc_forward(weight, bias, xi, o));
                    Aux::None
                }
                Layer::Relu => {
                    for (o, &v) in y.data_mut().iter_mut().zip(x.data()) {
                        *o = if v > T::zero() { v } else { T::zero() };
                    }
                    Aux::None
                }
                Layer::MaxPool(g) => {
                    let mut argmax = vec![0u32; batch * out_len];
                    y.data_mut()
                        .par_chunks_mut(out_len)
                        .zip(argmax.par_chunks_mut(out_len))
                        .zip(x.data().par_chunks(in_len))
                        .for_each(|((o, a), xi)| layers::maxpool_forward(g, xi, o, a));
                    Aux::Pool(argmax)
                }
                Layer::BatchNorm {
                    eps,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    ..
                } => batchnorm_forward(
                    x,
                    &mut y,
                    *eps,
                    gamma,
                    beta,
                    running_mean,
                    running_var,
                    mode,
                )?,
            };
            #[cfg(debug_assertions)]
            if !y.all_finite() {
                return Err(Error::Divergence(format!("non-finite output from layer {i}")));
            }
            activations.push(y);
            aux.push(a);
        }
        Ok(Forward {
            mode,
            activations,
            aux,
        })
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running statistics.
    pub fn commit_batch_stats(&mut self, fwd: &Forward<T>) {
        if fwd.mode != Mode::Train {
            return;
        }
        for (layer, aux) in self.layers.iter_mut().zip(&fwd.aux) {
            if let (
                Layer::BatchNorm {
                    momentum,
                    running_mean,
                    running_var,
                    ..
                },
                Aux::BatchNorm {
                    batch_mean,
                    batch_var,
                    ..
                },
            ) = (layer, aux)
            {
                for c in 0..running_mean.len() {
                    running_mean[c] = (1.0 - *momentum) * running_mean[c] + *momentum * batch_mean[c];
                    running_var[c] = (1.0 - *momentum) * running_var[c] + *momentum * batch_var[c];
                }
            }
        }
    }

    /// Backpropagates `grad_scores` (dL/dS, shape of the scores) through the
    /// cached pass. The input gradient is computed only when asked for.
    pub fn backward(
        &self,
        fwd: &Forward<T>,
        grad_scores: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<Gradients<T>> {
        if fwd.activations.len() != self.layers.len() + 1 {
            return Err(Error::Shape("forward cache does not belong to this network".into()));
        }
        if grad_scores.shape() != fwd.scores().shape() {
            return Err(Error::Shape(format!(
                "score gradient shape {:?} vs scores {:?}",
                grad_scores.shape(),
                fwd.scores().shape()
            )));
        }
        let batch = grad_scores.batch();
        let mut grad = grad_scores.clone();
        let mut param_grads: Vec<Vec<T>> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &fwd.activations[i];
            let need_dx = i > 0 || want_input_grad;
            let in_len = x.sample_len();
            let out_len = grad.sample_len();
            let mut dx = if need_dx {
                Tensor::zeros(x.shape())
            } else {
                Tensor::zeros([0, 0, 0, 0])
            };
            match (layer, &fwd.aux[i]) {
                (Layer::Conv { geom, weight, bias }, _) => {
                    let mut dw = vec![T::zero(); weight.len()];
                    let mut db = vec![T::zero(); bias.len()];
                    layers::conv_backward_params(geom, x.data(), grad.data(), batch, &mut dw, &mut db);
                    if need_dx {
                        dx.data_mut()
                            .par_chunks_mut(in_len)
                            .zip(grad.data().par_chunks(out_len))
                            .for_each(|(d, g)| layers::conv_backward_input(geom, weight, g, d));
                    }
                    param_grads.push(db);
                    param_grads.push(dw);
                }
                (Layer::Fc { weight, bias }, _) => {
                    let mut dw = vec![T::zero(); weight.len()];
                    let mut db = vec![T::zero(); bias.len()];
                    layers::fc_backward_params(x.data(), grad.data(), batch, &mut dw, &mut db);
                    if need_dx {
                        dx.data_mut()
                            .par_chunks_mut(in_len)
                            .zip(grad.data().par_chunks(out_len))
                            .for_each(|(d, g)| layers::fc_backward_input(weight, g, d));
                    }
                    param_grads.push(db);
                    param_grads.push(dw);
                }
                (Layer::Relu, _) => {
                    if need_dx {
                        for ((d, &g), &v) in dx.data_mut().iter_mut().zip(grad.data()).zip(x.data()) {
                            *d = if v > T::zero() { g } else { T::zero() };
                        }
                    }
                }
                (Layer::MaxPool(_), Aux::Pool(argmax)) => {
                    if need_dx {
                        dx.data_mut()
                            .par_chunks_mut(in_len)
                            .zip(grad.data().par_chunks(out_len))
                            .zip(argmax.par_chunks(out_len))
                            .for_each(|((d, g), a)| layers::maxpool_backward(g, a, d));
                    }
                }
                (Layer::BatchNorm { gamma, .. }, aux @ Aux::BatchNorm { .. }) => {
                    let (dgamma, dbeta) =
                        batchnorm_backward(x, &grad, aux, gamma, fwd.mode, need_dx.then_some(&mut dx));
                    param_grads.push(dbeta);
                    param_grads.push(dgamma);
                }
                _ => return Err(Error::Shape(format!("corrupt forward cache at layer {i}"))),
            }
            grad = dx;
        }
        param_grads.reverse();
        Ok(Gradients {
            params: param_grads,
            input: want_input_grad.then_some(grad),
        })
    }
}

fn channel_view(shape: [usize; 4]) -> (usize, usize, usize) {
    let [n, c, h, w] = shape;
    (n, c, h * w)
}

#[allow(clippy::too_many_arguments)]
fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    y: &mut Tensor<T>,
    eps: f64,
    gamma: &[T],
    beta: &[T],
    running_mean: &[f64],
    running_var: &[f64],
    mode: Mode,
) -> Result<Aux<T>> {
    let (n, channels, plane) = channel_view(x.shape());
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::InvalidInput(
                    "batch norm in training mode needs a batch of at least 2".into(),
                ));
            }
            let count = (n * plane) as f64;
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let mut s = 0.0;
                for b in 0..n {
                    let off = (b * channels + c) * plane;
                    s += x.data()[off..off + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let m = s / count;
                let mut sq = 0.0;
                for b in 0..n {
                    let off = (b * channels + c) * plane;
                    sq += x.data()[off..off + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - m;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[c] = m;
                var[c] = sq / count;
            }
            (mean, var)
        }
        Mode::Eval => (running_mean.to_vec(), running_var.to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.data().len()];
    for b in 0..n {
        for c in 0..channels {
            let off = (b * channels + c) * plane;
            let m = T::from_f64(mean[c]);
            let s = T::from_f64(inv_std[c]);
            for j in off..off + plane {
                let h = (x.data()[j] - m) * s;
                xhat[j] = h;
                y.data_mut()[j] = gamma[c] * h + beta[c];
            }
        }
    }
    Ok(Aux::BatchNorm {
        xhat,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    })
}

/// Returns `(dgamma, dbeta)` and writes the input gradient when asked.
fn batchnorm_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    aux: &Aux<T>,
    gamma: &[T],
    mode: Mode,
    dx: Option<&mut Tensor<T>>,
) -> (Vec<T>, Vec<T>) {
    let Aux::BatchNorm { xhat, inv_std, .. } = aux else {
        unreachable!("batch norm layer without batch norm cache");
    };
    let (n, channels, plane) = channel_view(x.shape());
    let count = (n * plane) as f64;
    let mut dgamma = vec![0.0f64; channels];
    let mut dbeta = vec![0.0f64; channels];
    for c in 0..channels {
        for b in 0..n {
            let off = (b * channels + c) * plane;
            for j in off..off + plane {
                let g = dy.data()[j].as_f64();
                dgamma[c] += g * xhat[j].as_f64();
                dbeta[c] += g;
            }
        }
    }
    if let Some(dx) = dx {
        for c in 0..channels {
            let gs = gamma[c].as_f64() * inv_std[c];
            for b in 0..n {
                let off = (b * channels + c) * plane;
                for j in off..off + plane {
                    let g = dy.data()[j].as_f64();
                    let v = match mode {
                        // dx = γ/σ · (dy − mean(dy) − x̂ · mean(dy · x̂))
                        Mode::Train => {
                            gs * (g - dbeta[c] / count - xhat[j].as_f64() * dgamma[c] / count)
                        }
                        Mode::Eval => gs * g,
                    };
                    dx.data_mut()[j] = T::from_f64(v);
                }
            }
        }
    }
    (
        dgamma.into_iter().map(T::from_f64).collect(),
        dbeta.into_iter().map(T::from_f64).collect(),
    )
}
