//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

pub mod ap;
pub mod dp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signtime::convnet::{
    batch_loss, ClassWeights, LabelVector, LayerSpec, Mode, Network, NetworkSpec, Padding, Tensor,
};

/// A small network with every layer type, including a strided valid
/// convolution and batch norm after both conv and fc layers.
pub fn tiny_spec(classes: usize) -> NetworkSpec {
    let layers = vec![
        LayerSpec::Conv { kernel: (3, 3), out_channels: 4, stride: (1, 1), padding: Padding::Same },
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
        LayerSpec::Relu,
        LayerSpec::MaxPool { kernel: (2, 2), stride: (2, 2) },
        LayerSpec::Conv { kernel: (2, 3), out_channels: 5, stride: (1, 2), padding: Padding::Valid },
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
        LayerSpec::Relu,
        LayerSpec::FullyConnected { out_features: 6 },
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
        LayerSpec::Relu,
        LayerSpec::FullyConnected { out_features: classes },
    ];
    NetworkSpec { input: [3, 6, 11], layers, classes }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub struct GradCheck {
    pub max_param_rel: f64,
    pub max_input_rel: f64,
    pub checked: usize,
}

/// Relative error with a floor for gradients that vanish analytically
/// (for example biases feeding batch norm).
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss_of(net: &Network<f64>, input: &Tensor<f64>, labels: &[LabelVector], w: &ClassWeights) -> f64 {
    let fwd = net.forward(input, Mode::Train).unwrap();
    batch_loss(fwd.scores(), labels, w).unwrap().0
}

/// Compares backprop against central differences on every parameter and
/// every input value, with step `1e-5 * max(1, |x|)`.
pub fn check_all_gradients(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = 3;
    let spec = tiny_spec(classes);
    let mut net = Network::<f64>::new(&spec, &mut rng).unwrap();
    // Move batch-norm scales off their defaults so they matter.
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch = 4;
    let [c, h, w] = spec.input;
    let input = random_tensor(&mut rng, [batch, c, h, w]);
    let labels: Vec<LabelVector> = (0..batch)
        .map(|_| LabelVector::new((0..classes).map(|_| if rng.random_bool(0.4) { 1 } else { -1 }).collect()).unwrap())
        .collect();
    let weights = ClassWeights((0..classes).map(|_| rng.random_range(0.5..4.0)).collect());

    let fwd = net.forward(&input, Mode::Train).unwrap();
    let (_, dscores) = batch_loss(fwd.scores(), &labels, &weights).unwrap();
    let grads = net.backward(&fwd, &dscores, true).unwrap();

    let mut max_param_rel: f64 = 0.0;
    let mut checked = 0;
    let n_params = net.params().len();
    for pi in 0..n_params {
        let len = net.params()[pi].len();
        for j in 0..len {
            let x = net.params()[pi][j];
            let h = 1e-5 * x.abs().max(1.0);
            net.params_mut()[pi][j] = x + h;
            let up = loss_of(&net, &input, &labels, &weights);
            net.params_mut()[pi][j] = x - h;
            let dn = loss_of(&net, &input, &labels, &weights);
            net.params_mut()[pi][j] = x;
            let fd = (up - dn) / (2.0 * h);
            max_param_rel = max_param_rel.max(rel_error(grads.params[pi][j], fd));
            checked += 1;
        }
    }

    let din = grads.input.as_ref().unwrap();
    let mut max_input_rel: f64 = 0.0;
    let mut probe = input.clone();
    for j in 0..input.data().len() {
        let x = input.data()[j];
        let h = 1e-5 * x.abs().max(1.0);
        probe.data_mut()[j] = x + h;
        let up = loss_of(&net, &probe, &labels, &weights);
        probe.data_mut()[j] = x - h;
        let dn = loss_of(&net, &probe, &labels, &weights);
        probe.data_mut()[j] = x;
        let fd = (up - dn) / (2.0 * h);
        max_input_rel = max_input_rel.max(rel_error(din.data()[j], fd));
        checked += 1;
    }
    GradCheck { max_param_rel, max_input_rel, checked }
}

/// Direct nested-loop convolution, zero padding `(ph, pw)`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    input: &[f64],
    [c, h, w]: [usize; 3],
    weight: &[f64],
    bias: &[f64],
    out_c: usize,
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (oh, ow): (usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; out_c * oh * ow];
    for o in 0..out_c {
        for y in 0..oh {
            for x in 0..ow {
                let mut s = bias[o];
                for i in 0..c {
                    for a in 0..kh {
                        for b in 0..kw {
                            let iy = (y * sh + a) as isize - ph as isize;
                            let ix = (x * sw + b) as isize - pw as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            s += weight[((o * c + i) * kh + a) * kw + b]
                                * input[(i * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = s;
            }
        }
    }
    out
}
