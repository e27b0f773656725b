mod common;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signtime::convnet::{
    batch_loss, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ClassWeights,
    LabelVector, LayerSpec, Mode, Network, NetworkSpec, Padding, Tensor,
};

use common::*;

#[test]
fn gradients_match_finite_differences() {
    let check = check_all_gradients(7);
    assert!(check.max_param_rel < 1e-4, "param rel error {}", check.max_param_rel);
    assert!(check.max_input_rel < 1e-4, "input rel error {}", check.max_input_rel);
}

#[test]
#[ignore]
fn time_default_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let spec = NetworkSpec::default_for(330, 5).unwrap();
    let net = Network::<f32>::new(&spec, &mut rng).unwrap();
    let batch = 32;
    let n = batch * 3 * 10 * 330;
    let input = Tensor::from_vec([batch, 3, 10, 330], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<LabelVector> = (0..batch).map(|i| LabelVector::new((0..5).map(|c| if c == i % 5 { 1 } else { -1 }).collect()).unwrap()).collect();
    let w = ClassWeights::uniform(5);
    let t = Instant::now();
    for _ in 0..3 {
        let fwd = net.forward(&input, Mode::Train).unwrap();
        let (_, d) = batch_loss(fwd.scores(), &labels, &w).unwrap();
        let _ = net.backward(&fwd, &d, false).unwrap();
    }
    eprintln!("per sample: {:?}", t.elapsed() / (3 * batch as u32));
}

fn scores_of(net: &Network<f64>, input: &Tensor<f64>, mode: Mode) -> Vec<f64> {
    net.forward(input, mode).unwrap().scores().data().to_vec()
}

#[test]
fn forward_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layers = vec![
        LayerSpec::Conv { kernel: (3, 5), out_channels: 4, stride: (1, 1), padding: Padding::Same },
        LayerSpec::Conv { kernel: (2, 3), out_channels: 3, stride: (2, 2), padding: Padding::Valid },
        LayerSpec::FullyConnected { out_features: 2 },
    ];
    let spec = NetworkSpec { input: [3, 10, 12], layers, classes: 2 };
    let mut net = Network::<f64>::new(&spec, &mut rng).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let input = random_tensor(&mut rng, [2, 3, 10, 12]);
    let got = scores_of(&net, &input, Mode::Eval);

    let p: Vec<Vec<f64>> = net.params().iter().map(|p| p.to_vec()).collect();
    for n in 0..2 {
        let a = naive_conv(input.sample(n), [3, 10, 12], &p[0], &p[1], 4, (3, 5), (1, 1), (1, 2), (10, 12));
        let b = naive_conv(&a, [4, 10, 12], &p[2], &p[3], 3, (2, 3), (2, 2), (0, 0), (5, 5));
        for o in 0..2 {
            let s: f64 = p[5][o] + (0..b.len()).map(|j| p[4][o * b.len() + j] * b[j]).sum::<f64>();
            assert!((s - got[n * 2 + o]).abs() < 1e-10, "{s} vs {}", got[n * 2 + o]);
        }
    }
}

#[test]
fn zero_network_scores_zero() {
    let spec = NetworkSpec::default_for(40, 4).unwrap();
    let net = Network::<f64>::zeroed(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_tensor(&mut rng, [3, 3, 10, 40]);
    for mode in [Mode::Train, Mode::Eval] {
        assert!(scores_of(&net, &input, mode).iter().all(|&s| s == 0.0));
    }
}

/// `fc` head with identity weights so the scores expose the layer below.
fn identity_head(net: &mut Network<f64>) {
    let mut params = net.params_mut();
    let k = params.len();
    let n = params[k - 1].len();
    for (i, v) in params[k - 2].iter_mut().enumerate() {
        *v = if i % (n + 1) == 0 { 1.0 } else { 0.0 };
    }
    params[k - 1].iter_mut().for_each(|v| *v = 0.0);
}

#[test]
fn one_by_one_conv_scales_input() {
    let layers = vec![
        LayerSpec::Conv { kernel: (1, 1), out_channels: 1, stride: (1, 1), padding: Padding::Same },
        LayerSpec::FullyConnected { out_features: 6 },
    ];
    let spec = NetworkSpec { input: [1, 2, 3], layers, classes: 6 };
    let mut net = Network::<f64>::zeroed(&spec).unwrap();
    net.params_mut()[0][0] = 2.5;
    identity_head(&mut net);
    let input = Tensor::from_vec([1, 1, 2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.5]).unwrap();
    let expected: Vec<f64> = input.data().iter().map(|v| 2.5 * v).collect();
    assert_eq!(scores_of(&net, &input, Mode::Eval), expected);
}

#[test]
fn fc_input_gradient_is_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = NetworkSpec { input: [2, 2, 2], layers: vec![LayerSpec::FullyConnected { out_features: 3 }], classes: 3 };
    let net = Network::<f64>::new(&spec, &mut rng).unwrap();
    let input = random_tensor(&mut rng, [1, 2, 2, 2]);
    let fwd = net.forward(&input, Mode::Eval).unwrap();
    let up = Tensor::from_vec([1, 3, 1, 1], vec![0.3, -1.2, 2.0]).unwrap();
    let g = net.backward(&fwd, &up, true).unwrap();
    let w = net.params()[0];
    for j in 0..8 {
        let expect: f64 = (0..3).map(|o| w[o * 8 + j] * up.data()[o]).sum();
        assert!((g.input.as_ref().unwrap().data()[j] - expect).abs() < 1e-14);
    }
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let spec = tiny_spec(3);
    let net = Network::<f64>::new(&spec, &mut rng).unwrap();
    let input = random_tensor(&mut rng, [3, 3, 6, 11]);
    let fwd = net.forward(&input, Mode::Train).unwrap();
    let g = net.backward(&fwd, &Tensor::zeros([3, 3, 1, 1]), true).unwrap();
    assert!(g.params.iter().flatten().all(|&v| v == 0.0));
    assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
}

fn bn_net() -> Network<f64> {
    let layers = vec![
        LayerSpec::BatchNorm { eps: 1e-5, momentum: 0.1 },
        LayerSpec::FullyConnected { out_features: 4 },
    ];
    let spec = NetworkSpec { input: [2, 1, 2], layers, classes: 4 };
    let mut net = Network::<f64>::zeroed(&spec).unwrap();
    identity_head(&mut net);
    net
}

#[test]
fn batchnorm_examples() {
    let net = bn_net();
    // Constant batch: zero variance, output is beta = 0.
    let constant = Tensor::from_vec([3, 2, 1, 2], vec![0.7; 12]).unwrap();
    assert!(scores_of(&net, &constant, Mode::Train).iter().all(|s| s.abs() < 1e-12));

    // Batch statistics copied into the running statistics: both modes agree.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, [4, 2, 1, 2]);
    let mut net = net;
    let mut mean = [0.0; 2];
    let mut var = [0.0; 2];
    for c in 0..2 {
        let vals: Vec<f64> = (0..4).flat_map(|n| x.sample(n)[2 * c..2 * c + 2].to_vec()).collect();
        mean[c] = vals.iter().sum::<f64>() / 8.0;
        var[c] = vals.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / 8.0;
    }
    for (m, v) in net.running_stats_mut() {
        m.copy_from_slice(&mean);
        v.copy_from_slice(&var);
    }
    let train = scores_of(&net, &x, Mode::Train);
    let eval = scores_of(&net, &x, Mode::Eval);
    for (a, b) in train.iter().zip(&eval) {
        assert!((a - b).abs() < 1e-12);
    }

    let single = random_tensor(&mut rng, [1, 2, 1, 2]);
    assert!(net.forward(&single, Mode::Train).is_err());
    assert!(net.forward(&single, Mode::Eval).is_ok());
}

#[test]
fn running_stats_follow_momentum() {
    let mut net = bn_net();
    let x = Tensor::from_vec([2, 2, 1, 2], vec![1.0, 3.0, 0.0, 0.0, 3.0, 1.0, 2.0, 2.0]).unwrap();
    let fwd = net.forward(&x, Mode::Train).unwrap();
    net.commit_batch_stats(&fwd);
    let stats = net.running_stats();
    let (m, v) = stats[0];
    assert!((m[0] - 0.2).abs() < 1e-15 && (m[1] - 0.1).abs() < 1e-15);
    // Channel 0 has biased variance 1, channel 1 has variance 1.
    assert!((v[0] - 1.0).abs() < 1e-15 && (v[1] - 1.0).abs() < 1e-15);
}

fn perturbed(spec: &NetworkSpec, seed: u64) -> Network<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::<f64>::new(spec, &mut rng).unwrap();
    for p in net.params_mut() {
        for v in p.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    for (m, v) in net.running_stats_mut() {
        m.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
        v.iter_mut().for_each(|x| *x = rng.random_range(0.5..2.0));
    }
    net
}

#[test]
fn checkpoint_round_trip() {
    let specs = [
        tiny_spec(3),
        NetworkSpec::default_for(40, 5).unwrap(),
        NetworkSpec {
            input: [3, 10, 9],
            layers: vec![
                LayerSpec::Conv { kernel: (2, 2), out_channels: 2, stride: (2, 3), padding: Padding::Valid },
                LayerSpec::Relu,
                LayerSpec::FullyConnected { out_features: 2 },
            ],
            classes: 2,
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in specs.iter().enumerate() {
        let net = perturbed(spec, 10 + i as u64);
        let path = dir.path().join(format!("net{i}.knet"));
        save_checkpoint(&net, &path).unwrap();
        let loaded: Network<f64> = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.spec(), net.spec());
        let [c, h, w] = spec.input;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let input = random_tensor(&mut rng, [2, c, h, w]);
        let a = scores_of(&net, &input, Mode::Eval);
        let b = scores_of(&loaded, &input, Mode::Eval);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let mut again = Vec::new();
        write_checkpoint(&loaded, &mut again).unwrap();
        assert_eq!(again, std::fs::read(&path).unwrap());
    }
}

#[test]
fn checkpoint_errors() {
    let net = perturbed(&tiny_spec(2), 20);
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    let err = read_checkpoint::<f64, _>(bad.as_slice()).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");

    let mut bad = bytes.clone();
    bad[4] = b'2';
    let err = read_checkpoint::<f64, _>(bad.as_slice()).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");

    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        let err = read_checkpoint::<f64, _>(&bytes[..cut]).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{cut}: {err}");
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(read_checkpoint::<f64, _>(long.as_slice()).is_err());
}

#[test]
fn float_checkpoint_matches_cast() {
    let net = perturbed(&tiny_spec(2), 21).cast::<f32>();
    let mut bytes = Vec::new();
    write_checkpoint(&net, &mut bytes).unwrap();
    let loaded: Network<f32> = read_checkpoint(bytes.as_slice()).unwrap();
    assert_eq!(loaded.params(), net.params());
}

#[test]
fn passes_are_bit_reproducible_across_thread_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let spec = NetworkSpec::default_for(50, 3).unwrap();
    let net = Network::<f32>::new(&spec, &mut rng).unwrap();
    let n = 4 * 3 * 10 * 50;
    let input = Tensor::from_vec([4, 3, 10, 50], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<LabelVector> = (0..4)
        .map(|i| LabelVector::new((0..3).map(|c| if c == i % 3 { 1 } else { -1 }).collect()).unwrap())
        .collect();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let fwd = net.forward(&input, Mode::Train).unwrap();
            let (loss, d) = batch_loss(fwd.scores(), &labels, &ClassWeights::uniform(3)).unwrap();
            let g = net.backward(&fwd, &d, true).unwrap();
            let mut bits: Vec<u32> = g.params.iter().flatten().map(|v| v.to_bits()).collect();
            bits.extend(g.input.unwrap().data().iter().map(|v| v.to_bits()));
            (loss.to_bits(), bits)
        })
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(3));
}
