//! Helpers shared by the integration tests.
#![allow(dead_code)]

use deepsignal::dqn::network::{gradients, ConvSpec, Input, LossKind, NetworkSpec, QNetwork, Sample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small random network using every layer type: two convolutions with a pool
/// between them, a hidden dense layer and the linear head.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input_size: 12,
        input_channels: 2,
        convs: vec![
            ConvSpec { kernel: 3, stride: 1, out_channels: 3 },
            ConvSpec { kernel: 2, stride: 2, out_channels: 4 },
        ],
        pool_after_first: true,
        hidden: Some(6),
        outputs: 5,
    }
}

pub fn max_relative_error(net: &QNetwork, samples: &[Sample<'_>], targets: &[f64], loss: LossKind) -> f64 {
    let (_, analytic) = gradients(net, samples, targets, loss).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for i in 0..net.params().len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let (lp, _) = gradients(&probe, samples, targets, loss).unwrap();
        probe.params_mut()[i] = orig - h;
        let (lm, _) = gradients(&probe, samples, targets, loss).unwrap();
        probe.params_mut()[i] = orig;
        let numeric = (lp - lm) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

fn conv(kernel: usize, stride: usize, out_channels: usize) -> ConvSpec {
    ConvSpec { kernel, stride, out_channels }
}

/// Randomised small networks covering each layer arrangement: dense only,
/// a single convolution with and without pooling or a hidden layer, and the
/// full conv–pool–conv–dense stack.
pub fn gradient_cases() -> Vec<(&'static str, NetworkSpec)> {
    let spec = |input_size, input_channels, convs, pool_after_first, hidden| NetworkSpec {
        input_size,
        input_channels,
        convs,
        pool_after_first,
        hidden,
        outputs: 5,
    };
    vec![
        ("dense", spec(3, 1, vec![], false, Some(4))),
        ("conv", spec(5, 1, vec![conv(3, 1, 2)], false, None)),
        ("conv-hidden", spec(5, 2, vec![conv(3, 1, 2)], false, Some(3))),
        ("conv-pool", spec(6, 1, vec![conv(3, 1, 2)], true, None)),
        ("strided-convs", spec(7, 1, vec![conv(3, 2, 2), conv(2, 1, 3)], false, Some(3))),
        ("full", tiny_spec()),
    ]
}

/// Worst relative error per case and loss over three random instances each.
pub fn gradient_errors(seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, spec) in gradient_cases() {
        for loss in [LossKind::Squared, LossKind::Huber { delta: 1.0 }] {
            let mut worst: f64 = 0.0;
            for trial in 0..3 {
                let mut net = QNetwork::initialized(spec.clone(), trial).unwrap();
                // continuous inputs and non-zero biases keep every unit away from its kink
                for p in net.params_mut() {
                    *p += rng.random_range(-0.05..0.05);
                }
                let xs: Vec<Vec<f64>> =
                    (0..3).map(|_| (0..spec.input_len()).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
                let samples: Vec<Sample<'_>> =
                    xs.iter().enumerate().map(|(i, x)| Sample { input: Input::Dense(x), action: (i * 2) % 5 }).collect();
                let targets: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                worst = worst.max(max_relative_error(&net, &samples, &targets, loss));
            }
            out.push((format!("{name}/{loss:?}"), worst));
        }
    }
    out
}
