//! Independent checks of the Q-network: a naive nested-loop forward pass and
//! central finite differences against the analytic gradients.

mod common;

use deepsignal::dqn::network::{Input, NetworkSpec, QNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight transcription of the layer definitions, one output element at a time.
fn naive_forward(net: &QNetwork, x: &[f64]) -> Vec<f64> {
    let spec = net.spec().clone();
    let mut side = spec.input_size;
    let mut ch = spec.input_channels;
    let mut a = x.to_vec();
    for (l, c) in spec.convs.iter().enumerate() {
        let (w, b) = net.layer(l);
        let out_side = (side - c.kernel) / c.stride + 1;
        let mut out = vec![0.0; out_side * out_side * c.out_channels];
        for oy in 0..out_side {
            for ox in 0..out_side {
                for o in 0..c.out_channels {
                    let mut s = b[o];
                    for ky in 0..c.kernel {
                        for kx in 0..c.kernel {
                            for i in 0..ch {
                                let iy = oy * c.stride + ky;
                                let ix = ox * c.stride + kx;
                                s += a[(iy * side + ix) * ch + i] * w[((ky * c.kernel + kx) * ch + i) * c.out_channels + o];
                            }
                        }
                    }
                    out[(oy * out_side + ox) * c.out_channels + o] = s.max(0.0);
                }
            }
        }
        a = out;
        side = out_side;
        ch = c.out_channels;
        if l == 0 && spec.pool_after_first {
            let ps = side / 2;
            let mut pooled = vec![0.0; ps * ps * ch];
            for py in 0..ps {
                for px in 0..ps {
                    for i in 0..ch {
                        let mut m = f64::NEG_INFINITY;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                m = m.max(a[((2 * py + dy) * side + 2 * px + dx) * ch + i]);
                            }
                        }
                        pooled[(py * ps + px) * ch + i] = m;
                    }
                }
            }
            a = pooled;
            side = ps;
        }
    }
    let widths: Vec<usize> = spec.hidden.into_iter().chain([spec.outputs]).collect();
    let n_dense = widths.len();
    for (k, &width) in widths.iter().enumerate() {
        let (w, b) = net.layer(spec.convs.len() + k);
        let mut out = vec![0.0; width];
        for (o, v) in out.iter_mut().enumerate() {
            let mut s = b[o];
            for (i, xi) in a.iter().enumerate() {
                s += xi * w[i * width + o];
            }
            *v = if k + 1 < n_dense { s.max(0.0) } else { s };
        }
        a = out;
    }
    a
}

fn random_input(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect()
}

#[test]
fn forward_matches_naive_loops_small() {
    let spec = NetworkSpec::small();
    let net = QNetwork::initialized(spec.clone(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_input(spec.input_len(), &mut rng);
    let idx: Vec<u32> = x.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i as u32).collect();
    let want = naive_forward(&net, &x);
    for got in [net.forward(Input::Dense(&x)).unwrap(), net.forward(Input::Binary(&idx)).unwrap()] {
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }
}

#[test]
fn forward_matches_naive_loops_large() {
    let spec = NetworkSpec::large();
    let net = QNetwork::initialized(spec.clone(), 3).unwrap();
    let x = random_input(spec.input_len(), &mut ChaCha8Rng::seed_from_u64(8));
    let want = naive_forward(&net, &x);
    let got = net.forward(Input::Dense(&x)).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{g} vs {w}");
    }
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for (name, err) in common::gradient_errors(21) {
        assert!(err < 1e-4, "{name}: relative error {err}");
    }
}
