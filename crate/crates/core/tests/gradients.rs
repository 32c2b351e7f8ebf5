//! Central-difference checks for every backward pass: dense nets, losses,
//! the rule network, and the full symbolization path including the cluster
//! bank.

use rand::Rng;
use seqrule::matrix::Matrix;
use seqrule::nn::{loss_eval, rng_from_seed, Activation, DenseNet, LossKind, RngState};
use seqrule::rulenet::{rulenet_forward, rulenet_forward_trace, rulenet_vjp, RuleNetParams};
use seqrule::symbolize::{symbolize, symbolize_trace, symbolize_vjp, ClusterBank, SymbolizerConfig};

const FD_STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn assert_close(analytic: f64, fd: f64, what: &str) {
    let denom = analytic.abs().max(fd.abs());
    let ok = if denom < 1e-7 {
        (analytic - fd).abs() < 1e-7
    } else {
        (analytic - fd).abs() / denom < REL_TOL
    };
    assert!(ok, "{what}: analytic {analytic} vs finite difference {fd}");
}

fn central_diff(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

fn random_net(rng: &mut RngState) -> (DenseNet, Vec<f64>, Vec<f64>) {
    let depth = rng.random_range(1..=3usize);
    let mut sizes = vec![rng.random_range(2..=8usize)];
    let mut acts = Vec::new();
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=8usize));
        acts.push(match rng.random_range(0..3u8) {
            0 => Activation::Linear,
            1 => Activation::Relu,
            _ => Activation::Sigmoid,
        });
    }
    let mut net = DenseNet::new_glorot(&sizes, &acts, rng).unwrap();
    // non-zero biases, otherwise a fully dead ReLU layer parks the next
    // pre-activation exactly on the kink
    for layer in net.layers.iter_mut() {
        for b in layer.bias.iter_mut() {
            *b = rng.random_range(-0.3..0.3);
        }
    }
    // resample inputs that leave any ReLU pre-activation inside the finite
    // difference step, where the one-sided subgradient cannot match
    let x = loop {
        let candidate: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = net.forward(&candidate).unwrap();
        let near_kink = net.layers.iter().zip(&trace.pre).any(|(layer, pre)| {
            layer.activation == Activation::Relu && pre.iter().any(|p| p.abs() < 50.0 * FD_STEP)
        });
        if !near_kink {
            break candidate;
        }
    };
    let u: Vec<f64> = (0..*sizes.last().unwrap())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    (net, x, u)
}

#[test]
fn net_backward_matches_central_differences() {
    let mut rng = rng_from_seed(2024);
    for case in 0..100 {
        let (mut net, x, u) = random_net(&mut rng);
        let trace = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&trace, &u).unwrap();
        let eval = |net: &DenseNet, x: &[f64]| -> f64 {
            let out = net.forward(x).unwrap();
            out.output().iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        for li in 0..net.layers.len() {
            for wi in 0..net.layers[li].weights.data.len() {
                let base = net.layers[li].weights.data[wi];
                let fd = central_diff(|h| {
                    net.layers[li].weights.data[wi] = base + h;
                    let v = eval(&net, &x);
                    net.layers[li].weights.data[wi] = base;
                    v
                });
                assert_close(grads.layers[li].0.data[wi], fd, &format!("case {case} w{li}.{wi}"));
            }
            for bi in 0..net.layers[li].bias.len() {
                let base = net.layers[li].bias[bi];
                let fd = central_diff(|h| {
                    net.layers[li].bias[bi] = base + h;
                    let v = eval(&net, &x);
                    net.layers[li].bias[bi] = base;
                    v
                });
                assert_close(grads.layers[li].1[bi], fd, &format!("case {case} b{li}.{bi}"));
            }
        }
        for xi in 0..x.len() {
            let fd = central_diff(|h| {
                let mut xp = x.clone();
                xp[xi] += h;
                eval(&net, &xp)
            });
            assert_close(dx[xi], fd, &format!("case {case} x{xi}"));
        }
    }
}

#[test]
fn loss_gradients_match_central_differences() {
    let mut rng = rng_from_seed(77);
    for _ in 0..50 {
        let n = rng.random_range(1..6usize);
        let target: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        for kind in [LossKind::MeanSquaredError, LossKind::BinaryCrossEntropy] {
            let pred: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            let (_, grad) = loss_eval(kind, &pred, &target).unwrap();
            for i in 0..n {
                let fd = central_diff(|h| {
                    let mut p = pred.clone();
                    p[i] += h;
                    loss_eval(kind, &p, &target).unwrap().0
                });
                assert_close(grad[i], fd, "loss grad");
            }
        }
    }
}

#[test]
fn rulenet_backward_matches_central_differences() {
    let mut rng = rng_from_seed(4242);
    for case in 0..100 {
        let n = rng.random_range(3..7usize);
        let h = rng.random_range(2..5usize);
        let m = rng.random_range(1..4usize);
        let mut params = RuleNetParams::new_random(&[n, h, m], 0.5, &mut rng).unwrap();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let trace = rulenet_forward_trace(&params, &v).unwrap();
        let (raw_grads, dv) = rulenet_vjp(&params, &trace, 1.0).unwrap();
        for li in 0..params.raw.len() {
            for wi in 0..params.raw[li].data.len() {
                let base = params.raw[li].data[wi];
                let fd = central_diff(|h| {
                    params.raw[li].data[wi] = base + h;
                    let y = rulenet_forward(&params, &v).unwrap();
                    params.raw[li].data[wi] = base;
                    y
                });
                assert_close(raw_grads[li].data[wi], fd, &format!("case {case} raw{li}.{wi}"));
            }
        }
        for vi in 0..v.len() {
            let fd = central_diff(|h| {
                let mut vp = v.clone();
                vp[vi] += h;
                rulenet_forward(&params, &vp).unwrap()
            });
            assert_close(dv[vi], fd, &format!("case {case} v{vi}"));
        }
    }
}

#[test]
fn symbolize_backward_matches_central_differences() {
    let mut rng = rng_from_seed(31337);
    for case in 0..100 {
        let cfg = SymbolizerConfig {
            window_len: 3,
            regions: 2,
            clusters: 2,
            embed_dim: 3,
            alpha: rng.random_range(0.5..4.0),
        };
        let mut encoder = DenseNet::new_glorot(
            &[3, 4, 3],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let mut bank = ClusterBank {
            centers: (0..2)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        };
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u: Vec<f64> = (0..cfg.clusters * cfg.regions)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let eval = |encoder: &DenseNet, bank: &ClusterBank| -> f64 {
            let v = symbolize(&x, encoder, bank, &cfg).unwrap();
            v.values.iter().zip(&u).map(|(a, b)| a * b).sum()
        };
        let trace = symbolize_trace(&x, &encoder, &bank, &cfg).unwrap();
        let (enc_grads, bank_grads) =
            symbolize_vjp(&trace, &encoder, &bank, cfg.alpha, &u, 0.0, None).unwrap();
        for li in 0..encoder.layers.len() {
            for wi in 0..encoder.layers[li].weights.data.len() {
                let base = encoder.layers[li].weights.data[wi];
                let fd = central_diff(|h| {
                    encoder.layers[li].weights.data[wi] = base + h;
                    let v = eval(&encoder, &bank);
                    encoder.layers[li].weights.data[wi] = base;
                    v
                });
                assert_close(
                    enc_grads.layers[li].0.data[wi],
                    fd,
                    &format!("case {case} enc w{li}.{wi}"),
                );
            }
        }
        for ci in 0..bank.centers.len() {
            for di in 0..bank.centers[ci].len() {
                let base = bank.centers[ci][di];
                let fd = central_diff(|h| {
                    bank.centers[ci][di] = base + h;
                    let v = eval(&encoder, &bank);
                    bank.centers[ci][di] = base;
                    v
                });
                assert_close(bank_grads[ci][di], fd, &format!("case {case} bank {ci}.{di}"));
            }
        }
    }
}
