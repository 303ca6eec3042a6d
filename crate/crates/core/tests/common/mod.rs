#![allow(dead_code)]

use operon::nn::{Activation, Architecture, DenseParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Worst discrepancies found for one random network.
#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub param_rel: f64,
    pub input_rel: f64,
    pub jvp_rel: f64,
    pub identity_rel: f64,
}

const EPS: f64 = 1e-6;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random architecture with 1–4 hidden layers of width at most 64.
pub fn random_net(seed: u64) -> DenseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = if rng.random_bool(0.5) { Architecture::Modified } else { Architecture::Plain };
    let act = if rng.random_bool(0.7) { Activation::Tanh } else { Activation::Sine };
    let depth = rng.random_range(1..=4);
    let mut widths = vec![rng.random_range(1..=6)];
    let shared = rng.random_range(1..=64);
    for _ in 0..depth {
        widths.push(match arch {
            Architecture::Modified => shared,
            Architecture::Plain => rng.random_range(1..=64),
        });
    }
    widths.push(rng.random_range(1..=5));
    DenseParams::init(&widths, act, arch, rng.random()).unwrap()
}

/// Compares reverse-mode gradients and forward-mode JVPs of a random network
/// against central finite differences of the scalar `cot · f(x)`.
pub fn check_network(seed: u64) -> GradientCheck {
    let net = random_net(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let x = random_vec(&mut rng, net.in_width());
    let cot = random_vec(&mut rng, net.out_width());
    let tangent = random_vec(&mut rng, net.in_width());
    let loss = |p: &DenseParams, input: &[f64]| dot(&cot, &p.forward(input).unwrap());

    let (grads, input_grad) = net.backward(&x, &cot).unwrap();

    // parameter gradient along a random direction and on a few coordinates
    let mut direction = net.zeros_like();
    for t in direction.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let ad: f64 = grads
        .tensors()
        .iter()
        .zip(direction.tensors())
        .map(|(g, v)| dot(g, v))
        .sum();
    let mut plus = net.clone();
    plus.add_scaled(&direction, EPS);
    let mut minus = net.clone();
    minus.add_scaled(&direction, -EPS);
    let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * EPS);
    let mut param_rel = rel(ad, fd);
    let sizes: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
    for _ in 0..5 {
        let ti = rng.random_range(0..sizes.len());
        let k = rng.random_range(0..sizes[ti]);
        let mut p = net.clone();
        p.tensors_mut()[ti][k] += EPS;
        let up = loss(&p, &x);
        p.tensors_mut()[ti][k] -= 2.0 * EPS;
        let down = loss(&p, &x);
        let fd = (up - down) / (2.0 * EPS);
        let g = grads.tensors()[ti][k];
        if g.abs().max(fd.abs()) > 1e-4 {
            param_rel = param_rel.max(rel(g, fd));
        }
    }

    // input gradient along the tangent
    let shifted = |s: f64| -> Vec<f64> { x.iter().zip(&tangent).map(|(a, b)| a + s * b).collect() };
    let fd_in = (loss(&net, &shifted(EPS)) - loss(&net, &shifted(-EPS))) / (2.0 * EPS);
    let input_rel = rel(dot(&input_grad, &tangent), fd_in);

    // forward-mode derivative against finite differences, componentwise
    let (y, dy) = net.jvp(&x, &tangent).unwrap();
    assert_eq!(y, net.forward(&x).unwrap());
    let yp = net.forward(&shifted(EPS)).unwrap();
    let ym = net.forward(&shifted(-EPS)).unwrap();
    let fd_jvp: Vec<f64> = yp.iter().zip(&ym).map(|(a, b)| (a - b) / (2.0 * EPS)).collect();
    let scale = dy.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-6);
    let jvp_rel = dy
        .iter()
        .zip(&fd_jvp)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;

    // <cot, J t> == <J^T cot, t>
    let lhs = dot(&cot, &dy);
    let rhs = dot(&input_grad, &tangent);
    let identity_rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0);

    GradientCheck {
        param_rel,
        input_rel,
        jvp_rel,
        identity_rel,
    }
}
