//! Dense networks in two fixed flavours: a plain multilayer perceptron and the
//! gated "modified" perceptron where every hidden layer mixes two encodings of
//! the input:
//!
//! ```text
//! U = σ(W_U x + b_U),  V = σ(W_V x + b_V),  H_0 = x
//! Z_k = σ(W_k H_k + b_k),  H_{k+1} = (1 - Z_k) ⊙ U + Z_k ⊙ V
//! y = W_L H_L + b_L
//! ```
//!
//! Per-sample evaluation (`forward`, `jvp`) works on slices; the batched tape
//! in [`Tape`] is what training uses.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sine,
}

impl Activation {
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(a),
            Activation::Relu => a.max(0.0),
            Activation::Sine => a.sin(),
        }
    }

    /// Derivative given the pre-activation `a` and the activation value `s`.
    #[inline]
    pub fn derivative(self, a: f64, s: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - s * s,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => a.cos(),
        }
    }
}

/// `tanh` through one branch-free exponential so that activation loops
/// vectorize; libm's version dominated training time. Absolute error stays
/// within a few ulp of 1.
#[inline]
pub(crate) fn tanh(a: f64) -> f64 {
    let t = exp_nonpositive(-2.0 * a.abs());
    ((1.0 - t) / (1.0 + t)).copysign(a)
}

/// `e^x` for `x <= 0`: `x = k ln 2 + r` with `|r| <= ln 2 / 2`, a degree-13
/// Taylor polynomial for `e^r`, and `2^k` assembled from exponent bits.
#[inline]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = x.max(-708.0);
    let kd = x * std::f64::consts::LOG2_E + SHIFTER;
    let k = kd - SHIFTER;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let bits = kd.to_bits().wrapping_sub(SHIFTER.to_bits()).wrapping_add(1023) << 52;
    p * f64::from_bits(bits)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Plain,
    Modified,
}

/// One affine map `W x + b` with `W` stored as `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Layer {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn glorot(out: usize, inp: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / (inp + out) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out, inp), || rng.random_range(-limit..limit));
        Layer {
            weight,
            bias: Array1::zeros(out),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.nrows()
    }

    #[inline]
    fn affine(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    fn affine_batch(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }
}

/// The two input encoders of the modified architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct Gates {
    pub u: Layer,
    pub v: Layer,
}

/// Weights and biases of a dense network.
///
/// Gradients reuse this type: a gradient is a `DenseParams` with the same
/// shapes, see [`DenseParams::zeros_like`].
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub layers: Vec<Layer>,
    pub gates: Option<Gates>,
    pub activation: Activation,
    pub seed: u64,
}

impl DenseParams {
    /// Glorot-uniform weights and zero biases for the given layer widths.
    pub fn init(
        widths: &[usize],
        activation: Activation,
        architecture: Architecture,
        seed: u64,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "a dense network needs at least an input and an output width, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Config(format!("zero layer width in {widths:?}")));
        }
        if architecture == Architecture::Modified {
            let hidden = &widths[1..widths.len() - 1];
            if hidden.is_empty() {
                return Err(Error::Config(
                    "the modified architecture needs at least one hidden layer".into(),
                ));
            }
            if hidden.iter().any(|&w| w != hidden[0]) {
                return Err(Error::Config(format!(
                    "the modified architecture needs equal hidden widths, got {hidden:?}"
                )));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = widths
            .windows(2)
            .map(|w| Layer::glorot(w[1], w[0], &mut rng))
            .collect();
        let gates = match architecture {
            Architecture::Plain => None,
            Architecture::Modified => Some(Gates {
                u: Layer::glorot(widths[1], widths[0], &mut rng),
                v: Layer::glorot(widths[1], widths[0], &mut rng),
            }),
        };
        Ok(DenseParams {
            layers,
            gates,
            activation,
            seed,
        })
    }

    pub fn architecture(&self) -> Architecture {
        if self.gates.is_some() {
            Architecture::Modified
        } else {
            Architecture::Plain
        }
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }

    /// Layer widths `[in, hidden.., out]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.in_width())
            .chain(self.layers.iter().map(Layer::out_width))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |l: &Layer| Layer::zeros(l.out_width(), l.in_width());
        DenseParams {
            layers: self.layers.iter().map(zero).collect(),
            gates: self.gates.as_ref().map(|g| Gates {
                u: zero(&g.u),
                v: zero(&g.v),
            }),
            activation: self.activation,
            seed: self.seed,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks that adjacent widths chain, gate shapes match and entries are finite.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("dense network without layers".into()));
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_width() != pair[1].in_width() {
                return Err(Error::Config(format!(
                    "layer {k} outputs {} features but layer {} expects {}",
                    pair[0].out_width(),
                    k + 1,
                    pair[1].in_width()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            check_len("bias", l.out_width(), l.bias.len())?;
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {k} has non-finite entries")));
            }
        }
        if let Some(g) = &self.gates {
            if self.layers.len() < 2 {
                return Err(Error::Config("gated network without hidden layers".into()));
            }
            let hidden = self.layers[0].out_width();
            if self.layers[..self.layers.len() - 1]
                .iter()
                .any(|l| l.out_width() != hidden)
            {
                return Err(Error::Config("gated network hidden widths differ".into()));
            }
            for gate in [&g.u, &g.v] {
                if gate.in_width() != self.in_width() || gate.out_width() != hidden {
                    return Err(Error::Config(format!(
                        "gate shape {}x{} does not match {}x{}",
                        gate.out_width(),
                        gate.in_width(),
                        hidden,
                        self.in_width()
                    )));
                }
                if gate.weight.iter().chain(gate.bias.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("gate has non-finite entries".into()));
                }
            }
        }
        Ok(())
    }

    /// Flat views of every tensor in a fixed order: layers (weight, bias), then gates.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let gates = self.gates.iter().flat_map(|g| [&g.u, &g.v]);
        self.layers
            .iter()
            .chain(gates)
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 4);
        for l in self.layers.iter_mut() {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
        }
        if let Some(g) = &mut self.gates {
            for l in [&mut g.u, &mut g.v] {
                out.push(l.weight.as_slice_mut().expect("standard layout"));
                out.push(l.bias.as_slice_mut().expect("standard layout"));
            }
        }
        out
    }

    /// Adds `scale * other` into `self`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &DenseParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    fn hidden_count(&self) -> usize {
        self.layers.len() - 1
    }

    /// Evaluates the network on one input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len("dense input", self.in_width(), input.len())?;
        Ok(self.forward_unchecked(input).to_vec())
    }

    fn forward_unchecked(&self, input: &[f64]) -> Array1<f64> {
        let act = self.activation;
        let x = Array1::from(input.to_vec());
        let gates = self
            .gates
            .as_ref()
            .map(|g| (g.u.affine(&x).mapv(|a| act.apply(a)), g.v.affine(&x).mapv(|a| act.apply(a))));
        let mut h = x;
        for layer in &self.layers[..self.hidden_count()] {
            let z = layer.affine(&h).mapv(|a| act.apply(a));
            h = match &gates {
                None => z,
                Some((u, v)) => mix(u, v, &z),
            };
        }
        self.layers[self.hidden_count()].affine(&h)
    }

    /// Forward-mode derivative along `tangent`: returns `(f(x), J(x)·tangent)`.
    ///
    /// The primal is computed by the same operations as [`forward`](Self::forward),
    /// so the two agree bitwise.
    pub fn jvp(&self, input: &[f64], tangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("dense input", self.in_width(), input.len())?;
        check_len("dense tangent", self.in_width(), tangent.len())?;
        let act = self.activation;
        let x = Array1::from(input.to_vec());
        let dx = Array1::from(tangent.to_vec());

        let encode = |layer: &Layer| {
            let a = layer.affine(&x);
            let s = a.mapv(|a| act.apply(a));
            let da = layer.weight.dot(&dx);
            let ds = ndarray::Zip::from(&a)
                .and(&s)
                .and(&da)
                .map_collect(|&a, &s, &da| act.derivative(a, s) * da);
            (s, ds)
        };
        let gates = self.gates.as_ref().map(|g| (encode(&g.u), encode(&g.v)));

        let mut h = x.clone();
        let mut dh = dx.clone();
        for layer in &self.layers[..self.hidden_count()] {
            let a = layer.affine(&h);
            let z = a.mapv(|a| act.apply(a));
            let da = layer.weight.dot(&dh);
            let dz = ndarray::Zip::from(&a)
                .and(&z)
                .and(&da)
                .map_collect(|&a, &z, &da| act.derivative(a, z) * da);
            match &gates {
                None => {
                    h = z;
                    dh = dz;
                }
                Some(((u, du), (v, dv))) => {
                    let next = mix(u, v, &z);
                    // d[(1-z)u + zv] = du + dz (v - u) + z (dv - du)
                    let mut dnext = du.clone();
                    ndarray::Zip::from(&mut dnext)
                        .and(&dz)
                        .and(u)
                        .and(v)
                        .for_each(|d, &dz, &u, &v| *d += dz * (v - u));
                    ndarray::Zip::from(&mut dnext)
                        .and(&z)
                        .and(du)
                        .and(dv)
                        .for_each(|d, &z, &du, &dv| *d += z * (dv - du));
                    h = next;
                    dh = dnext;
                }
            }
        }
        let last = &self.layers[self.hidden_count()];
        let y = last.affine(&h);
        let dy = last.weight.dot(&dh);
        Ok((y.to_vec(), dy.to_vec()))
    }

    /// Reverse-mode gradients of `<cotangent, f(input)>` with respect to every
    /// parameter and to the input.
    pub fn backward(&self, input: &[f64], cotangent: &[f64]) -> Result<(DenseParams, Vec<f64>)> {
        check_len("dense input", self.in_width(), input.len())?;
        check_len("dense cotangent", self.out_width(), cotangent.len())?;
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row shape");
        let g = Array2::from_shape_vec((1, cotangent.len()), cotangent.to_vec()).expect("row shape");
        let tape = self.forward_batch(x.view());
        let mut grads = self.zeros_like();
        let gx = self.backward_batch(&tape, g.view(), &mut grads);
        Ok((grads, gx.row(0).to_vec()))
    }

    /// Batched forward pass over the rows of `input`, keeping what the
    /// backward pass needs.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Tape {
        let act = self.activation;
        let encode = |layer: &Layer| {
            let a = layer.affine_batch(&input);
            let s = a.mapv(|a| act.apply(a));
            Activated { pre: a, post: s }
        };
        let gates = self.gates.as_ref().map(|g| (encode(&g.u), encode(&g.v)));

        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::with_capacity(self.hidden_count());
        inputs.push(input.to_owned());
        for layer in &self.layers[..self.hidden_count()] {
            let pre = layer.affine_batch(&inputs.last().expect("layer input").view());
            let post = pre.mapv(|a| act.apply(a));
            let next = match &gates {
                None => post.clone(),
                Some((u, v)) => {
                    let mut next = post.clone();
                    ndarray::Zip::from(&mut next)
                        .and(&u.post)
                        .and(&v.post)
                        .for_each(|z, &u, &v| *z = u + *z * (v - u));
                    next
                }
            };
            hidden.push(Activated { pre, post });
            inputs.push(next);
        }
        let output = self.layers[self.hidden_count()].affine_batch(&inputs.last().expect("final input").view());
        Tape {
            inputs,
            hidden,
            gates,
            output,
        }
    }

    /// Accumulates parameter gradients of `sum(cotangent ⊙ output)` into `grads`
    /// and returns the input gradient.
    pub fn backward_batch(&self, tape: &Tape, cotangent: ArrayView2<f64>, grads: &mut DenseParams) -> Array2<f64> {
        let act = self.activation;
        let last = self.hidden_count();

        grads.layers[last].weight += &cotangent.t().dot(&tape.inputs[last]);
        grads.layers[last].bias += &cotangent.sum_axis(Axis(0));
        let mut g_h = cotangent.dot(&self.layers[last].weight);

        let mut g_u = tape.gates.as_ref().map(|(u, _)| Array2::<f64>::zeros(u.post.raw_dim()));
        let mut g_v = g_u.clone();

        for k in (0..last).rev() {
            let Activated { pre, post } = &tape.hidden[k];
            let mut g_pre = match &tape.gates {
                None => g_h,
                Some((u, v)) => {
                    let (gu, gv) = (g_u.as_mut().expect("gate grad"), g_v.as_mut().expect("gate grad"));
                    ndarray::Zip::from(gu)
                        .and(gv)
                        .and(&g_h)
                        .and(post)
                        .for_each(|gu, gv, &gh, &z| {
                            *gu += gh * (1.0 - z);
                            *gv += gh * z;
                        });
                    let mut g_z = g_h;
                    ndarray::Zip::from(&mut g_z)
                        .and(&u.post)
                        .and(&v.post)
                        .for_each(|g, &u, &v| *g *= v - u);
                    g_z
                }
            };
            ndarray::Zip::from(&mut g_pre)
                .and(pre)
                .and(post)
                .for_each(|g, &a, &s| *g *= act.derivative(a, s));
            grads.layers[k].weight += &g_pre.t().dot(&tape.inputs[k]);
            grads.layers[k].bias += &g_pre.sum_axis(Axis(0));
            g_h = g_pre.dot(&self.layers[k].weight);
        }

        let mut g_x = g_h;
        if let (Some(gates), Some((u, v)), Some(gu), Some(gv)) = (&self.gates, &tape.gates, g_u, g_v) {
            let grad_gates = grads.gates.as_mut().expect("gradient gates");
            for (layer, enc, mut g, glayer) in [
                (&gates.u, u, gu, &mut grad_gates.u),
                (&gates.v, v, gv, &mut grad_gates.v),
            ] {
                ndarray::Zip::from(&mut g)
                    .and(&enc.pre)
                    .and(&enc.post)
                    .for_each(|g, &a, &s| *g *= act.derivative(a, s));
                glayer.weight += &g.t().dot(&tape.inputs[0]);
                glayer.bias += &g.sum_axis(Axis(0));
                g_x += &g.dot(&layer.weight);
            }
        }
        g_x
    }
}

#[inline]
fn mix(u: &Array1<f64>, v: &Array1<f64>, z: &Array1<f64>) -> Array1<f64> {
    let mut out = z.clone();
    ndarray::Zip::from(&mut out)
        .and(u)
        .and(v)
        .for_each(|z, &u, &v| *z = u + *z * (v - u));
    out
}

#[derive(Clone, Debug)]
pub struct Activated {
    pub pre: Array2<f64>,
    pub post: Array2<f64>,
}

/// Intermediate values from [`DenseParams::forward_batch`].
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input of every affine layer; `inputs[0]` is the network input.
    pub inputs: Vec<Array2<f64>>,
    hidden: Vec<Activated>,
    gates: Option<(Activated, Activated)>,
    pub output: Array2<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_net() -> DenseParams {
        // 1 -> 2 -> 1, tanh
        let mut p = DenseParams::init(&[1, 2, 1], Activation::Tanh, Architecture::Plain, 0).unwrap();
        p.layers[0].weight = ndarray::arr2(&[[1.0], [0.5]]);
        p.layers[0].bias = ndarray::arr1(&[0.0, -1.0]);
        p.layers[1].weight = ndarray::arr2(&[[2.0, -1.0]]);
        p.layers[1].bias = ndarray::arr1(&[0.25]);
        p
    }

    #[test]
    fn fast_tanh_matches_libm() {
        for i in -40_000..=40_000 {
            let a = i as f64 * 1e-3 + 1e-7;
            assert!((tanh(a) - a.tanh()).abs() < 5e-16, "a = {a}");
        }
        for a in [0.0, -0.0, 1e-300, 400.0, -400.0, 1e6] {
            assert!((tanh(a) - a.tanh()).abs() < 5e-16, "a = {a}");
        }
        for i in 0..=10_000 {
            let x = -(i as f64) * 0.0708;
            let rel = (exp_nonpositive(x) - x.exp()).abs() / x.exp();
            assert!(rel < 1e-15, "x = {x}, rel {rel}");
        }
    }

    #[test]
    fn init_shapes() {
        let p = DenseParams::init(&[2, 16, 3], Activation::Tanh, Architecture::Plain, 7).unwrap();
        assert_eq!(p.layers[0].weight.dim(), (16, 2));
        assert_eq!(p.layers[1].weight.dim(), (3, 16));
        assert_eq!(p.layers[0].bias.len(), 16);
        assert_eq!(p.layers[1].bias.len(), 3);
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let limit = (6.0f64 / 18.0).sqrt();
        assert!(p.layers[0].weight.iter().all(|w| w.abs() <= limit));
    }

    #[test]
    fn init_modified_counts() {
        let p = DenseParams::init(&[4, 32, 32, 8], Activation::Tanh, Architecture::Modified, 1).unwrap();
        assert_eq!(p.layers.len(), 3);
        let g = p.gates.as_ref().unwrap();
        assert_eq!(g.u.weight.dim(), (32, 4));
        assert_eq!(g.v.weight.dim(), (32, 4));
        // body: 32*4+32 + 32*32+32 + 8*32+8, gates: 2*(32*4+32)
        assert_eq!(p.num_parameters(), 160 + 1056 + 264 + 320);
        p.validate().unwrap();
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = DenseParams::init(&[3, 8, 2], Activation::Tanh, Architecture::Modified, 11).unwrap();
        let b = DenseParams::init(&[3, 8, 2], Activation::Tanh, Architecture::Modified, 11).unwrap();
        let c = DenseParams::init(&[3, 8, 2], Activation::Tanh, Architecture::Modified, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(matches!(
            DenseParams::init(&[], Activation::Tanh, Architecture::Plain, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            DenseParams::init(&[3], Activation::Tanh, Architecture::Plain, 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            DenseParams::init(&[3, 0, 1], Activation::Tanh, Architecture::Plain, 0),
            Err(Error::Config(_))
        ));
        assert!(DenseParams::init(&[3, 4, 5, 1], Activation::Tanh, Architecture::Modified, 0).is_err());
    }

    #[test]
    fn zero_net_gives_zero() {
        let p = DenseParams::init(&[3, 5, 2], Activation::Tanh, Architecture::Modified, 3)
            .unwrap()
            .zeros_like();
        assert_eq!(p.forward(&[0.3, -2.0, 9.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_plain_net() {
        let p = hand_net();
        let y = p.forward(&[1.0]).unwrap();
        let expected = 2.0 * 1.0f64.tanh() - (0.5f64 - 1.0).tanh() + 0.25;
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn equal_gates_collapse_to_u() {
        let mut p = DenseParams::init(&[2, 6, 6, 1], Activation::Tanh, Architecture::Modified, 5).unwrap();
        let g = p.gates.as_mut().unwrap();
        g.v = g.u.clone();
        g.u.bias.fill(0.3);
        g.v.bias.fill(0.3);
        let x = [0.7, -0.4];
        let u = g.u.affine(&Array1::from(x.to_vec())).mapv(f64::tanh);
        let out = &p.layers[2];
        let expected = out.affine(&u);
        let y = p.forward(&x).unwrap();
        assert!((y[0] - expected[0]).abs() < 1e-14);
    }

    #[test]
    fn shape_errors() {
        let p = hand_net();
        assert!(matches!(p.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(p.jvp(&[1.0], &[1.0, 0.0]), Err(Error::Shape { .. })));
        assert!(matches!(p.backward(&[1.0], &[1.0, 0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_tangent_and_cotangent() {
        let p = DenseParams::init(&[3, 7, 7, 2], Activation::Tanh, Architecture::Modified, 2).unwrap();
        let x = [0.1, 0.2, -0.3];
        let (_, dy) = p.jvp(&x, &[0.0; 3]).unwrap();
        assert!(dy.iter().all(|&v| v == 0.0));
        let (g, gx) = p.backward(&x, &[0.0, 0.0]).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(gx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_jvp_is_weight_times_tangent() {
        let p = DenseParams::init(&[3, 2], Activation::Tanh, Architecture::Plain, 9).unwrap();
        let t = [0.5, -1.0, 2.0];
        let (_, dy) = p.jvp(&[1.0, 1.0, 1.0], &t).unwrap();
        let expected = p.layers[0].weight.dot(&Array1::from(t.to_vec()));
        assert_eq!(dy, expected.to_vec());
    }

    #[test]
    fn cotangent_scaling_scales_gradients() {
        let p = DenseParams::init(&[2, 5, 5, 2], Activation::Tanh, Architecture::Modified, 4).unwrap();
        let x = [0.3, -0.8];
        let (g1, gx1) = p.backward(&x, &[0.7, -0.2]).unwrap();
        let (g2, gx2) = p.backward(&x, &[1.4, -0.4]).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert!((2.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
            }
        }
        for (x, y) in gx1.iter().zip(&gx2) {
            assert!((2.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }
    }

    #[test]
    fn batch_forward_matches_per_sample() {
        for arch in [Architecture::Plain, Architecture::Modified] {
            let p = DenseParams::init(&[3, 8, 8, 2], Activation::Tanh, arch, 21).unwrap();
            let rows = ndarray::arr2(&[[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]]);
            let tape = p.forward_batch(rows.view());
            for (r, out) in rows.rows().into_iter().zip(tape.output.rows()) {
                let y = p.forward(r.as_slice().unwrap()).unwrap();
                for (a, b) in y.iter().zip(out.iter()) {
                    assert!((a - b).abs() < 1e-14);
                }
            }
        }
    }
}
