//! DeepONet for local solution operators.
//!
//! The branch network reads `[state | sensor values | relative sensor offsets]`,
//! the trunk network reads the step size `h`, and output component `i` is the
//! dot product of the `i`-th length-`q` chunks of the two feature vectors.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTriplet;
use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{Activation, Architecture, DenseParams, Parameters};
use crate::train::{fit, Schedule, TrainOutcome, Trainable, TrainingMatrices};

/// Input samples over one step: `values[i] = u(d_i)` and `offsets[i] = t_n - d_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalInput {
    pub values: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl LocalInput {
    /// One sensor at the start of the step.
    pub fn single(u: f64) -> Self {
        LocalInput {
            values: vec![u],
            offsets: vec![0.0],
        }
    }

    pub fn num_sensors(&self) -> usize {
        self.values.len()
    }

    /// Checks `offsets[0] == 0` and that offsets are non-positive and non-increasing.
    pub fn validate(&self) -> Result<()> {
        check_len("sensor offsets", self.values.len(), self.offsets.len())?;
        if self.values.is_empty() {
            return Err(Error::Config("a local input needs at least one sensor".into()));
        }
        check_finite("sensor values", &self.values)?;
        check_finite("sensor offsets", &self.offsets)?;
        if self.offsets[0] != 0.0 {
            return Err(Error::Config(format!(
                "first sensor must sit at the step start, offset is {}",
                self.offsets[0]
            )));
        }
        if self.offsets.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Config(format!(
                "sensor offsets must be non-increasing: {:?}",
                self.offsets
            )));
        }
        Ok(())
    }
}

/// Raw branch input `[state | values | offsets]`.
pub fn assemble_branch_input(state: &[f64], local_input: &LocalInput) -> Vec<f64> {
    let mut out = Vec::with_capacity(state.len() + 2 * local_input.values.len());
    out.extend_from_slice(state);
    out.extend_from_slice(&local_input.values);
    out.extend_from_slice(&local_input.offsets);
    out
}

/// Which affine rescalings to fit from the training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Standardize states to zero mean and unit variance per dimension.
    #[serde(default)]
    pub standardize_state: bool,
    /// Standardize sensor values likewise.
    #[serde(default)]
    pub standardize_input: bool,
    /// Step sizes and sensor offsets are divided by this before entering the networks.
    #[serde(default = "one")]
    pub step_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            standardize_state: false,
            standardize_input: false,
            step_scale: 1.0,
        }
    }
}

/// Affine maps between physical units and network coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub state_shift: Vec<f64>,
    pub state_scale: Vec<f64>,
    pub input_shift: f64,
    pub input_scale: f64,
    pub step_scale: f64,
}

impl Scaling {
    pub fn identity(state_dim: usize) -> Self {
        Scaling {
            state_shift: vec![0.0; state_dim],
            state_scale: vec![1.0; state_dim],
            input_shift: 0.0,
            input_scale: 1.0,
            step_scale: 1.0,
        }
    }

    /// Fits shifts and scales from the `state` fields and sensor values of `triplets`.
    pub fn fit(triplets: &[TrainingTriplet], options: &ScalingOptions) -> Result<Self> {
        let first = triplets
            .first()
            .ok_or_else(|| Error::Config("cannot fit scaling on an empty dataset".into()))?;
        if !(options.step_scale > 0.0 && options.step_scale.is_finite()) {
            return Err(Error::Config(format!("step_scale must be positive, got {}", options.step_scale)));
        }
        let n = first.state.len();
        let mut scaling = Scaling::identity(n);
        scaling.step_scale = options.step_scale;
        if options.standardize_state {
            for i in 0..n {
                let (mean, std) = mean_std(triplets.iter().map(|t| t.state[i]));
                scaling.state_shift[i] = mean;
                scaling.state_scale[i] = if std > 0.0 { std } else { 1.0 };
            }
        }
        if options.standardize_input {
            let (mean, std) = mean_std(triplets.iter().flat_map(|t| t.local_input.values.iter().copied()));
            scaling.input_shift = mean;
            scaling.input_scale = if std > 0.0 { std } else { 1.0 };
        }
        Ok(scaling)
    }

    pub fn branch_input(&self, state: &[f64], local_input: &LocalInput) -> Vec<f64> {
        let mut out = Vec::with_capacity(state.len() + 2 * local_input.values.len());
        out.extend(self.state_to_model(state));
        out.extend(
            local_input
                .values
                .iter()
                .map(|u| (u - self.input_shift) / self.input_scale),
        );
        out.extend(local_input.offsets.iter().map(|d| d / self.step_scale));
        out
    }

    #[inline]
    pub fn step_input(&self, h: f64) -> f64 {
        h / self.step_scale
    }

    pub fn state_to_model(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.state_shift.iter().zip(&self.state_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn state_from_model(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.state_shift.iter().zip(&self.state_scale))
            .map(|(v, (m, s))| m + s * v)
            .collect()
    }

    /// Converts `d(model output)/d(step input)` into `d(state)/dh`.
    pub fn rate_from_model(&self, dy: &[f64]) -> Vec<f64> {
        dy.iter()
            .zip(&self.state_scale)
            .map(|(v, s)| s * v / self.step_scale)
            .collect()
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let count = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / count;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepONetConfig {
    pub state_dim: usize,
    pub num_sensors: usize,
    /// Basis functions per output component (`q`).
    pub basis_per_output: usize,
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    pub activation: Activation,
    pub architecture: Architecture,
    pub seed: u64,
    #[serde(default)]
    pub scaling: ScalingOptions,
}

impl DeepONetConfig {
    /// Three hidden layers of width 100 in both networks, gated, tanh, `q = 20`.
    pub fn new(state_dim: usize, num_sensors: usize, seed: u64) -> Self {
        DeepONetConfig {
            state_dim,
            num_sensors,
            basis_per_output: 20,
            branch_hidden: vec![100; 3],
            trunk_hidden: vec![100; 3],
            activation: Activation::Tanh,
            architecture: Architecture::Modified,
            seed,
            scaling: ScalingOptions::default(),
        }
    }

    pub fn branch_widths(&self) -> Vec<usize> {
        let mut w = vec![self.state_dim + 2 * self.num_sensors];
        w.extend(&self.branch_hidden);
        w.push(self.feature_width());
        w
    }

    pub fn trunk_widths(&self) -> Vec<usize> {
        let mut w = vec![1];
        w.extend(&self.trunk_hidden);
        w.push(self.feature_width());
        w
    }

    pub fn feature_width(&self) -> usize {
        self.state_dim * self.basis_per_output
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.num_sensors == 0 || self.basis_per_output == 0 {
            return Err(Error::Config(
                "state_dim, num_sensors and basis_per_output must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trained (or initial) DeepONet weights with their configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeepONetParams {
    pub config: DeepONetConfig,
    pub branch: DenseParams,
    pub trunk: DenseParams,
    pub scaling: Scaling,
    /// Largest step size seen in training; larger steps extrapolate.
    pub h_max: f64,
}

/// Trunk features and their derivative with respect to `h`, in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct TrunkEval {
    pub features: Vec<f64>,
    pub d_features: Vec<f64>,
}

impl DeepONetParams {
    pub fn init(config: DeepONetConfig) -> Result<Self> {
        config.validate()?;
        let branch = DenseParams::init(&config.branch_widths(), config.activation, config.architecture, config.seed)?;
        let trunk = DenseParams::init(
            &config.trunk_widths(),
            config.activation,
            config.architecture,
            config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        )?;
        let scaling = Scaling::identity(config.state_dim);
        Ok(DeepONetParams {
            config,
            branch,
            trunk,
            scaling,
            h_max: f64::MAX,
        })
    }

    /// Checks the shape invariants between configuration, networks and scaling.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.branch.validate()?;
        self.trunk.validate()?;
        if self.branch.in_width() != self.config.state_dim + 2 * self.config.num_sensors {
            return Err(Error::Shape {
                context: "branch input width",
                expected: self.config.state_dim + 2 * self.config.num_sensors,
                actual: self.branch.in_width(),
            });
        }
        check_len("trunk input width", 1, self.trunk.in_width())?;
        check_len("branch output width", self.config.feature_width(), self.branch.out_width())?;
        check_len("trunk output width", self.config.feature_width(), self.trunk.out_width())?;
        check_len("scaling", self.config.state_dim, self.scaling.state_shift.len())?;
        check_len("scaling", self.config.state_dim, self.scaling.state_scale.len())?;
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    pub fn num_sensors(&self) -> usize {
        self.config.num_sensors
    }

    fn check_inputs(&self, state: &[f64], local_input: &LocalInput) -> Result<()> {
        check_len("state", self.config.state_dim, state.len())?;
        check_len("sensor count", self.config.num_sensors, local_input.values.len())?;
        check_len("sensor offsets", self.config.num_sensors, local_input.offsets.len())?;
        check_finite("state", state)?;
        check_finite("sensor values", &local_input.values)?;
        check_finite("sensor offsets", &local_input.offsets)
    }

    fn check_step(h: f64) -> Result<()> {
        if h.is_finite() && h >= 0.0 {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("step size must be finite and non-negative, got {h}")))
        }
    }

    /// Branch features `β` for one state and local input.
    pub fn branch_features(&self, state: &[f64], local_input: &LocalInput) -> Result<Vec<f64>> {
        self.check_inputs(state, local_input)?;
        self.branch.forward(&self.scaling.branch_input(state, local_input))
    }

    /// Trunk features `τ(h)`.
    pub fn trunk_features(&self, h: f64) -> Result<Vec<f64>> {
        Self::check_step(h)?;
        self.trunk.forward(&[self.scaling.step_input(h)])
    }

    /// Trunk features and `dτ/dh` from one forward-mode pass.
    pub fn trunk_eval(&self, h: f64) -> Result<TrunkEval> {
        Self::check_step(h)?;
        let (features, d_features) = self.trunk.jvp(&[self.scaling.step_input(h)], &[1.0])?;
        Ok(TrunkEval { features, d_features })
    }

    /// Chunked dot products of `β` and `τ`, in model units.
    pub fn combine(&self, branch: &[f64], trunk: &[f64]) -> Vec<f64> {
        let q = self.config.basis_per_output;
        branch
            .chunks(q)
            .zip(trunk.chunks(q))
            .map(|(b, t)| b.iter().zip(t).map(|(x, y)| x * y).sum())
            .collect()
    }

    /// Next state from cached branch features.
    pub fn predict_from_features(&self, branch: &[f64], trunk: &[f64]) -> Vec<f64> {
        self.scaling.state_from_model(&self.combine(branch, trunk))
    }

    /// Next state and its `h`-derivative from cached branch features.
    pub fn predict_dh_from_features(&self, branch: &[f64], trunk: &TrunkEval) -> (Vec<f64>, Vec<f64>) {
        let value = self.predict_from_features(branch, &trunk.features);
        let rate = self.scaling.rate_from_model(&self.combine(branch, &trunk.d_features));
        (value, rate)
    }

    /// Predicted state after a step of `h` from `state` under `local_input`.
    pub fn forward(&self, state: &[f64], local_input: &LocalInput, h: f64) -> Result<Vec<f64>> {
        let beta = self.branch_features(state, local_input)?;
        let tau = self.trunk_features(h)?;
        Ok(self.predict_from_features(&beta, &tau))
    }

    /// Prediction and its derivative with respect to `h`; `h = 0` is allowed.
    pub fn forward_dh(&self, state: &[f64], local_input: &LocalInput, h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let beta = self.branch_features(state, local_input)?;
        let trunk = self.trunk_eval(h)?;
        Ok(self.predict_dh_from_features(&beta, &trunk))
    }

    /// Mean squared error over `batch`, measured in model coordinates
    /// (standardized when the state scaling is not the identity).
    pub fn loss(&self, batch: &[TrainingTriplet]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Config("loss of an empty batch".into()));
        }
        let mut total = 0.0;
        for t in batch {
            let pred = self.scaling.state_to_model(&self.forward(&t.state, &t.local_input, t.h)?);
            check_len("target state", self.config.state_dim, t.next_state.len())?;
            let target = self.scaling.state_to_model(&t.next_state);
            total += pred.iter().zip(&target).map(|(p, y)| (y - p) * (y - p)).sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    fn batch_outputs(&self, batch: &TrainingMatrices) -> (crate::nn::Tape, crate::nn::Tape, Array2<f64>) {
        let branch = self.branch.forward_batch(batch.branch.view());
        let trunk = self.trunk.forward_batch(batch.step.view());
        let y = chunk_dot(&branch.output.view(), &trunk.output.view(), self.config.basis_per_output);
        (branch, trunk, y)
    }
}

fn chunk_dot(beta: &ArrayView2<f64>, tau: &ArrayView2<f64>, q: usize) -> Array2<f64> {
    let rows = beta.nrows();
    let n = beta.ncols() / q;
    let mut y = Array2::zeros((rows, n));
    for r in 0..rows {
        let (b, t) = (beta.row(r), tau.row(r));
        for i in 0..n {
            let mut acc = 0.0;
            for k in i * q..(i + 1) * q {
                acc += b[k] * t[k];
            }
            y[[r, i]] = acc;
        }
    }
    y
}

impl Parameters for DeepONetParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.branch.tensors();
        t.extend(self.trunk.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.branch.tensors_mut();
        t.extend(self.trunk.tensors_mut());
        t
    }
}

impl Trainable for DeepONetParams {
    fn sse_and_grad(&self, batch: &TrainingMatrices) -> (f64, Self) {
        let q = self.config.basis_per_output;
        let (branch_tape, trunk_tape, y) = self.batch_outputs(batch);
        let residual = &y - &batch.target;
        let sse = residual.iter().map(|r| r * r).sum();

        let beta = &branch_tape.output;
        let tau = &trunk_tape.output;
        let mut g_beta = Array2::zeros(beta.raw_dim());
        let mut g_tau = Array2::zeros(tau.raw_dim());
        Zip::indexed(&mut g_beta)
            .and(&mut g_tau)
            .and(beta)
            .and(tau)
            .for_each(|(r, k), gb, gt, &b, &t| {
                let g = 2.0 * residual[[r, k / q]];
                *gb = g * t;
                *gt = g * b;
            });

        let mut grad = DeepONetParams {
            config: self.config.clone(),
            branch: self.branch.zeros_like(),
            trunk: self.trunk.zeros_like(),
            scaling: self.scaling.clone(),
            h_max: self.h_max,
        };
        self.branch.backward_batch(&branch_tape, g_beta.view(), &mut grad.branch);
        self.trunk.backward_batch(&trunk_tape, g_tau.view(), &mut grad.trunk);
        (sse, grad)
    }

    fn sse(&self, batch: &TrainingMatrices) -> f64 {
        let (_, _, y) = self.batch_outputs(batch);
        (&y - &batch.target).iter().map(|r| r * r).sum()
    }
}

/// Checks that `triplets` match the dimensions declared by `config`.
pub fn check_dataset(triplets: &[TrainingTriplet], state_dim: usize, num_sensors: usize) -> Result<()> {
    if triplets.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    for t in triplets {
        check_len("dataset state", state_dim, t.state.len())?;
        check_len("dataset next state", state_dim, t.next_state.len())?;
        check_len("dataset sensor count", num_sensors, t.local_input.values.len())?;
        check_len("dataset sensor offsets", num_sensors, t.local_input.offsets.len())?;
    }
    Ok(())
}

/// Fits a DeepONet to `triplets` with minibatch Adam.
pub fn train(triplets: &[TrainingTriplet], config: DeepONetConfig, schedule: &Schedule) -> Result<TrainOutcome<DeepONetParams>> {
    check_dataset(triplets, config.state_dim, config.num_sensors)?;
    let mut model = DeepONetParams::init(config)?;
    model.scaling = Scaling::fit(triplets, &model.config.scaling)?;
    model.h_max = triplets.iter().map(|t| t.h).fold(0.0, f64::max);
    let data = TrainingMatrices::build(triplets, &model.scaling)?;
    fit(model, &data, schedule, "deeponet")
}
