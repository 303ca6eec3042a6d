//! Comparison models: a next-state feed-forward network and an ensemble of them.
//!
//! Both read `[state | sensor values | offsets | h]` through one plain dense
//! network and are rolled out with the same loop as the DeepONet.

use ndarray::{s, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTriplet;
use crate::deeponet::{check_dataset, LocalInput, Scaling, ScalingOptions};
use crate::error::{check_finite, check_len, Error, Result};
use crate::nn::{Activation, Architecture, DenseParams, Parameters};
use crate::predict::StepModel;
use crate::train::{fit, Schedule, TrainOutcome, Trainable, TrainingMatrices};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnnConfig {
    pub state_dim: usize,
    pub num_sensors: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Predict `x(t+h) − x(t)` instead of `x(t+h)`.
    #[serde(default)]
    pub residual: bool,
    pub seed: u64,
    #[serde(default)]
    pub scaling: ScalingOptions,
}

impl FnnConfig {
    /// Three hidden tanh layers of width 128, absolute next-state output.
    pub fn new(state_dim: usize, num_sensors: usize, seed: u64) -> Self {
        FnnConfig {
            state_dim,
            num_sensors,
            hidden: vec![128; 3],
            activation: Activation::Tanh,
            residual: false,
            seed,
            scaling: ScalingOptions::default(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.state_dim + 2 * self.num_sensors + 1
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(&self.hidden);
        w.push(self.state_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FnnParams {
    pub config: FnnConfig,
    pub net: DenseParams,
    pub scaling: Scaling,
    pub h_max: f64,
}

impl FnnParams {
    pub fn init(config: FnnConfig) -> Result<Self> {
        if config.state_dim == 0 || config.num_sensors == 0 {
            return Err(Error::Config("state_dim and num_sensors must be positive".into()));
        }
        let net = DenseParams::init(&config.widths(), config.activation, Architecture::Plain, config.seed)?;
        let scaling = Scaling::identity(config.state_dim);
        Ok(FnnParams {
            config,
            net,
            scaling,
            h_max: f64::MAX,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        check_len("fnn input width", self.config.input_width(), self.net.in_width())?;
        check_len("fnn output width", self.config.state_dim, self.net.out_width())?;
        check_len("scaling", self.config.state_dim, self.scaling.state_shift.len())
    }

    /// Scaled network input without the trailing step entry.
    fn context_input(&self, state: &[f64], local_input: &LocalInput) -> Result<Vec<f64>> {
        check_len("state", self.config.state_dim, state.len())?;
        check_len("sensor count", self.config.num_sensors, local_input.values.len())?;
        check_len("sensor offsets", self.config.num_sensors, local_input.offsets.len())?;
        check_finite("state", state)?;
        check_finite("sensor values", &local_input.values)?;
        let mut input = self.scaling.branch_input(state, local_input);
        input.push(0.0);
        Ok(input)
    }

    fn eval(&self, ctx: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if !(h.is_finite() && h >= 0.0) {
            return Err(Error::NonFinite(format!("step size must be finite and non-negative, got {h}")));
        }
        let mut input = ctx.to_vec();
        let last = input.len() - 1;
        input[last] = self.scaling.step_input(h);
        let mut tangent = vec![0.0; input.len()];
        tangent[last] = 1.0;
        let (mut y, dy) = self.net.jvp(&input, &tangent)?;
        if self.config.residual {
            for (yi, xi) in y.iter_mut().zip(&input[..self.config.state_dim]) {
                *yi += xi;
            }
        }
        Ok((self.scaling.state_from_model(&y), self.scaling.rate_from_model(&dy)))
    }

    /// Predicted next state.
    pub fn forward(&self, state: &[f64], local_input: &LocalInput, h: f64) -> Result<Vec<f64>> {
        Ok(self.eval(&self.context_input(state, local_input)?, h)?.0)
    }

    fn batch_prediction(&self, batch: &TrainingMatrices) -> (crate::nn::Tape, Array2<f64>) {
        let tape = self.net.forward_batch(batch.joint_input().view());
        let mut y = tape.output.clone();
        if self.config.residual {
            y += &batch.branch.slice(s![.., ..self.config.state_dim]);
        }
        (tape, y)
    }
}

impl Parameters for FnnParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.net.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.net.tensors_mut()
    }
}

impl Trainable for FnnParams {
    fn sse_and_grad(&self, batch: &TrainingMatrices) -> (f64, Self) {
        let (tape, y) = self.batch_prediction(batch);
        let residual = &y - &batch.target;
        let sse = residual.iter().map(|r| r * r).sum();
        let cot = residual * 2.0;
        let mut grad = FnnParams {
            config: self.config.clone(),
            net: self.net.zeros_like(),
            scaling: self.scaling.clone(),
            h_max: self.h_max,
        };
        self.net.backward_batch(&tape, cot.view(), &mut grad.net);
        (sse, grad)
    }

    fn sse(&self, batch: &TrainingMatrices) -> f64 {
        let (_, y) = self.batch_prediction(batch);
        (&y - &batch.target).iter().map(|r| r * r).sum()
    }
}

impl StepModel for FnnParams {
    type Context = Vec<f64>;
    type Cache = ();

    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn num_sensors(&self) -> usize {
        self.config.num_sensors
    }

    fn h_max(&self) -> f64 {
        self.h_max
    }

    fn context(&self, state: &[f64], local_input: &LocalInput) -> Result<Vec<f64>> {
        self.context_input(state, local_input)
    }

    fn advance(&self, ctx: &Vec<f64>, h: f64, _: &mut ()) -> Result<Vec<f64>> {
        Ok(self.eval(ctx, h)?.0)
    }

    fn advance_dh(&self, ctx: &Vec<f64>, h: f64, _: &mut ()) -> Result<(Vec<f64>, Vec<f64>)> {
        self.eval(ctx, h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleParams {
    pub members: Vec<FnnParams>,
}

impl EnsembleParams {
    pub fn new(members: Vec<FnnParams>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::Config("an ensemble needs at least one member".into()))?;
        for m in &members {
            m.validate()?;
            if m.config.widths() != first.config.widths() || m.config.residual != first.config.residual {
                return Err(Error::Config("ensemble members have different architectures".into()));
            }
        }
        Ok(EnsembleParams { members })
    }

    /// Unweighted mean of the member predictions.
    pub fn forward(&self, state: &[f64], local_input: &LocalInput, h: f64) -> Result<Vec<f64>> {
        let mut cache = ();
        let ctx = self.context(state, local_input)?;
        self.advance(&ctx, h, &mut cache)
    }
}

fn mean_of(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for r in rows {
        if acc.is_empty() {
            acc = r;
        } else {
            acc.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        }
    }
    acc.iter_mut().for_each(|a| *a /= k as f64);
    acc
}

impl StepModel for EnsembleParams {
    type Context = Vec<Vec<f64>>;
    type Cache = ();

    fn state_dim(&self) -> usize {
        self.members[0].config.state_dim
    }

    fn num_sensors(&self) -> usize {
        self.members[0].config.num_sensors
    }

    fn h_max(&self) -> f64 {
        self.members.iter().map(|m| m.h_max).fold(f64::INFINITY, f64::min)
    }

    fn context(&self, state: &[f64], local_input: &LocalInput) -> Result<Vec<Vec<f64>>> {
        self.members.iter().map(|m| m.context_input(state, local_input)).collect()
    }

    fn advance(&self, ctx: &Vec<Vec<f64>>, h: f64, _: &mut ()) -> Result<Vec<f64>> {
        let preds = self
            .members
            .iter()
            .zip(ctx)
            .map(|(m, c)| m.eval(c, h).map(|p| p.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_of(preds.into_iter(), self.members.len()))
    }

    fn advance_dh(&self, ctx: &Vec<Vec<f64>>, h: f64, _: &mut ()) -> Result<(Vec<f64>, Vec<f64>)> {
        let preds = self
            .members
            .iter()
            .zip(ctx)
            .map(|(m, c)| m.eval(c, h))
            .collect::<Result<Vec<_>>>()?;
        let k = self.members.len();
        let (values, rates): (Vec<_>, Vec<_>) = preds.into_iter().unzip();
        Ok((mean_of(values.into_iter(), k), mean_of(rates.into_iter(), k)))
    }
}

/// Fits one FNN with the shared Adam protocol.
pub fn train_fnn(triplets: &[TrainingTriplet], config: FnnConfig, schedule: &Schedule) -> Result<TrainOutcome<FnnParams>> {
    check_dataset(triplets, config.state_dim, config.num_sensors)?;
    let mut model = FnnParams::init(config)?;
    model.scaling = Scaling::fit(triplets, &model.config.scaling)?;
    model.h_max = triplets.iter().map(|t| t.h).fold(0.0, f64::max);
    let data = TrainingMatrices::build(triplets, &model.scaling)?;
    fit(model, &data, schedule, "fnn")
}

/// Seeds of ensemble member `k`: initialization and shuffling both shift by `k`.
pub fn member_seeds(config_seed: u64, schedule_seed: u64, k: usize) -> (u64, u64) {
    (config_seed.wrapping_add(k as u64), schedule_seed.wrapping_add(k as u64))
}

/// Trains `k` FNNs that differ only in their seeds. Members that diverge are
/// reported in the returned messages and their last finite parameters kept.
pub fn train_ensemble(
    triplets: &[TrainingTriplet],
    config: FnnConfig,
    k: usize,
    schedule: &Schedule,
) -> Result<(EnsembleParams, Vec<TrainOutcome<()>>)> {
    if k == 0 {
        return Err(Error::Config("ensemble size must be positive".into()));
    }
    let outcomes = (0..k)
        .into_par_iter()
        .map(|i| {
            let (init, shuffle) = member_seeds(config.seed, schedule.seed, i);
            let mut c = config.clone();
            c.seed = init;
            let s = Schedule {
                seed: shuffle,
                ..schedule.clone()
            };
            train_fnn(triplets, c, &s)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut members = Vec::with_capacity(k);
    let mut summaries = Vec::with_capacity(k);
    for o in outcomes {
        summaries.push(TrainOutcome {
            model: (),
            initial_loss: o.initial_loss,
            history: o.history,
            divergence: o.divergence,
        });
        members.push(o.model);
    }
    Ok((EnsembleParams::new(members)?, summaries))
}
