//! Minibatch Adam loop shared by the DeepONet and the baselines.

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTriplet;
use crate::deeponet::Scaling;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Parameters};

/// Optimizer and data-order settings for one training run. Missing fields
/// take their [`Default`] values when deserialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub report_every: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 20000,
            batch_size: 256,
            base_lr: 1e-3,
            decay_rate: 0.9,
            decay_every: 2000,
            seed: 0,
            report_every: 1000,
        }
    }
}

impl Schedule {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            base_lr: self.base_lr,
            decay_rate: self.decay_rate,
            decay_every: self.decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.adam().validate()
    }
}

/// Network-ready copies of a dataset: scaled branch inputs, trunk inputs and targets.
#[derive(Clone, Debug)]
pub struct TrainingMatrices {
    /// `[state | sensor values | offsets]`, scaled; one row per triplet.
    pub branch: Array2<f64>,
    /// Scaled step sizes, `N × 1`.
    pub step: Array2<f64>,
    /// Scaled next states.
    pub target: Array2<f64>,
}

impl TrainingMatrices {
    pub fn build(triplets: &[TrainingTriplet], scaling: &Scaling) -> Result<Self> {
        let first = triplets
            .first()
            .ok_or_else(|| Error::Config("empty dataset".into()))?;
        let n = first.state.len();
        let ns = first.local_input.values.len();
        let width = n + 2 * ns;
        let mut branch = Array2::zeros((triplets.len(), width));
        let mut step = Array2::zeros((triplets.len(), 1));
        let mut target = Array2::zeros((triplets.len(), n));
        for (r, t) in triplets.iter().enumerate() {
            if t.state.len() != n || t.next_state.len() != n || t.local_input.values.len() != ns {
                return Err(Error::Shape {
                    context: "dataset record",
                    expected: width,
                    actual: t.state.len() + 2 * t.local_input.values.len(),
                });
            }
            let row = scaling.branch_input(&t.state, &t.local_input);
            branch.row_mut(r).assign(&ndarray::ArrayView1::from(&row));
            step[[r, 0]] = scaling.step_input(t.h);
            for (i, v) in scaling.state_to_model(&t.next_state).into_iter().enumerate() {
                target[[r, i]] = v;
            }
        }
        Ok(TrainingMatrices { branch, step, target })
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> TrainingMatrices {
        TrainingMatrices {
            branch: self.branch.select(Axis(0), rows),
            step: self.step.select(Axis(0), rows),
            target: self.target.select(Axis(0), rows),
        }
    }

    /// Branch and trunk inputs side by side, for single-network models.
    pub fn joint_input(&self) -> Array2<f64> {
        concatenate(Axis(1), &[self.branch.view(), self.step.view()]).expect("row counts agree")
    }

    pub(crate) fn chunks(&self, size: usize) -> impl Iterator<Item = TrainingMatrices> + '_ {
        let n = self.len();
        (0..n).step_by(size.max(1)).map(move |start| {
            let end = (start + size).min(n);
            TrainingMatrices {
                branch: self.branch.slice(ndarray::s![start..end, ..]).to_owned(),
                step: self.step.slice(ndarray::s![start..end, ..]).to_owned(),
                target: self.target.slice(ndarray::s![start..end, ..]).to_owned(),
            }
        })
    }
}

/// A model that can report its batch loss and gradient.
///
/// The gradient is returned in a value of the model's own type so that the
/// optimizer can walk both with [`Parameters::tensors`].
pub trait Trainable: Parameters + Clone {
    /// Sum of squared errors over the batch and its gradient.
    fn sse_and_grad(&self, batch: &TrainingMatrices) -> (f64, Self);

    fn sse(&self, batch: &TrainingMatrices) -> f64;

    /// Mean over rows of the squared Euclidean error.
    fn mean_loss(&self, data: &TrainingMatrices) -> f64 {
        let total: f64 = data.chunks(EVAL_CHUNK).map(|c| self.sse(&c)).sum();
        total / data.len() as f64
    }
}

const EVAL_CHUNK: usize = 2048;

/// Result of a training run. When `divergence` is set, `model` is the last
/// parameter set whose epoch loss was finite.
#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub initial_loss: f64,
    /// `(epoch, full training loss after the epoch)`, epochs counted from 1.
    pub history: Vec<(usize, f64)>,
    pub divergence: Option<String>,
}

impl<M> TrainOutcome<M> {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(self.initial_loss, |&(_, l)| l)
    }
}

pub(crate) fn fit<M: Trainable>(model: M, data: &TrainingMatrices, schedule: &Schedule, label: &str) -> Result<TrainOutcome<M>> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let mut model = model;
    let mut adam = AdamState::new(&model, schedule.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let initial_loss = model.mean_loss(data);
    if !initial_loss.is_finite() {
        return Err(Error::Divergence(format!("{label}: initial loss is {initial_loss}")));
    }
    let mut history = Vec::with_capacity(schedule.epochs);
    let mut last_good = model.clone();
    let diverged = |model: M, history: Vec<(usize, f64)>, msg: String| {
        log::error!("{label}: {msg}");
        Ok(TrainOutcome {
            model,
            initial_loss,
            history,
            divergence: Some(msg),
        })
    };

    for epoch in 0..schedule.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(schedule.batch_size) {
            let batch = data.select(rows);
            let (sse, mut grad) = model.sse_and_grad(&batch);
            if !sse.is_finite() {
                return diverged(last_good, history, format!("non-finite batch loss in epoch {}", epoch + 1));
            }
            let scale = 1.0 / rows.len() as f64;
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
            if let Err(e) = adam.step(&mut model, &grad, epoch) {
                return diverged(last_good, history, format!("epoch {}: {e}", epoch + 1));
            }
        }
        let loss = model.mean_loss(data);
        if !loss.is_finite() {
            return diverged(last_good, history, format!("non-finite training loss after epoch {}", epoch + 1));
        }
        history.push((epoch + 1, loss));
        last_good.clone_from(&model);
        if schedule.report_every > 0 && (epoch + 1) % schedule.report_every == 0 {
            log::info!(
                "{label}: epoch {} loss {loss:.3e} lr {:.2e}",
                epoch + 1,
                schedule.adam().learning_rate(epoch)
            );
        }
    }
    Ok(TrainOutcome {
        model,
        initial_loss,
        history,
        divergence: None,
    })
}
