//! Long-horizon rollouts from a one-step model.
//!
//! `Recursive` feeds each prediction back as the next initial state.
//! `Rk2` takes an improved-Euler step whose two slopes are the model's
//! derivative with respect to the step size at `0` and at `h`.
//! `Rk2Corrector` evaluates the second slope with the next interval's input.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deeponet::{DeepONetParams, LocalInput, TrunkEval};
use crate::error::{check_finite, check_len, Error, Result};
use crate::systems::{InputSignal, OdeSystem, Partition, Rollout, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Recursive,
    Rk2,
    Rk2Corrector,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Recursive => "recursive",
            Scheme::Rk2 => "rk2",
            Scheme::Rk2Corrector => "rk2-corrector",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recursive" => Ok(Scheme::Recursive),
            "rk2" => Ok(Scheme::Rk2),
            "rk2-corrector" | "rk2_corrector" => Ok(Scheme::Rk2Corrector),
            other => Err(Error::Config(format!(
                "unknown scheme '{other}' (expected recursive, rk2 or rk2-corrector)"
            ))),
        }
    }
}

/// A learned one-step map `(x, u samples, h) -> x(t + h)`.
///
/// Work that depends only on `(x, u samples)` goes into a `Context` so that
/// several step sizes can be evaluated from one state; work that depends only
/// on `h` may be memoised in `Cache` across the whole rollout.
pub trait StepModel: Sync {
    type Context;
    type Cache: Default;

    fn state_dim(&self) -> usize;
    fn num_sensors(&self) -> usize;
    /// Largest step size the model was trained on.
    fn h_max(&self) -> f64;

    fn context(&self, state: &[f64], local_input: &LocalInput) -> Result<Self::Context>;
    fn advance(&self, ctx: &Self::Context, h: f64, cache: &mut Self::Cache) -> Result<Vec<f64>>;
    /// Prediction and its derivative with respect to `h`.
    fn advance_dh(&self, ctx: &Self::Context, h: f64, cache: &mut Self::Cache) -> Result<(Vec<f64>, Vec<f64>)>;
}

/// Memoised trunk evaluations keyed by the exact bits of `h`.
#[derive(Default)]
pub struct TrunkCache {
    entries: HashMap<u64, TrunkEval>,
}

const TRUNK_CACHE_CAP: usize = 4096;

impl TrunkCache {
    fn get(&mut self, model: &DeepONetParams, h: f64) -> Result<&TrunkEval> {
        let key = h.to_bits();
        if !self.entries.contains_key(&key) {
            if self.entries.len() >= TRUNK_CACHE_CAP {
                self.entries.clear();
            }
            self.entries.insert(key, model.trunk_eval(h)?);
        }
        Ok(&self.entries[&key])
    }
}

impl StepModel for DeepONetParams {
    type Context = Vec<f64>;
    type Cache = TrunkCache;

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
        self.branch_features(state, local_input)
    }

    fn advance(&self, ctx: &Vec<f64>, h: f64, cache: &mut TrunkCache) -> Result<Vec<f64>> {
        let trunk = cache.get(self, h)?;
        Ok(self.predict_from_features(ctx, &trunk.features))
    }

    fn advance_dh(&self, ctx: &Vec<f64>, h: f64, cache: &mut TrunkCache) -> Result<(Vec<f64>, Vec<f64>)> {
        let trunk = cache.get(self, h)?;
        Ok(self.predict_dh_from_features(ctx, trunk))
    }
}

/// Sensor samples for the interval starting at `t` with step `h`.
///
/// Sensors sit at `t + i·h/n_s`, `i = 0..n_s`; feedback signals read `state`.
pub fn local_input_at(signal: &InputSignal, t: f64, state: &[f64], h: f64, num_sensors: usize) -> LocalInput {
    let deltas: Vec<f64> = (0..num_sensors).map(|i| i as f64 * h / num_sensors as f64).collect();
    LocalInput {
        values: deltas.iter().map(|d| signal.eval(t + d, state)).collect(),
        offsets: deltas.iter().map(|d| -d).collect(),
    }
}

/// Largest sup-norm a rollout may reach before it is declared divergent:
/// ten times the largest coordinate magnitude of the sampling box.
pub fn divergence_limit(system: &OdeSystem) -> f64 {
    10.0 * system.box_radius()
}

fn out_of_bounds(x: &[f64], limit: f64) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > limit)
}

/// Rolls `model` out over `partition` from `x0`.
///
/// The rollout stops early, with `diverged_at` set, when a state becomes
/// non-finite or its sup-norm exceeds `limit`.
pub fn rollout<M: StepModel>(
    model: &M,
    x0: &[f64],
    partition: &Partition,
    signal: &InputSignal,
    scheme: Scheme,
    limit: f64,
) -> Result<Rollout> {
    check_len("initial state", model.state_dim(), x0.len())?;
    check_finite("initial state", x0)?;
    let h_max = partition.max_step();
    if partition.num_steps() > 0 && h_max > model.h_max() {
        log::warn!(
            "partition step {h_max} exceeds the largest trained step {}; the model extrapolates",
            model.h_max()
        );
    }
    let ns = model.num_sensors();
    let times = partition.times();
    let mut cache = M::Cache::default();
    let mut traj = Trajectory {
        times: vec![times[0]],
        states: vec![x0.to_vec()],
    };
    let mut x = x0.to_vec();
    for n in 0..partition.num_steps() {
        let h = partition.step(n);
        let li = local_input_at(signal, times[n], &x, h, ns);
        let ctx = model.context(&x, &li)?;
        let next = match scheme {
            Scheme::Recursive => model.advance(&ctx, h, &mut cache)?,
            Scheme::Rk2 | Scheme::Rk2Corrector => {
                let (_, k1) = model.advance_dh(&ctx, 0.0, &mut cache)?;
                let (predicted, k2_same) = model.advance_dh(&ctx, h, &mut cache)?;
                let k2 = if scheme == Scheme::Rk2 || signal.is_constant() {
                    k2_same
                } else if out_of_bounds(&predicted, limit) {
                    // the predictor already left the domain; any k2 will do
                    k2_same
                } else {
                    let next_li = local_input_at(signal, times[n + 1], &predicted, h, ns);
                    let next_ctx = model.context(&x, &next_li)?;
                    model.advance_dh(&next_ctx, h, &mut cache)?.1
                };
                x.iter()
                    .zip(k1.iter().zip(&k2))
                    .map(|(xi, (a, b))| xi + 0.5 * h * (a + b))
                    .collect()
            }
        };
        if out_of_bounds(&next, limit) {
            log::warn!("{scheme} rollout left the admissible region at t = {}", times[n + 1]);
            return Ok(Rollout {
                trajectory: traj,
                diverged_at: Some(n + 1),
            });
        }
        traj.times.push(times[n + 1]);
        traj.states.push(next.clone());
        x = next;
    }
    Ok(Rollout {
        trajectory: traj,
        diverged_at: None,
    })
}

/// [`rollout`] from each of `initial_states`, in parallel; results keep input order.
pub fn rollout_batch<M: StepModel>(
    model: &M,
    initial_states: &[Vec<f64>],
    partition: &Partition,
    signal: &InputSignal,
    scheme: Scheme,
    limit: f64,
) -> Vec<Result<Rollout>> {
    initial_states
        .par_iter()
        .map(|x0| rollout(model, x0, partition, signal, scheme, limit))
        .collect()
}

/// Per-node Euclidean error between a prediction and the truth.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorProfile {
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    /// Running maximum of `errors`.
    pub envelope: Vec<f64>,
}

pub fn rollout_error_profile(pred: &Trajectory, truth: &Trajectory) -> Result<ErrorProfile> {
    if pred.times != truth.times {
        return Err(Error::Evaluation(format!(
            "time grids differ ({} vs {} nodes)",
            pred.times.len(),
            truth.times.len()
        )));
    }
    let errors: Vec<f64> = pred
        .states
        .iter()
        .zip(&truth.states)
        .map(|(p, q)| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let envelope = errors
        .iter()
        .scan(0.0_f64, |m, &e| {
            *m = m.max(e);
            Some(*m)
        })
        .collect();
    Ok(ErrorProfile {
        times: pred.times.clone(),
        errors,
        envelope,
    })
}

/// Writes a predicted trajectory in the truth CSV layout with a `scheme` header line.
pub fn write_prediction_csv<W: Write>(traj: &Trajectory, scheme: Scheme, extra: &[String], w: W) -> std::io::Result<()> {
    let mut meta = vec![format!("scheme: {scheme}")];
    meta.extend_from_slice(extra);
    traj.write_csv(w, &meta)
}
