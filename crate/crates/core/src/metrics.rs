//! Trajectory error metrics and multi-initial-condition evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::substeps_for;
use crate::deeponet::LocalInput;
use crate::error::{check_len, Error, Result};
use crate::predict::{divergence_limit, rollout, Scheme, StepModel};
use crate::systems::{rk4_chain, simulate_truth, InputSignal, OdeSystem, Partition, Trajectory};

/// `100 · ‖pred_i − truth_i‖ / ‖truth_i‖` over all nodes, in percent.
pub fn l2_relative_error(pred: &Trajectory, truth: &Trajectory, component: usize) -> Result<f64> {
    if pred.times != truth.times {
        return Err(Error::Evaluation(format!(
            "time grids differ ({} vs {} nodes)",
            pred.times.len(),
            truth.times.len()
        )));
    }
    if component >= truth.state_dim() {
        return Err(Error::Config(format!(
            "component {component} out of range for a {}-dimensional state",
            truth.state_dim()
        )));
    }
    let p = pred.component(component);
    let t = truth.component(component);
    let diff = p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let norm = t.iter().map(|b| b * b).sum::<f64>();
    if norm == 0.0 {
        return Err(Error::UndefinedMetric {
            component,
            rmse: (diff / t.len() as f64).sqrt(),
        });
    }
    Ok(100.0 * (diff / norm).sqrt())
}

pub fn l2_relative_errors(pred: &Trajectory, truth: &Trajectory) -> Result<Vec<f64>> {
    (0..truth.state_dim())
        .map(|i| l2_relative_error(pred, truth, i))
        .collect()
}

/// Errors of a set of rollouts against the truth, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Mean per-component error over the trajectories that completed.
    pub per_component_l2_rel: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation over the trajectories that completed.
    pub std: Vec<f64>,
    pub num_trajectories: usize,
    pub divergence_count: usize,
    /// Per-trajectory errors in initial-condition order; `None` for diverged rollouts.
    pub per_trajectory: Vec<Option<Vec<f64>>>,
    pub initial_states: Vec<Vec<f64>>,
}

impl ErrorReport {
    pub fn aggregate(initial_states: Vec<Vec<f64>>, per_trajectory: Vec<Option<Vec<f64>>>) -> Result<Self> {
        let done: Vec<&Vec<f64>> = per_trajectory.iter().flatten().collect();
        let num = per_trajectory.len();
        if done.is_empty() {
            return Err(Error::Evaluation(format!("all {num} rollouts diverged")));
        }
        let n = done[0].len();
        let k = done.len() as f64;
        let mean: Vec<f64> = (0..n).map(|i| done.iter().map(|e| e[i]).sum::<f64>() / k).collect();
        let std: Vec<f64> = (0..n)
            .map(|i| (done.iter().map(|e| (e[i] - mean[i]).powi(2)).sum::<f64>() / k).sqrt())
            .collect();
        Ok(ErrorReport {
            per_component_l2_rel: mean.clone(),
            mean,
            std,
            num_trajectories: num,
            divergence_count: num - done.len(),
            per_trajectory,
            initial_states,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["label".to_string(), "num_trajectories".into(), "divergence_count".into()];
        for i in 0..self.mean.len() {
            cols.push(format!("mean_x{i}"));
            cols.push(format!("std_x{i}"));
        }
        cols.join(",")
    }

    /// One flat CSV row for sweep tables.
    pub fn csv_row(&self, label: &str) -> String {
        let mut cols = vec![
            label.to_string(),
            self.num_trajectories.to_string(),
            self.divergence_count.to_string(),
        ];
        for (m, s) in self.mean.iter().zip(&self.std) {
            cols.push(crate::systems::fmt_f64(*m));
            cols.push(crate::systems::fmt_f64(*s));
        }
        cols.join(",")
    }
}

/// Where evaluation initial conditions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialConditions {
    /// Uniform draws from a box; `lo == hi` pins a coordinate.
    Box { bounds: Vec<(f64, f64)>, count: usize, seed: u64 },
    List { states: Vec<Vec<f64>> },
}

impl InitialConditions {
    pub fn sample(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            InitialConditions::Box { bounds, count, seed } => {
                if *count == 0 {
                    return Err(Error::Config("initial-condition count must be positive".into()));
                }
                if bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
                    return Err(Error::Config(format!("invalid initial-condition box {bounds:?}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count)
                    .map(|_| {
                        bounds
                            .iter()
                            .map(|&(lo, hi)| if lo == hi { lo } else { lo + (hi - lo) * rng.random::<f64>() })
                            .collect()
                    })
                    .collect())
            }
            InitialConditions::List { states } => {
                if states.is_empty() {
                    return Err(Error::Config("empty initial-condition list".into()));
                }
                Ok(states.clone())
            }
        }
    }
}

/// Truth trajectory with enough RK-4 sub-steps that none exceeds 0.01.
pub fn truth_for(system: &OdeSystem, x0: &[f64], signal: &InputSignal, partition: &Partition) -> Result<Trajectory> {
    let substeps = substeps_for(partition.max_step());
    let r = simulate_truth(system, x0, signal, partition, substeps)?;
    if !r.is_complete() {
        return Err(Error::Evaluation(format!("truth simulation from {x0:?} blew up")));
    }
    Ok(r.trajectory)
}

/// Rolls `model` out from every initial condition and compares with the truth.
pub fn evaluate_over_initial_conditions<M: StepModel>(
    model: &M,
    system: &OdeSystem,
    signal: &InputSignal,
    partition: &Partition,
    scheme: Scheme,
    initial_conditions: &InitialConditions,
) -> Result<ErrorReport> {
    let states = initial_conditions.sample()?;
    for x0 in &states {
        check_len("initial condition", system.state_dim, x0.len())?;
        if !system.contains(x0) {
            return Err(Error::Config(format!("initial condition {x0:?} lies outside the state space")));
        }
    }
    let limit = divergence_limit(system);
    let per_trajectory = states
        .par_iter()
        .map(|x0| {
            let truth = truth_for(system, x0, signal, partition)?;
            let r = rollout(model, x0, partition, signal, scheme, limit)?;
            if !r.is_complete() {
                return Ok(None);
            }
            l2_relative_errors(&r.trajectory, &truth).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorReport::aggregate(states, per_trajectory)
}

/// Exact one-step map of a system with the input frozen over each step.
/// Useful as a reference model for the evaluation pipeline.
pub struct TruthModel<'a> {
    pub system: &'a OdeSystem,
    pub substeps: usize,
}

impl StepModel for TruthModel<'_> {
    type Context = (Vec<f64>, f64);
    type Cache = ();

    fn state_dim(&self) -> usize {
        self.system.state_dim
    }

    fn num_sensors(&self) -> usize {
        1
    }

    fn h_max(&self) -> f64 {
        f64::INFINITY
    }

    fn context(&self, state: &[f64], local_input: &LocalInput) -> Result<Self::Context> {
        Ok((state.to_vec(), local_input.values[0]))
    }

    fn advance(&self, (x, u): &Self::Context, h: f64, _: &mut ()) -> Result<Vec<f64>> {
        if h == 0.0 {
            return Ok(x.clone());
        }
        rk4_chain(self.system, x, *u, h, self.substeps)
    }

    fn advance_dh(&self, ctx: &Self::Context, h: f64, c: &mut ()) -> Result<(Vec<f64>, Vec<f64>)> {
        let value = self.advance(ctx, h, c)?;
        let rate = self.system.eval(&value, ctx.1)?;
        Ok((value, rate))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{pendulum, predator_prey};
    use proptest::prelude::*;

    fn traj(states: Vec<Vec<f64>>) -> Trajectory {
        Trajectory {
            times: (0..states.len()).map(|i| i as f64).collect(),
            states,
        }
    }

    #[test]
    fn hand_computed_errors() {
        let t = traj(vec![vec![3.0], vec![4.0]]);
        assert_eq!(l2_relative_error(&t, &t, 0).unwrap(), 0.0);
        let zero = traj(vec![vec![0.0], vec![0.0]]);
        assert!((l2_relative_error(&zero, &t, 0).unwrap() - 100.0).abs() < 1e-12);
        let truth = traj(vec![vec![1.0, 0.0]]);
        let pred = traj(vec![vec![1.0, 0.3]]);
        let truth_t = traj(vec![vec![1.0], vec![0.0]]);
        let pred_t = traj(vec![vec![1.0], vec![0.3]]);
        assert!((l2_relative_error(&pred_t, &truth_t, 0).unwrap() - 30.0).abs() < 1e-12);
        assert!(matches!(
            l2_relative_error(&pred, &truth, 1),
            Err(Error::UndefinedMetric { component: 1, rmse }) if (rmse - 0.3).abs() < 1e-15
        ));
        assert!(l2_relative_error(&pred, &truth, 2).is_err());
    }

    proptest! {
        #[test]
        fn scale_covariance(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..20),
            c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0],
        ) {
            prop_assume!(pairs.iter().any(|p| p.1.abs() > 1e-3));
            let pred = traj(pairs.iter().map(|p| vec![p.0]).collect());
            let truth = traj(pairs.iter().map(|p| vec![p.1]).collect());
            let sp = traj(pairs.iter().map(|p| vec![c * p.0]).collect());
            let st = traj(pairs.iter().map(|p| vec![c * p.1]).collect());
            let a = l2_relative_error(&pred, &truth, 0).unwrap();
            let b = l2_relative_error(&sp, &st, 0).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn aggregation() {
        let one = ErrorReport::aggregate(vec![vec![0.0]], vec![Some(vec![2.0, 3.0])]).unwrap();
        assert_eq!(one.mean, vec![2.0, 3.0]);
        assert_eq!(one.std, vec![0.0, 0.0]);
        let r = ErrorReport::aggregate(
            vec![vec![0.0]; 3],
            vec![Some(vec![1.0]), None, Some(vec![3.0])],
        )
        .unwrap();
        assert_eq!((r.mean[0], r.std[0], r.divergence_count), (2.0, 1.0, 1));
        assert!(ErrorReport::aggregate(vec![vec![0.0]], vec![None]).is_err());
        let back = ErrorReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.csv_header().split(',').count(), r.csv_row("x").split(',').count());
    }

    #[test]
    fn truth_model_scores_zero() {
        let sys = predator_prey();
        let p = Partition::uniform(0.0, 5.0, 0.1).unwrap();
        let model = TruthModel { system: &sys, substeps: substeps_for(0.1) };
        let ics = InitialConditions::Box { bounds: vec![(0.5, 4.0), (0.5, 4.0)], count: 6, seed: 3 };
        let r = evaluate_over_initial_conditions(&model, &sys, &InputSignal::Constant(1.0), &p, Scheme::Recursive, &ics)
            .unwrap();
        assert!(r.mean.iter().chain(&r.std).all(|&v| v == 0.0));
        assert_eq!(r.num_trajectories, 6);
        let again =
            evaluate_over_initial_conditions(&model, &sys, &InputSignal::Constant(1.0), &p, Scheme::Recursive, &ics)
                .unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn pinned_coordinates() {
        let ics = InitialConditions::Box {
            bounds: vec![(-1.5, 1.5), (0.0, 0.0)],
            count: 100,
            seed: 1,
        };
        let s = ics.sample().unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|x| x[1] == 0.0 && x[0].abs() <= 1.5));
        let sys = pendulum();
        let p = Partition::uniform(0.0, 1.0, 0.1).unwrap();
        let outside = InitialConditions::List { states: vec![vec![10.0, 0.0]] };
        let model = TruthModel { system: &sys, substeps: 10 };
        assert!(evaluate_over_initial_conditions(&model, &sys, &InputSignal::Constant(0.0), &p, Scheme::Recursive, &outside)
            .is_err());
    }
}
