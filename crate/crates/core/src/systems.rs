//! Ground-truth vector fields, input signals, time partitions and the RK-4
//! reference integrator.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};

/// Gravitational acceleration used by the pendulum and the cart-pole, m/s².
pub const GRAVITY: f64 = 9.81;

/// Norm above which a truth simulation is considered blown up.
pub const BLOW_UP_NORM: f64 = 1e6;

type FieldFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// A controlled vector field `dx/dt = f(x, u)` with sampling boxes.
#[derive(Clone)]
pub struct OdeSystem {
    pub name: String,
    pub state_dim: usize,
    /// Per-dimension `(lo, hi)` bounds of the sampling box.
    pub state_space: Vec<(f64, f64)>,
    pub input_space: (f64, f64),
    field: Arc<FieldFn>,
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("state_space", &self.state_space)
            .field("input_space", &self.input_space)
            .finish_non_exhaustive()
    }
}

impl OdeSystem {
    pub fn new<F>(name: &str, state_space: Vec<(f64, f64)>, input_space: (f64, f64), field: F) -> Self
    where
        F: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
    {
        OdeSystem {
            name: name.to_string(),
            state_dim: state_space.len(),
            state_space,
            input_space,
            field: Arc::new(field),
        }
    }

    /// Writes `f(x, u)` into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], u: f64, out: &mut [f64]) {
        (self.field)(x, u, out)
    }

    pub fn eval(&self, x: &[f64], u: f64) -> Result<Vec<f64>> {
        check_len("system state", self.state_dim, x.len())?;
        let mut out = vec![0.0; self.state_dim];
        self.eval_into(x, u, &mut out);
        Ok(out)
    }

    /// Largest absolute coordinate of the sampling box.
    pub fn box_radius(&self) -> f64 {
        self.state_space
            .iter()
            .map(|&(lo, hi)| lo.abs().max(hi.abs()))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.state_dim
            && x.iter()
                .zip(&self.state_space)
                .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

/// Lorenz 63 with σ = 10, ρ = 28, β = 8/3; the input is ignored.
pub fn lorenz63() -> OdeSystem {
    const SIGMA: f64 = 10.0;
    const RHO: f64 = 28.0;
    const BETA: f64 = 8.0 / 3.0;
    OdeSystem::new(
        "lorenz63",
        vec![(-17.0, 20.0), (-23.0, 28.0), (0.0, 50.0)],
        (0.0, 0.0),
        |x, _u, out| {
            out[0] = SIGMA * (x[1] - x[0]);
            out[1] = x[0] * (RHO - x[2]) - x[1];
            out[2] = x[0] * x[1] - BETA * x[2];
        },
    )
}

/// Lotka-Volterra predator-prey with an additive input on the prey.
pub fn predator_prey() -> OdeSystem {
    OdeSystem::new("predator_prey", vec![(0.0, 5.0), (0.0, 5.0)], (0.0, 5.0), |x, u, out| {
        out[0] = x[0] - x[0] * x[1] + u;
        out[1] = -x[1] + x[0] * x[1];
    })
}

/// Damped pendulum driven by a torque; state `(θ, θ̇)`.
pub fn pendulum() -> OdeSystem {
    const MASS: f64 = 1.0;
    const LENGTH: f64 = 1.0;
    const FRICTION: f64 = 0.01;
    const INERTIA: f64 = MASS * LENGTH * LENGTH / 12.0;
    let denom = 0.25 * MASS * LENGTH * LENGTH + INERTIA;
    OdeSystem::new(
        "pendulum",
        vec![(-PI, PI), (-8.0, 8.0)],
        (-2.0, 2.0),
        move |x, u, out| {
            out[0] = x[1];
            out[1] = (u - FRICTION * x[1] - 0.5 * MASS * LENGTH * GRAVITY * x[0].sin()) / denom;
        },
    )
}

/// Cart-pole driven by a horizontal force; state `(θ, θ̇, p, ṗ)`.
pub fn cart_pole() -> OdeSystem {
    const LENGTH: f64 = 0.5;
    const POLE_MASS: f64 = 0.5;
    const CART_MASS: f64 = 0.5;
    const FRICTION: f64 = 0.01;
    const TOTAL: f64 = POLE_MASS + CART_MASS;
    OdeSystem::new(
        "cart_pole",
        vec![(-2.0 * PI, 2.0 * PI), (-PI, PI), (-2.0, 2.0), (-1.0, 1.0)],
        (-5.0, 5.0),
        |x, u, out| {
            let (theta, omega, _p, v) = (x[0], x[1], x[2], x[3]);
            let (sin, cos) = theta.sin_cos();
            let theta_acc = (GRAVITY * sin + cos * ((-u - POLE_MASS * LENGTH * omega * omega * sin) / TOTAL))
                / (LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL));
            let p_acc =
                (u - FRICTION * v + POLE_MASS * LENGTH * (omega * omega * sin - theta_acc * cos)) / TOTAL;
            out[0] = omega;
            out[1] = theta_acc;
            out[2] = v;
            out[3] = p_acc;
        },
    )
}

/// Names accepted by [`system_by_name`].
pub const SYSTEM_NAMES: [&str; 4] = ["lorenz63", "predator_prey", "pendulum", "cart_pole"];

pub fn system_by_name(name: &str) -> Result<OdeSystem> {
    match name {
        "lorenz63" => Ok(lorenz63()),
        "predator_prey" => Ok(predator_prey()),
        "pendulum" => Ok(pendulum()),
        "cart_pole" => Ok(cart_pole()),
        other => Err(Error::Config(format!(
            "unknown system {other:?}; expected one of {SYSTEM_NAMES:?}"
        ))),
    }
}

/// One sinusoidal term `amplitude * wave(frequency * t + phase)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveTerm {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    pub wave: Wave,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wave {
    Sin,
    Cos,
}

/// Serializable description of an input signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    Constant {
        value: f64,
    },
    /// `u(t) = offset + slope * t`.
    Ramp {
        slope: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `u(t) = offset + Σ amplitude * wave(frequency * t + phase)`.
    Waves {
        #[serde(default)]
        offset: f64,
        terms: Vec<WaveTerm>,
    },
    /// `u(x) = offset + Σ gains[i] * x[i]`.
    LinearFeedback {
        gains: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
}

type TimeFn = dyn Fn(f64) -> f64 + Send + Sync;
type StateFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A pure input signal evaluable at any `(t, x)`.
#[derive(Clone)]
pub enum InputSignal {
    Constant(f64),
    /// `u(t) = slope * t`.
    Ramp(f64),
    TimeFunction(Arc<TimeFn>),
    StateFeedback(Arc<StateFn>),
}

impl fmt::Debug for InputSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSignal::Constant(c) => write!(f, "Constant({c})"),
            InputSignal::Ramp(s) => write!(f, "Ramp({s})"),
            InputSignal::TimeFunction(_) => f.write_str("TimeFunction(..)"),
            InputSignal::StateFeedback(_) => f.write_str("StateFeedback(..)"),
        }
    }
}

impl InputSignal {
    pub fn time_function(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        InputSignal::TimeFunction(Arc::new(f))
    }

    pub fn state_feedback(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        InputSignal::StateFeedback(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            InputSignal::Constant(c) => *c,
            InputSignal::Ramp(slope) => slope * t,
            InputSignal::TimeFunction(f) => f(t),
            InputSignal::StateFeedback(f) => f(x),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, InputSignal::Constant(_))
    }

    pub fn from_spec(spec: &SignalSpec) -> Self {
        match spec.clone() {
            SignalSpec::Constant { value } => InputSignal::Constant(value),
            SignalSpec::Ramp { slope, offset } if offset == 0.0 => InputSignal::Ramp(slope),
            SignalSpec::Ramp { slope, offset } => InputSignal::time_function(move |t| offset + slope * t),
            SignalSpec::Waves { offset, terms } => InputSignal::time_function(move |t| {
                terms.iter().fold(0.0, |acc, w| {
                    let arg = w.frequency * t + w.phase;
                    acc + w.amplitude
                        * match w.wave {
                            Wave::Sin => arg.sin(),
                            Wave::Cos => arg.cos(),
                        }
                }) + offset
            }),
            SignalSpec::LinearFeedback { gains, offset } => InputSignal::state_feedback(move |x| {
                gains.iter().zip(x).fold(0.0, |acc, (g, v)| acc + g * v) + offset
            }),
        }
    }
}

impl From<&SignalSpec> for InputSignal {
    fn from(spec: &SignalSpec) -> Self {
        InputSignal::from_spec(spec)
    }
}

/// A strictly increasing time grid `t_0 < t_1 < … < t_M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config("a partition needs at least one node".into()));
        }
        check_finite("partition", &times)?;
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "partition not strictly increasing at node {}: {} then {}",
                i + 1,
                times[i],
                times[i + 1]
            )));
        }
        Ok(Partition { times })
    }

    /// Uniform grid on `[a, b]` with step `h`; `b - a` must be a whole number of steps.
    pub fn uniform(a: f64, b: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) || !(b >= a) {
            return Err(Error::Config(format!("invalid uniform partition [{a}, {b}] step {h}")));
        }
        let steps = ((b - a) / h).round();
        if ((a + steps * h) - b).abs() > 1e-9 * (1.0 + b.abs()) {
            return Err(Error::Config(format!(
                "[{a}, {b}] is not a whole number of steps of {h}"
            )));
        }
        let steps = steps as usize;
        let mut times: Vec<f64> = (0..=steps).map(|i| a + i as f64 * h).collect();
        times[steps] = b;
        Partition::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step(&self, n: usize) -> f64 {
        self.times[n + 1] - self.times[n]
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    pub fn max_step(&self) -> f64 {
        self.steps().fold(0.0, f64::max)
    }

    /// Sub-partition on nodes `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end >= self.times.len() {
            return Err(Error::Config(format!(
                "slice {start}..={end} out of range for {} nodes",
                self.times.len()
            )));
        }
        Partition::new(self.times[start..=end].to_vec())
    }
}

/// Time-stamped states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn component(&self, i: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[i]).collect()
    }

    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("non-empty trajectory")
    }

    /// CSV with header `t,x0,x1,...`, one row per node, 17 significant digits.
    /// Lines in `metadata` are written first, each prefixed by `# `.
    pub fn write_csv<W: Write>(&self, mut w: W, metadata: &[String]) -> std::io::Result<()> {
        for line in metadata {
            writeln!(w, "# {line}")?;
        }
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.state_dim()).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = std::iter::once(*t).chain(s.iter().copied()).map(fmt_f64).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| Error::Config("empty trajectory CSV".into()))?;
        let width = header.split(',').count();
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
        };
        for line in lines {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("bad CSV value: {e}")))?;
            check_len("trajectory CSV row", width, values.len())?;
            traj.times.push(values[0]);
            traj.states.push(values[1..].to_vec());
        }
        Ok(traj)
    }
}

/// Formats a double with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A trajectory together with where (if anywhere) it stopped early.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    /// Index of the first node that failed, when the simulation was truncated.
    pub diverged_at: Option<usize>,
}

impl Rollout {
    pub fn is_complete(&self) -> bool {
        self.diverged_at.is_none()
    }
}

/// One classical RK-4 step with the input held at `u`.
pub fn rk4_step(system: &OdeSystem, state: &[f64], u: f64, h: f64) -> Result<Vec<f64>> {
    check_len("rk4 state", system.state_dim, state.len())?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("RK-4 step size must be positive, got {h}")));
    }
    check_finite("rk4 state", state)?;
    let next = rk4_unchecked(system, state, u, h);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration(format!(
            "non-finite state after RK-4 step of {h} from {state:?}"
        )));
    }
    Ok(next)
}

fn rk4_unchecked(system: &OdeSystem, x: &[f64], u: f64, h: f64) -> Vec<f64> {
    rk4_stages(system, x, h, |_, _| u)
}

/// Classical RK-4 where the input is re-read at each stage from its offset
/// within the step (`0`, `h/2`, `h/2`, `h`) and the stage state.
fn rk4_stages(system: &OdeSystem, x: &[f64], h: f64, input: impl Fn(f64, &[f64]) -> f64) -> Vec<f64> {
    let n = x.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    system.eval_into(x, input(0.0, x), &mut k1);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    system.eval_into(&tmp, input(0.5 * h, &tmp), &mut k2);
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    system.eval_into(&tmp, input(0.5 * h, &tmp), &mut k3);
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    system.eval_into(&tmp, input(h, &tmp), &mut k4);
    (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// `substeps` RK-4 steps of `h / substeps` with the input frozen at `u`.
pub fn rk4_chain(system: &OdeSystem, state: &[f64], u: f64, h: f64, substeps: usize) -> Result<Vec<f64>> {
    if substeps == 0 {
        return Err(Error::Config("substeps must be positive".into()));
    }
    let sub = h / substeps as f64;
    let mut x = state.to_vec();
    for _ in 0..substeps {
        x = rk4_step(system, &x, u, sub)?;
    }
    Ok(x)
}

/// Reference trajectory on the nodes of `partition`.
///
/// Each interval is covered by `substeps` RK-4 steps; the signal is
/// re-evaluated at every RK-4 stage. Returns a truncated rollout
/// when the state leaves `‖x‖ ≤ 1e6` or stops being finite.
pub fn simulate_truth(
    system: &OdeSystem,
    x0: &[f64],
    signal: &InputSignal,
    partition: &Partition,
    substeps: usize,
) -> Result<Rollout> {
    check_len("initial state", system.state_dim, x0.len())?;
    check_finite("initial state", x0)?;
    if substeps == 0 {
        return Err(Error::Config("substeps must be positive".into()));
    }
    if !system.contains(x0) {
        log::warn!("initial state {x0:?} lies outside the {} sampling box", system.name);
    }
    let times = partition.times();
    let mut traj = Trajectory {
        times: vec![times[0]],
        states: vec![x0.to_vec()],
    };
    let mut x = x0.to_vec();
    for n in 0..partition.num_steps() {
        let h = partition.step(n);
        let sub = h / substeps as f64;
        for j in 0..substeps {
            let t = times[n] + j as f64 * sub;
            x = if signal.is_constant() {
                rk4_unchecked(system, &x, signal.eval(t, &x), sub)
            } else {
                rk4_stages(system, &x, sub, |dt, xs| signal.eval(t + dt, xs))
            };
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > BLOW_UP_NORM {
            log::warn!("truth simulation of {} blew up at t = {}", system.name, times[n + 1]);
            return Ok(Rollout {
                trajectory: traj,
                diverged_at: Some(n + 1),
            });
        }
        traj.times.push(times[n + 1]);
        traj.states.push(x.clone());
    }
    Ok(Rollout {
        trajectory: traj,
        diverged_at: None,
    })
}
