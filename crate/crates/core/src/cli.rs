//! Command-line driver: data generation, training, prediction, evaluation and
//! model comparison, all configured by one JSON document plus a few flags.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{train_ensemble, train_fnn, EnsembleParams, FnnConfig, FnnParams};
use crate::dataset::{Dataset, SamplingSpec};
use crate::deeponet::{self, DeepONetConfig, DeepONetParams, ScalingOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_over_initial_conditions, truth_for, ErrorReport, InitialConditions};
use crate::nn::{Activation, Architecture};
use crate::predict::{divergence_limit, rollout, write_prediction_csv, Scheme, StepModel};
use crate::systems::{system_by_name, InputSignal, OdeSystem, Partition, Rollout, SignalSpec};
use crate::train::{Schedule, TrainOutcome};

pub const CHECKPOINT_FORMAT: &str = "operon-checkpoint-v1";

#[derive(Parser, Debug)]
#[command(name = "operon", version, about = "Operator learning for controlled ODE systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample one-step training triplets and write a dataset file.
    GenData(CommonArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(CommonArgs),
    /// Roll a trained model out over a partition.
    Predict(CommonArgs),
    /// Compare rollouts with the truth and write an error report.
    Evaluate(CommonArgs),
    /// Train and evaluate the DeepONet, FNN and ensemble on one dataset.
    Compare(CommonArgs),
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long, value_enum)]
    pub model_kind: Option<ModelKind>,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Deeponet,
    Fnn,
    Ensemble,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::Deeponet => "deeponet",
            ModelKind::Fnn => "fnn",
            ModelKind::Ensemble => "ensemble",
        }
    }
}

/// Sampling settings; the system and seed come from the enclosing config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    pub count: Option<usize>,
    pub h_range: Option<(f64, f64)>,
    #[serde(default = "one")]
    pub num_sensors: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_kind")]
    pub kind: ModelKind,
    /// Checked against the dataset before training when given.
    pub num_sensors: Option<usize>,
    #[serde(default = "default_q")]
    pub basis_per_output: usize,
    #[serde(default = "default_hidden")]
    pub branch_hidden: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub trunk_hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    #[serde(default)]
    pub scaling: ScalingOptions,
    #[serde(default = "default_fnn_hidden")]
    pub fnn_hidden: Vec<usize>,
    #[serde(default)]
    pub residual: bool,
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
}

fn default_kind() -> ModelKind {
    ModelKind::Deeponet
}
fn default_q() -> usize {
    20
}
fn default_hidden() -> Vec<usize> {
    vec![100; 3]
}
fn default_activation() -> Activation {
    Activation::Tanh
}
fn default_architecture() -> Architecture {
    Architecture::Modified
}
fn default_fnn_hidden() -> Vec<usize> {
    vec![128; 3]
}
fn default_ensemble() -> usize {
    5
}

impl Default for ModelSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all model fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionSpec {
    Uniform { a: f64, b: f64, h: f64 },
    Nodes(Vec<f64>),
}

impl PartitionSpec {
    pub fn build(&self) -> Result<Partition> {
        match self {
            PartitionSpec::Uniform { a, b, h } => Partition::uniform(*a, *b, *h),
            PartitionSpec::Nodes(nodes) => Partition::new(nodes.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSection {
    pub partition: PartitionSpec,
    pub signal: SignalSpec,
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Also write the reference trajectory next to the prediction.
    #[serde(default)]
    pub emit_truth: bool,
}

fn default_scheme() -> Scheme {
    Scheme::Recursive
}

/// Evaluation initial conditions; box draws use the `eval` sub-seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IcSpec {
    Box { bounds: Vec<(f64, f64)>, count: usize },
    List { states: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSection {
    pub initial_conditions: IcSpec,
}

/// One run configuration. Paths are resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub system: Option<String>,
    pub data: Option<DataSection>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub model: Option<ModelSection>,
    pub schedule: Option<Schedule>,
    pub rollout: Option<RolloutSection>,
    pub evaluation: Option<EvaluationSection>,
}

/// Seeds for the independent random streams of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubSeeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
    pub eval: u64,
}

pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(stream.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl SubSeeds {
    pub fn new(seed: u64) -> Self {
        SubSeeds {
            data: derive_seed(seed, "data"),
            init: derive_seed(seed, "init"),
            shuffle: derive_seed(seed, "shuffle"),
            eval: derive_seed(seed, "eval"),
        }
    }
}

struct Run {
    config: RunConfig,
    base: PathBuf,
    out: PathBuf,
    seeds: SubSeeds,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl Run {
    fn load(args: &CommonArgs) -> Result<Self> {
        let text = fs::read_to_string(&args.config)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", args.config.display())))?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", args.config.display())))?;
        if let Some(seed) = args.seed {
            config.seed = Some(seed);
        }
        let seed = config
            .seed
            .ok_or_else(|| config_error("a seed is required (config field `seed` or --seed)"))?;
        if let Some(kind) = args.model_kind {
            config.model.get_or_insert_with(ModelSection::default).kind = kind;
        }
        if let (Some(scheme), Some(r)) = (args.scheme, config.rollout.as_mut()) {
            r.scheme = scheme;
        }
        let base = args
            .config
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        fs::create_dir_all(&args.out)?;
        Ok(Run {
            config,
            base,
            out: args.out.clone(),
            seeds: SubSeeds::new(seed),
        })
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn system(&self) -> Result<OdeSystem> {
        let name = self
            .config
            .system
            .as_deref()
            .ok_or_else(|| config_error("config needs a `system`"))?;
        system_by_name(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        let p = self
            .config
            .dataset
            .as_ref()
            .ok_or_else(|| config_error("config needs a `dataset` path"))?;
        let path = self.path(p);
        if !path.exists() {
            return Err(config_error(format!("dataset {} does not exist", path.display())));
        }
        Dataset::load(&path)
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let p = self
            .config
            .checkpoint
            .as_ref()
            .ok_or_else(|| config_error("config needs a `checkpoint` path"))?;
        let path = self.path(p);
        if !path.exists() {
            return Err(config_error(format!("checkpoint {} does not exist", path.display())));
        }
        Checkpoint::load(&path)
    }

    fn model_section(&self) -> ModelSection {
        self.config.model.clone().unwrap_or_default()
    }

    fn schedule(&self) -> Schedule {
        let mut s = self.config.schedule.clone().unwrap_or_default();
        s.seed = self.seeds.shuffle;
        s
    }

    fn rollout_section(&self) -> Result<&RolloutSection> {
        self.config
            .rollout
            .as_ref()
            .ok_or_else(|| config_error("config needs a `rollout` section"))
    }

    fn write(&self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        fs::write(&path, contents)?;
        Ok(path)
    }
}

/// Trained model of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", content = "params", rename_all = "lowercase")]
pub enum AnyModel {
    Deeponet(DeepONetParams),
    Fnn(FnnParams),
    Ensemble(EnsembleParams),
}

impl AnyModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Deeponet(_) => ModelKind::Deeponet,
            AnyModel::Fnn(_) => ModelKind::Fnn,
            AnyModel::Ensemble(_) => ModelKind::Ensemble,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            AnyModel::Deeponet(m) => m.state_dim(),
            AnyModel::Fnn(m) => StepModel::state_dim(m),
            AnyModel::Ensemble(m) => m.state_dim(),
        }
    }

    pub fn rollout(&self, x0: &[f64], partition: &Partition, signal: &InputSignal, scheme: Scheme, limit: f64) -> Result<Rollout> {
        match self {
            AnyModel::Deeponet(m) => rollout(m, x0, partition, signal, scheme, limit),
            AnyModel::Fnn(m) => rollout(m, x0, partition, signal, scheme, limit),
            AnyModel::Ensemble(m) => rollout(m, x0, partition, signal, scheme, limit),
        }
    }

    pub fn evaluate(
        &self,
        system: &OdeSystem,
        signal: &InputSignal,
        partition: &Partition,
        scheme: Scheme,
        ics: &InitialConditions,
    ) -> Result<ErrorReport> {
        match self {
            AnyModel::Deeponet(m) => evaluate_over_initial_conditions(m, system, signal, partition, scheme, ics),
            AnyModel::Fnn(m) => evaluate_over_initial_conditions(m, system, signal, partition, scheme, ics),
            AnyModel::Ensemble(m) => evaluate_over_initial_conditions(m, system, signal, partition, scheme, ics),
        }
    }
}

/// Everything needed to reuse a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub system: String,
    pub dataset_hash: String,
    pub schedule: Schedule,
    #[serde(flatten)]
    pub model: AnyModel,
}

impl Checkpoint {
    pub fn to_text(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Version(format!("checkpoint: {e}")))?;
        match raw.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => {
                return Err(Error::Version(format!(
                    "checkpoint format {other:?}, expected '{CHECKPOINT_FORMAT}'"
                )))
            }
        }
        serde_json::from_value(raw).map_err(|e| Error::Version(format!("checkpoint: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_text(&fs::read_to_string(path)?)
    }
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Shape { .. } => 2,
        Error::CorruptDataset(_) | Error::Version(_) => 3,
        Error::Divergence(_) | Error::Evaluation(_) => 4,
        Error::UndefinedMetric { .. } => 5,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

pub fn cmd_gen_data(args: &CommonArgs) -> Result<()> {
    let run = Run::load(args)?;
    let system = run.system()?;
    let mut spec = SamplingSpec::for_system(&system.name, run.seeds.data)?;
    if let Some(d) = &run.config.data {
        spec.count = d.count.unwrap_or(spec.count);
        spec.h_range = d.h_range.unwrap_or(spec.h_range);
        spec.num_sensors = d.num_sensors;
    }
    let ds = Dataset::generate(spec)?;
    let path = run.out.join("dataset.jsonl");
    ds.save(&path)?;
    let (lo, hi) = ds
        .triplets
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), t| (lo.min(t.h), hi.max(t.h)));
    println!("wrote {} records to {}", ds.header.count, path.display());
    println!("hash {}", ds.header.hash);
    println!("h range [{lo}, {hi}]");
    for (i, (a, b)) in system.state_space.iter().enumerate() {
        println!("x{i} sampled in [{a}, {b}]");
    }
    Ok(())
}

fn deeponet_config(section: &ModelSection, state_dim: usize, num_sensors: usize, seed: u64) -> DeepONetConfig {
    DeepONetConfig {
        state_dim,
        num_sensors,
        basis_per_output: section.basis_per_output,
        branch_hidden: section.branch_hidden.clone(),
        trunk_hidden: section.trunk_hidden.clone(),
        activation: section.activation,
        architecture: section.architecture,
        seed,
        scaling: section.scaling.clone(),
    }
}

fn fnn_config(section: &ModelSection, state_dim: usize, num_sensors: usize, seed: u64) -> FnnConfig {
    FnnConfig {
        state_dim,
        num_sensors,
        hidden: section.fnn_hidden.clone(),
        activation: section.activation,
        residual: section.residual,
        seed,
        scaling: section.scaling.clone(),
    }
}

/// Training result with the divergence message, if any.
struct Trained {
    model: AnyModel,
    history: Vec<(usize, f64)>,
    divergence: Option<String>,
}

fn train_kind(kind: ModelKind, ds: &Dataset, section: &ModelSection, init_seed: u64, schedule: &Schedule) -> Result<Trained> {
    let (n, ns) = (ds.state_dim(), ds.num_sensors());
    let pack = |o: TrainOutcome<AnyModel>| Trained {
        model: o.model,
        history: o.history,
        divergence: o.divergence,
    };
    match kind {
        ModelKind::Deeponet => {
            let o = deeponet::train(&ds.triplets, deeponet_config(section, n, ns, init_seed), schedule)?;
            Ok(pack(map_outcome(o, AnyModel::Deeponet)))
        }
        ModelKind::Fnn => {
            let o = train_fnn(&ds.triplets, fnn_config(section, n, ns, init_seed), schedule)?;
            Ok(pack(map_outcome(o, AnyModel::Fnn)))
        }
        ModelKind::Ensemble => {
            let (ens, outcomes) = train_ensemble(&ds.triplets, fnn_config(section, n, ns, init_seed), section.ensemble_size, schedule)?;
            let divergence = outcomes
                .iter()
                .enumerate()
                .find_map(|(i, o)| o.divergence.as_ref().map(|m| format!("member {i}: {m}")));
            // epoch-wise mean of the member losses
            let epochs = outcomes.iter().map(|o| o.history.len()).min().unwrap_or(0);
            let history = (0..epochs)
                .map(|e| {
                    let mean = outcomes.iter().map(|o| o.history[e].1).sum::<f64>() / outcomes.len() as f64;
                    (e + 1, mean)
                })
                .collect();
            Ok(Trained {
                model: AnyModel::Ensemble(ens),
                history,
                divergence,
            })
        }
    }
}

fn map_outcome<M>(o: TrainOutcome<M>, f: impl FnOnce(M) -> AnyModel) -> TrainOutcome<AnyModel> {
    TrainOutcome {
        model: f(o.model),
        initial_loss: o.initial_loss,
        history: o.history,
        divergence: o.divergence,
    }
}

fn history_csv(history: &[(usize, f64)]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history {
        s.push_str(&format!("{e},{}\n", crate::systems::fmt_f64(*l)));
    }
    s
}

pub fn cmd_train(args: &CommonArgs) -> Result<()> {
    let run = Run::load(args)?;
    let ds = run.dataset()?;
    let section = run.model_section();
    if let Some(system) = &run.config.system {
        if *system != ds.header.system {
            return Err(config_error(format!(
                "config system '{system}' does not match dataset system '{}'",
                ds.header.system
            )));
        }
    }
    if let Some(ns) = section.num_sensors {
        if ns != ds.num_sensors() {
            return Err(config_error(format!(
                "model expects {ns} sensors but the dataset has {}",
                ds.num_sensors()
            )));
        }
    }
    let schedule = run.schedule();
    let trained = train_kind(section.kind, &ds, &section, run.seeds.init, &schedule)?;
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        system: ds.header.system.clone(),
        dataset_hash: ds.header.hash.clone(),
        schedule,
        model: trained.model,
    };
    let path = run.write("checkpoint.json", ckpt.to_text()?.as_bytes())?;
    run.write("history.csv", history_csv(&trained.history).as_bytes())?;
    println!("wrote {}", path.display());
    if let Some((e, l)) = trained.history.last() {
        println!("final loss {l:.6e} after {e} epochs");
    }
    match trained.divergence {
        Some(msg) => Err(Error::Divergence(msg)),
        None => Ok(()),
    }
}

fn check_model_system(ckpt: &Checkpoint, system: &OdeSystem) -> Result<()> {
    if ckpt.system != system.name || ckpt.model.state_dim() != system.state_dim {
        return Err(config_error(format!(
            "checkpoint was trained on '{}' but the config names '{}'",
            ckpt.system, system.name
        )));
    }
    Ok(())
}

pub fn cmd_predict(args: &CommonArgs) -> Result<()> {
    let run = Run::load(args)?;
    let ckpt = run.checkpoint()?;
    let system = match &run.config.system {
        Some(name) => system_by_name(name)?,
        None => system_by_name(&ckpt.system)?,
    };
    check_model_system(&ckpt, &system)?;
    let r = run.rollout_section()?;
    let partition = r.partition.build()?;
    let signal = InputSignal::from_spec(&r.signal);
    let x0 = r.x0.as_ref().ok_or_else(|| config_error("rollout needs `x0`"))?;
    let result = ckpt
        .model
        .rollout(x0, &partition, &signal, r.scheme, divergence_limit(&system))?;
    let meta = vec![
        format!("system: {}", system.name),
        format!("model_kind: {}", ckpt.model.kind().tag()),
    ];
    let mut buf = Vec::new();
    write_prediction_csv(&result.trajectory, r.scheme, &meta, &mut buf)?;
    let path = run.write("prediction.csv", &buf)?;
    println!("wrote {} ({} nodes)", path.display(), result.trajectory.len());
    if r.emit_truth {
        let truth = truth_for(&system, x0, &signal, &partition)?;
        let mut buf = Vec::new();
        truth.write_csv(&mut buf, &[format!("system: {}", system.name), "truth: rk4".to_string()])?;
        run.write("truth.csv", &buf)?;
    }
    match result.diverged_at {
        Some(n) => Err(Error::Divergence(format!(
            "{} rollout left the admissible region at node {n}",
            r.scheme
        ))),
        None => Ok(()),
    }
}

fn initial_conditions(run: &Run, r: &RolloutSection) -> Result<InitialConditions> {
    match (&run.config.evaluation, &r.x0) {
        (Some(e), _) => Ok(match &e.initial_conditions {
            IcSpec::Box { bounds, count } => InitialConditions::Box {
                bounds: bounds.clone(),
                count: *count,
                seed: run.seeds.eval,
            },
            IcSpec::List { states } => InitialConditions::List { states: states.clone() },
        }),
        (None, Some(x0)) => Ok(InitialConditions::List { states: vec![x0.clone()] }),
        (None, None) => Err(config_error("evaluation needs `evaluation.initial_conditions` or `rollout.x0`")),
    }
}

fn write_report(run: &Run, report: &ErrorReport, label: &str) -> Result<()> {
    run.write("report.json", format!("{}\n", report.to_json()?).as_bytes())?;
    run.write(
        "report.csv",
        format!("{}\n{}\n", report.csv_header(), report.csv_row(label)).as_bytes(),
    )?;
    Ok(())
}

pub fn cmd_evaluate(args: &CommonArgs) -> Result<()> {
    let run = Run::load(args)?;
    let ckpt = run.checkpoint()?;
    let system = match &run.config.system {
        Some(name) => system_by_name(name)?,
        None => system_by_name(&ckpt.system)?,
    };
    check_model_system(&ckpt, &system)?;
    let r = run.rollout_section()?;
    let partition = r.partition.build()?;
    let signal = InputSignal::from_spec(&r.signal);
    let ics = initial_conditions(&run, r)?;
    let report = ckpt.model.evaluate(&system, &signal, &partition, r.scheme, &ics)?;
    write_report(&run, &report, &format!("{}-{}", ckpt.model.kind().tag(), r.scheme))?;
    for (i, (m, s)) in report.mean.iter().zip(&report.std).enumerate() {
        println!("x{i}: mean {m:.4}% std {s:.4}%");
    }
    if report.divergence_count > 0 {
        println!(
            "{} of {} rollouts diverged and were excluded",
            report.divergence_count, report.num_trajectories
        );
    }
    Ok(())
}

pub fn cmd_compare(args: &CommonArgs) -> Result<()> {
    let run = Run::load(args)?;
    let ds = run.dataset()?;
    let system = system_by_name(&ds.header.system)?;
    let section = run.model_section();
    let schedule = run.schedule();
    let r = run.rollout_section()?;
    let partition = r.partition.build()?;
    let signal = InputSignal::from_spec(&r.signal);
    let ics = initial_conditions(&run, r)?;
    let n = system.state_dim;

    let mut rows = vec![{
        let mut h = vec!["model_kind".to_string(), "metric".into(), "status".into()];
        h.extend((0..n).map(|i| format!("x{i}")));
        h.join(",")
    }];
    let mut first_error = None;
    for kind in [ModelKind::Deeponet, ModelKind::Fnn, ModelKind::Ensemble] {
        let outcome = train_kind(kind, &ds, &section, run.seeds.init, &schedule).and_then(|t| {
            let ckpt = Checkpoint {
                format: CHECKPOINT_FORMAT.to_string(),
                system: ds.header.system.clone(),
                dataset_hash: ds.header.hash.clone(),
                schedule: schedule.clone(),
                model: t.model,
            };
            run.write(&format!("checkpoint-{}.json", kind.tag()), ckpt.to_text()?.as_bytes())?;
            if let Some(msg) = t.divergence {
                return Err(Error::Divergence(msg));
            }
            ckpt.model.evaluate(&system, &signal, &partition, r.scheme, &ics)
        });
        match outcome {
            Ok(report) => {
                for (metric, values) in [("mean_l2_rel", &report.mean), ("std_l2_rel", &report.std)] {
                    let mut row = vec![kind.tag().to_string(), metric.into(), "ok".into()];
                    row.extend(values.iter().map(|v| crate::systems::fmt_f64(*v)));
                    rows.push(row.join(","));
                }
                println!("{}: mean {:?}", kind.tag(), report.mean);
            }
            Err(e) => {
                log::error!("{}: {e}", kind.tag());
                for metric in ["mean_l2_rel", "std_l2_rel"] {
                    let mut row = vec![kind.tag().to_string(), metric.into(), "failed".into()];
                    row.extend(std::iter::repeat_n(String::new(), n));
                    rows.push(row.join(","));
                }
                first_error.get_or_insert(e);
            }
        }
    }
    let mut f = fs::File::create(run.out.join("comparison.csv"))?;
    for row in &rows {
        writeln!(f, "{row}")?;
    }
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
