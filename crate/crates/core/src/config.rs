//! Declarative experiment configuration.
//!
//! Configs are JSON with a strict schema: unknown keys are errors, so a
//! typo in a sweep fails loudly instead of silently running the default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    dirichlet_partition, make_synthetic_task, split_public_global, split_public_per_client,
    FederatedTask, PublicAmount, SyntheticTaskParams,
};
use crate::dataset::{load_csv, CsvSchema, Dataset, Label, LabelKind};
use crate::error::{Error, Result};
use crate::filtering::{EmptySetValue, FilterMode};
use crate::model::{LrSchedule, ModelSpec};
use crate::rng::RngStream;
use crate::selection::RsVariant;
use crate::ClientId;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Number of communication rounds T; records cover rounds 1..=T.
    pub rounds: usize,
    /// Train the round's clients on a thread pool. Results are bit-identical
    /// to the serial path: every client has its own stream and aggregation
    /// order is fixed.
    #[serde(default)]
    pub parallel: bool,
    pub model: ModelConfig,
    pub task: TaskConfig,
    pub availability: AvailabilityConfig,
    pub filter: FilterConfig,
    pub selection: SelectionConfig,
    pub local: LocalConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub submod: SubmodConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKindConfig,
    pub input_dim: usize,
    #[serde(default)]
    pub classes: usize,
    #[serde(default)]
    pub hidden_units: usize,
    pub l2: f64,
    /// Standard deviation of the Gaussian initial model; 0 starts from the
    /// zero vector.
    #[serde(default)]
    pub init_scale: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModelKindConfig {
    LinearRegression,
    LogisticRegression,
    Mlp,
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        let spec = match self.kind {
            ModelKindConfig::LinearRegression => ModelSpec::linear_regression(self.input_dim, self.l2),
            ModelKindConfig::LogisticRegression => {
                ModelSpec::logistic_regression(self.input_dim, self.classes, self.l2)
            }
            ModelKindConfig::Mlp => {
                ModelSpec::mlp(self.input_dim, self.hidden_units, self.classes, self.l2)
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Per-client linear teachers around a shared optimum; heterogeneity
    /// scales the per-client offsets.
    Synthetic {
        clients: usize,
        per_client: usize,
        heterogeneity: f64,
        public_size: usize,
        test_size: usize,
        #[serde(default = "default_feature_scale")]
        feature_scale: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// A single global teacher generates a labeled source which is then
    /// label-partitioned across clients with Dir(alpha).
    DirichletSynthetic {
        clients: usize,
        total_examples: usize,
        alpha: f64,
        public: PublicConfig,
        test_size: usize,
        #[serde(default = "default_feature_scale")]
        feature_scale: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
    /// Load a CSV source, hold out a test fraction, build the public set,
    /// and partition the rest across clients (Dir(alpha) for class labels,
    /// contiguous equal chunks for real labels).
    Csv {
        path: PathBuf,
        feature_count: usize,
        label: LabelKindConfig,
        #[serde(default)]
        skip_header: bool,
        clients: usize,
        #[serde(default)]
        alpha: Option<f64>,
        public: PublicConfig,
        test_fraction: f64,
    },
}

fn default_feature_scale() -> f64 {
    1.0
}

fn default_noise() -> f64 {
    0.1
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum LabelKindConfig {
    Real,
    Class,
}

impl From<LabelKindConfig> for LabelKind {
    fn from(value: LabelKindConfig) -> LabelKind {
        match value {
            LabelKindConfig::Real => LabelKind::Real,
            LabelKindConfig::Class => LabelKind::Class,
        }
    }
}

/// Where the public dataset comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum PublicConfig {
    /// Hold out a slice of the global source before partitioning.
    HeldOutGlobal {
        #[serde(default)]
        fraction: Option<f64>,
        #[serde(default)]
        size: Option<usize>,
    },
    /// Take a fraction of every client's data and concatenate the slices.
    PerClientSlice { fraction: f64 },
    /// Load an external file (possibly from a shifted distribution).
    External { path: PathBuf },
}

impl PublicConfig {
    fn amount(&self) -> Result<PublicAmount> {
        match self {
            PublicConfig::HeldOutGlobal { fraction, size } => match (fraction, size) {
                (Some(f), None) => Ok(PublicAmount::Fraction(*f)),
                (None, Some(s)) => Ok(PublicAmount::Size(*s)),
                _ => Err(Error::Config(
                    "public.held_out_global needs exactly one of fraction or size".into(),
                )),
            },
            _ => Err(Error::Config("not a global split".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityConfig {
    /// Size n of the available set each round (clamped to the client pool).
    pub available: usize,
    pub resample_period: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub mode: FilterModeConfig,
    /// Re-filter every h rounds (and whenever availability changes).
    pub period: usize,
    /// Additive constant used only when reporting rewards and ratios; the
    /// filter itself works on reward differences where it cancels.
    #[serde(default = "default_reward_c")]
    pub reward_c: f64,
    #[serde(default)]
    pub weight_source: WeightSourceConfig,
    #[serde(default)]
    pub empty_set: EmptySetConfig,
}

fn default_reward_c() -> f64 {
    10.0
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FilterModeConfig {
    Off,
    D,
    R,
}

impl FilterModeConfig {
    pub fn to_mode(self) -> Option<FilterMode> {
        match self {
            FilterModeConfig::Off => None,
            FilterModeConfig::D => Some(FilterMode::Deterministic),
            FilterModeConfig::R => Some(FilterMode::Randomized),
        }
    }
}

/// Which parameter snapshot represents each client inside the filtering
/// reward.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum WeightSourceConfig {
    /// The client's most recent post-training parameters, or the current
    /// global model if it has never trained.
    #[default]
    Latest,
    /// One virtual full-batch gradient step from the current global model,
    /// for sensitivity studies.
    ProbeStep,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum EmptySetConfig {
    #[default]
    Global,
    Zero,
}

impl EmptySetConfig {
    pub fn to_value(self) -> EmptySetValue {
        match self {
            EmptySetConfig::Global => EmptySetValue::GlobalModel,
            EmptySetConfig::Zero => EmptySetValue::ZeroVector,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub kind: SelectionKindConfig,
    pub k: usize,
    /// Power-of-choice candidate set size d; defaults to min(2K, pool).
    #[serde(default)]
    pub poc_candidates: Option<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKindConfig {
    RsWeighted,
    RsUniform,
    Poc,
    Divfl,
}

impl SelectionKindConfig {
    pub fn rs_variant(self) -> Option<RsVariant> {
        match self {
            SelectionKindConfig::RsWeighted => Some(RsVariant::WeightedWithReplacement),
            SelectionKindConfig::RsUniform => Some(RsVariant::UniformWithoutReplacement),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub proximal_mu: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleConfig {
    #[default]
    Constant,
    Decay {
        factor: f64,
        interval: usize,
    },
    Inverse {
        beta: f64,
    },
}

impl ScheduleConfig {
    pub fn to_schedule(self) -> LrSchedule {
        match self {
            ScheduleConfig::Constant => LrSchedule::Constant,
            ScheduleConfig::Decay { factor, interval } => LrSchedule::DecayEvery { factor, interval },
            ScheduleConfig::Inverse { beta } => LrSchedule::InverseTime { beta },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// Virtually train every client each round and record the loss gap
    /// between the weighted full average and the filtered simple average.
    #[serde(default)]
    pub delta_gap: bool,
    /// Compare each filtering round against the exhaustive optimum
    /// (requires an available set small enough to enumerate).
    #[serde(default)]
    pub opt_ratio: bool,
    /// Run the weak-submodularity probe on filtering rounds.
    #[serde(default)]
    pub submod_check: bool,
    /// Fill the wall_ms CSV column. Off by default so that repeated runs
    /// stay byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
    /// Emit SVG line plots next to the CSV.
    #[serde(default)]
    pub plots: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmodConfig {
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_submod_samples")]
    pub samples: usize,
}

impl Default for SubmodConfig {
    fn default() -> Self {
        SubmodConfig {
            gammas: default_gammas(),
            samples: default_submod_samples(),
        }
    }
}

fn default_gammas() -> Vec<f64> {
    vec![0.001, 0.2, 0.4, 0.6, 0.8, 1.0]
}

fn default_submod_samples() -> usize {
    100
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        self.model.to_spec().map_err(|e| Error::Config(e.to_string()))?;
        if self.availability.available == 0 || self.availability.resample_period == 0 {
            return Err(Error::Config(
                "availability.available and resample_period must be >= 1".into(),
            ));
        }
        if self.filter.period == 0 {
            return Err(Error::Config("filter.period must be >= 1".into()));
        }
        if !self.filter.reward_c.is_finite() {
            return Err(Error::Config("filter.reward_c must be finite".into()));
        }
        if self.selection.k == 0 {
            return Err(Error::Config("selection.k must be >= 1".into()));
        }
        if let Some(d) = self.selection.poc_candidates {
            if d < self.selection.k {
                return Err(Error::Config(
                    "selection.poc_candidates must be >= selection.k".into(),
                ));
            }
        }
        if self.local.epochs == 0 || self.local.batch_size == 0 {
            return Err(Error::Config(
                "local.epochs and local.batch_size must be >= 1".into(),
            ));
        }
        if self.local.learning_rate <= 0.0 || !self.local.learning_rate.is_finite() {
            return Err(Error::Config("local.learning_rate must be > 0".into()));
        }
        if self.local.proximal_mu < 0.0 {
            return Err(Error::Config("local.proximal_mu must be >= 0".into()));
        }
        match self.local.schedule {
            ScheduleConfig::Decay { factor, interval } => {
                if factor <= 0.0 || interval == 0 {
                    return Err(Error::Config(
                        "schedule.decay needs factor > 0 and interval >= 1".into(),
                    ));
                }
            }
            ScheduleConfig::Inverse { beta } => {
                if beta <= 0.0 {
                    return Err(Error::Config("schedule.inverse needs beta > 0".into()));
                }
            }
            ScheduleConfig::Constant => {}
        }
        match &self.task {
            TaskConfig::Synthetic {
                clients,
                per_client,
                public_size,
                test_size,
                heterogeneity,
                noise,
                feature_scale,
            } => {
                if *clients == 0 || *per_client == 0 || *public_size == 0 || *test_size == 0 {
                    return Err(Error::Config("task counts must be >= 1".into()));
                }
                if *heterogeneity < 0.0 || *noise < 0.0 || *feature_scale <= 0.0 {
                    return Err(Error::Config("task scales out of range".into()));
                }
            }
            TaskConfig::DirichletSynthetic {
                clients,
                total_examples,
                alpha,
                test_size,
                ..
            } => {
                if *clients == 0 || *total_examples == 0 || *test_size == 0 {
                    return Err(Error::Config("task counts must be >= 1".into()));
                }
                if *alpha <= 0.0 {
                    return Err(Error::Config("task.alpha must be > 0".into()));
                }
                if self.model.kind == ModelKindConfig::LinearRegression {
                    return Err(Error::Config(
                        "dirichlet_synthetic tasks need a classification model".into(),
                    ));
                }
            }
            TaskConfig::Csv {
                clients,
                test_fraction,
                alpha,
                label,
                feature_count,
                ..
            } => {
                if *clients == 0 {
                    return Err(Error::Config("task.clients must be >= 1".into()));
                }
                if !(0.0..1.0).contains(test_fraction) {
                    return Err(Error::Config("task.test_fraction must be in [0,1)".into()));
                }
                if *label == LabelKindConfig::Class && alpha.is_none() {
                    return Err(Error::Config(
                        "csv tasks with class labels need task.alpha".into(),
                    ));
                }
                if *feature_count != self.model.input_dim {
                    return Err(Error::Config(
                        "task.feature_count must match model.input_dim".into(),
                    ));
                }
            }
        }
        if self.submod.samples == 0 {
            return Err(Error::Config("submod.samples must be >= 1".into()));
        }
        for &g in &self.submod.gammas {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!("submod gamma {g} outside (0, 1]")));
            }
        }
        Ok(())
    }
}

/// A small, fast, ready-to-run configuration (used by docs, the CLI help,
/// and the Python smoke test).
pub fn example_config_json() -> String {
    let example = serde_json::json!({
        "seed": 42,
        "rounds": 30,
        "model": {"kind": "linear_regression", "input_dim": 4, "l2": 0.5},
        "task": {
            "kind": "synthetic",
            "clients": 20,
            "per_client": 40,
            "heterogeneity": 1.0,
            "public_size": 40,
            "test_size": 100,
            "noise": 0.1
        },
        "availability": {"available": 10, "resample_period": 5},
        "filter": {"mode": "r", "period": 5},
        "selection": {"kind": "rs_weighted", "k": 3},
        "local": {"epochs": 1, "batch_size": 20, "learning_rate": 0.1}
    });
    serde_json::to_string_pretty(&example).expect("example serializes")
}

/// Split a regression source into contiguous, equally sized client chunks.
fn contiguous_partition(source: &Dataset, clients: usize) -> BTreeMap<ClientId, Dataset> {
    let mut parts: BTreeMap<ClientId, Dataset> = (0..clients)
        .map(|k| (ClientId(k as u32), Dataset::default()))
        .collect();
    for (i, example) in source.examples().iter().enumerate() {
        let k = i % clients;
        parts
            .get_mut(&ClientId(k as u32))
            .expect("client exists")
            .push(example.clone());
    }
    parts
}

/// Instantiate the model spec and federated task described by a config.
/// Depends only on the config and seed, so callers can rebuild the task to
/// inspect the data a run trained on.
pub fn build_task(cfg: &ExperimentConfig) -> Result<(ModelSpec, FederatedTask)> {
    let spec = cfg.model.to_spec()?;
    let stream = RngStream::root(cfg.seed).child("task");
    let task = match &cfg.task {
        TaskConfig::Synthetic {
            clients,
            per_client,
            heterogeneity,
            public_size,
            test_size,
            feature_scale,
            noise,
        } => {
            let params = SyntheticTaskParams {
                clients: *clients,
                per_client: *per_client,
                heterogeneity: *heterogeneity,
                public_size: *public_size,
                test_size: *test_size,
                feature_scale: *feature_scale,
                noise: *noise,
            };
            make_synthetic_task(&spec, &params, &stream)?
        }
        TaskConfig::DirichletSynthetic {
            clients,
            total_examples,
            alpha,
            public,
            test_size,
            feature_scale,
            noise,
        } => {
            // One homogeneous teacher provides both the training source and
            // the test set; heterogeneity comes from the label partition.
            let params = SyntheticTaskParams {
                clients: 1,
                per_client: *total_examples,
                heterogeneity: 0.0,
                public_size: 1,
                test_size: *test_size,
                feature_scale: *feature_scale,
                noise: *noise,
            };
            let seeded = make_synthetic_task(&spec, &params, &stream)?;
            let source = seeded.clients()[&ClientId(0)].clone();
            let global_test = seeded.global_test().clone();
            build_partitioned_task(
                &spec, source, global_test, *clients, Some(*alpha), public, &stream,
            )?
        }
        TaskConfig::Csv {
            path,
            feature_count,
            label,
            skip_header,
            clients,
            alpha,
            public,
            test_fraction,
        } => {
            let schema = CsvSchema {
                feature_count: *feature_count,
                label_kind: (*label).into(),
                skip_header: *skip_header,
            };
            let source = load_csv(path, &schema)?;
            let (global_test, remainder) = if *test_fraction > 0.0 {
                let (test, rest) = split_public_global(
                    &source,
                    PublicAmount::Fraction(*test_fraction),
                    &stream.child("test_split"),
                )?;
                (test, rest)
            } else {
                (source.clone(), source)
            };
            build_partitioned_task(
                &spec,
                remainder,
                global_test,
                *clients,
                *alpha,
                public,
                &stream,
            )?
        }
    };
    check_task_matches_spec(&spec, &task)?;
    Ok((spec, task))
}

fn build_partitioned_task(
    spec: &ModelSpec,
    source: Dataset,
    global_test: Dataset,
    clients: usize,
    alpha: Option<f64>,
    public: &PublicConfig,
    stream: &RngStream,
) -> Result<FederatedTask> {
    let partition = |data: &Dataset| -> Result<BTreeMap<ClientId, Dataset>> {
        match alpha {
            Some(a) if data.class_count() > 0 => dirichlet_partition(data, clients, a, stream),
            _ => Ok(contiguous_partition(data, clients)),
        }
    };
    match public {
        PublicConfig::HeldOutGlobal { .. } => {
            let (public_set, rest) = split_public_global(&source, public.amount()?, stream)?;
            let parts = partition(&rest)?;
            FederatedTask::from_sizes(parts, public_set, global_test)
        }
        PublicConfig::PerClientSlice { fraction } => {
            let parts = partition(&source)?;
            let (public_set, rest) = split_public_per_client(&parts, *fraction, stream)?;
            FederatedTask::from_sizes(rest, public_set, global_test)
        }
        PublicConfig::External { path } => {
            let schema = CsvSchema {
                feature_count: spec.input_dim,
                label_kind: if spec.is_classification() {
                    LabelKind::Class
                } else {
                    LabelKind::Real
                },
                skip_header: false,
            };
            let public_set = load_csv(path, &schema)?;
            let parts = partition(&source)?;
            FederatedTask::from_sizes(parts, public_set, global_test)
        }
    }
}

fn check_task_matches_spec(spec: &ModelSpec, task: &FederatedTask) -> Result<()> {
    let check = |data: &Dataset, what: &str| -> Result<()> {
        if data.is_empty() {
            return Ok(());
        }
        if data.feature_dim() != spec.input_dim {
            return Err(Error::Config(format!(
                "{what} features have dimension {}, model expects {}",
                data.feature_dim(),
                spec.input_dim
            )));
        }
        let has_class = matches!(data.examples()[0].label, Label::Class(_));
        if has_class != spec.is_classification() {
            return Err(Error::Config(format!(
                "{what} label kind does not match the model kind"
            )));
        }
        Ok(())
    };
    for (id, data) in task.clients() {
        check(data, &format!("client {id}"))?;
    }
    check(task.public(), "public set")?;
    check(task.global_test(), "test set")?;
    Ok(())
}
