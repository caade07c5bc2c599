//! Experiment orchestration: TOML configuration, problem construction,
//! multi-seed runs with per-seed CSV traces and a JSON summary, cost
//! accounting, trace comparison, parameter sweeps and certificate reports.
//!
//! A configuration file looks like
//!
//! ```toml
//! name = "extreme-gamma5"
//! seeds = [1, 2, 3]
//! output_dir = "out/extreme"
//!
//! [dataset]
//! kind = "synthetic"
//! dim = 10
//! per_label = 50
//!
//! [partition]
//! mode = "extreme"
//!
//! [schedule]
//! kind = "fixed"
//! tau = 20
//! step = { kind = "constant", eta = 0.01 }
//! gamma = { kind = "every", gamma = 5, every = 1 }
//! ```
//!
//! Sections left out take their defaults (25 clusters of 5 devices on a
//! 50 m field, the default channel and cost parameters).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bounds::{quadratic_diversity, omega_of, CertificateReport, Thm2Inputs};
use crate::control::{run_adaptive, AdaptiveConfig, CostParams};
use crate::data::{gen_synthetic, load_csv, partition, LabeledDataset, PartitionMode, PartitionPlan};
use crate::losses::{LossKind, LossModel};
use crate::topology::{build_topology, TopologyConfig};
use crate::trainer::{
    run_baseline, run_tthf, Aggregation, FixedController, GammaPlan, MetricsTrace, Problem, StepSchedule,
    TrainerConfig,
};
use crate::{Error, Result};

/// Version of the summary JSON layout.
pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian classes from [`gen_synthetic`].
    Synthetic {
        dim: usize,
        #[serde(default = "default_labels")]
        n_labels: usize,
        per_label: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
    /// Features followed by an integer label per row.
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
    },
}

fn default_labels() -> usize {
    10
}

fn default_separation() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSection {
    pub mode: PartitionMode,
    /// Labels per device; the mode's default when absent.
    pub labels_per_device: Option<usize>,
}

impl Default for PartitionSection {
    fn default() -> Self {
        Self {
            mode: PartitionMode::Extreme,
            labels_per_device: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
    pub reg: f64,
}

impl Default for LossSection {
    fn default() -> Self {
        Self {
            kind: LossKind::LinearRegression,
            reg: 0.1,
        }
    }
}

/// Control schedule of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Schedule {
    /// Constant interval length with a fixed consensus plan.
    Fixed {
        tau: usize,
        step: StepSchedule,
        #[serde(default)]
        gamma: GammaPlan,
        #[serde(default)]
        aggregation: Aggregation,
    },
    /// Federated averaging: full participation and no D2D rounds.
    Baseline { tau: usize, step: StepSchedule },
    /// The adaptive controller.
    Adaptive(AdaptiveConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub horizon: usize,
    /// Mini-batch size; full local batch when absent.
    pub batch_size: Option<usize>,
    pub gamma_cap: usize,
    /// Rayleigh packet loss on D2D links, using the topology's channel.
    pub outage: bool,
    pub record_accuracy: bool,
    /// Re-place devices at every aggregation.
    pub relocate: bool,
    pub init: Option<Vec<f64>>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            horizon: 100,
            batch_size: None,
            gamma_cap: 100,
            outage: false,
            record_accuracy: true,
            relocate: false,
            init: None,
        }
    }
}

/// Optional inputs of the certificate report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    /// Gradient-noise variance; zero is exact for full batches.
    pub sigma2: Option<f64>,
}

/// A whole experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Seed of the dataset, partition and placement, shared by all runs.
    #[serde(default)]
    pub problem_seed: u64,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionSection,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub loss: LossSection,
    pub schedule: Schedule,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub cost: CostParams,
    #[serde(default)]
    pub bounds: BoundsSection,
}

fn default_name() -> String {
    "experiment".to_string()
}

impl ExperimentConfig {
    /// Parses TOML; schema errors carry the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            path: ".".into(),
            reason: e.to_string(),
        })?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            reason: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::Config {
            path: path.as_ref().display().to_string(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths inside the file are relative to the file.
        if let Some(dir) = path.as_ref().parent() {
            if cfg.output_dir.is_relative() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
            if let DatasetSpec::Csv { path: p, .. } = &mut cfg.dataset {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, reason: &str| {
            Err(Error::Config {
                path: path.into(),
                reason: reason.into(),
            })
        };
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required");
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return bad("seeds", "seeds must be distinct");
        }
        if self.training.horizon == 0 {
            return bad("training.horizon", "must be >= 1");
        }
        match &self.schedule {
            Schedule::Fixed { tau, step, .. } | Schedule::Baseline { tau, step } => {
                if *tau == 0 {
                    return bad("schedule.tau", "must be >= 1");
                }
                step.validate().map_err(|e| Error::Config {
                    path: "schedule.step".into(),
                    reason: e.to_string(),
                })?;
            }
            Schedule::Adaptive(a) => {
                let defaults = AdaptiveConfig::default();
                if a.cost != defaults.cost {
                    return bad("schedule.cost", "set the weights in the top-level [cost] table");
                }
                if a.gamma_cap != defaults.gamma_cap {
                    return bad("schedule.gamma_cap", "set training.gamma_cap instead");
                }
            }
        }
        self.cost.validate().map_err(|e| Error::Config {
            path: "cost".into(),
            reason: e.to_string(),
        })
    }

    /// SHA-256 of the canonical JSON form (sorted keys).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let text = serde_json::to_string(&value).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn trainer_config(&self, seed: u64) -> TrainerConfig {
        TrainerConfig {
            horizon: self.training.horizon,
            batch_size: self.training.batch_size,
            aggregation: match &self.schedule {
                Schedule::Fixed { aggregation, .. } => *aggregation,
                Schedule::Baseline { .. } => Aggregation::Full,
                Schedule::Adaptive(_) => Aggregation::Sampled,
            },
            gamma_cap: self.training.gamma_cap,
            outage: self.training.outage.then_some(self.topology.channel),
            cost: self.cost,
            record_accuracy: self.training.record_accuracy,
            relocate: self.training.relocate.then_some(self.topology),
            seed,
            init: self.training.init.clone(),
        }
    }
}

fn load_dataset(spec: &DatasetSpec, seed: u64) -> Result<LabeledDataset> {
    match spec {
        DatasetSpec::Synthetic {
            dim,
            n_labels,
            per_label,
            separation,
        } => gen_synthetic(*dim, *n_labels, *per_label, *separation, seed),
        DatasetSpec::Csv { path, has_header } => load_csv(path, *has_header),
    }
}

/// Dataset, partition, topology and loss of an experiment.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let dataset = load_dataset(&cfg.dataset, cfg.problem_seed)?;
    let topology = build_topology(&cfg.topology, cfg.problem_seed)?;
    let mut plan = PartitionPlan::new(cfg.partition.mode, dataset.n_labels, cfg.problem_seed);
    if let Some(l) = cfg.partition.labels_per_device {
        plan.labels_per_device = l;
    }
    let devices = partition(&dataset, topology.n_devices(), &plan)?;
    let model = LossModel::new(cfg.loss.kind, cfg.loss.reg, dataset.dim())?;
    Problem::from_devices(model, devices, topology)
}

/// Runs one seed of the configured schedule.
pub fn run_seed(problem: &Problem, cfg: &ExperimentConfig, seed: u64) -> Result<MetricsTrace> {
    let trainer = cfg.trainer_config(seed);
    match &cfg.schedule {
        Schedule::Fixed { tau, step, gamma, .. } => {
            let mut ctl = FixedController {
                step: *step,
                tau: *tau,
                plan: *gamma,
            };
            run_tthf(problem, &mut ctl, &trainer)
        }
        Schedule::Baseline { tau, step } => run_baseline(problem, *step, *tau, &trainer),
        Schedule::Adaptive(a) => {
            let a = AdaptiveConfig {
                cost: cfg.cost,
                gamma_cap: cfg.training.gamma_cap,
                ..*a
            };
            run_adaptive(problem, &a, &trainer)
        }
    }
}

/// Cost of one interval between consecutive aggregations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalCost {
    pub k: usize,
    pub t_start: usize,
    pub tau: usize,
    /// Energy per timestep over the interval.
    pub energy_avg: f64,
    pub delay_avg: f64,
    /// Convergence-progress penalty `1 - (t_start + alpha)/(t_end + alpha)`.
    pub progress: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub total_energy: f64,
    pub total_delay: f64,
    /// `c1 E + c2 Delta`.
    pub objective: f64,
    /// `c3` times the summed progress penalties.
    pub progress_term: f64,
    pub intervals: Vec<IntervalCost>,
}

/// Energy and delay of a trace under `cost`.
///
/// Traces carrying per-cluster rounds are re-priced from them; traces read
/// back from CSV use their recorded per-step increments.
pub fn accumulate_cost(trace: &MetricsTrace, cost: &CostParams) -> CostSummary {
    let n_clusters = trace.cluster_sizes.len().max(1);
    let mut increments = Vec::with_capacity(trace.steps.len());
    for s in &trace.steps {
        if s.gammas.is_empty() && !trace.steps.iter().any(|x| x.aggregated) {
            increments.push((s.row.energy_j, s.row.delay_s));
            continue;
        }
        let mut e = 0.0;
        let mut d = 0.0;
        for (g, size) in s.gammas.iter().zip(&trace.cluster_sizes) {
            e += (g * size) as f64 * cost.e_d2d;
            d += *g as f64 * cost.delta_d2d;
        }
        if s.aggregated {
            e += cost.e_glob * s.participants as f64 / n_clusters as f64;
            d += cost.delta_glob;
        }
        increments.push((e, d));
    }
    let total_energy: f64 = increments.iter().map(|x| x.0).sum();
    let total_delay: f64 = increments.iter().map(|x| x.1).sum();

    let alpha_at = |k: usize| trace.control.iter().find(|c| c.k == k).map_or(0.0, |c| c.alpha);
    let mut intervals = Vec::new();
    let mut start = 0usize;
    let (mut e_acc, mut d_acc) = (0.0, 0.0);
    for (s, (e, d)) in trace.steps.iter().zip(&increments) {
        e_acc += e;
        d_acc += d;
        if s.aggregated {
            let tau = s.row.t - start;
            let alpha = alpha_at(intervals.len());
            let tf = tau.max(1) as f64;
            intervals.push(IntervalCost {
                k: intervals.len(),
                t_start: start,
                tau,
                energy_avg: e_acc / tf,
                delay_avg: d_acc / tf,
                progress: 1.0 - (start as f64 + alpha) / (s.row.t as f64 + alpha).max(f64::MIN_POSITIVE),
            });
            start = s.row.t;
            e_acc = 0.0;
            d_acc = 0.0;
        }
    }
    CostSummary {
        total_energy,
        total_delay,
        objective: cost.c1 * total_energy + cost.c2 * total_delay,
        progress_term: cost.c3 * intervals.iter().map(|i| i.progress).sum::<f64>(),
        intervals,
    }
}

/// First `t` whose accuracy reaches `fraction` of `peak`.
pub fn time_to_accuracy(acc: &[(usize, f64)], peak: f64, fraction: f64) -> Option<usize> {
    acc.iter().find(|(_, a)| *a >= fraction * peak).map(|(t, _)| *t)
}

/// Accuracy at the initial model and every aggregation instant.
pub fn accuracy_points(trace: &MetricsTrace) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = trace.initial_accuracy.map(|a| (0, a)).into_iter().collect();
    out.extend(trace.steps.iter().filter_map(|s| s.accuracy.map(|a| (s.row.t, a))));
    out
}

/// Pointwise mean over seeds of the sampled-model loss gap.
pub fn mean_gaps(traces: &[MetricsTrace]) -> Vec<f64> {
    let n = traces.iter().map(|t| t.steps.len()).min().unwrap_or(0);
    (0..n)
        .map(|i| traces.iter().map(|t| t.steps[i].row.loss_gap_sampled).sum::<f64>() / traces.len() as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub trace_file: String,
    pub final_gap: f64,
    pub total_energy: f64,
    pub total_delay: f64,
    pub objective: f64,
    pub time_to_75pct_peak: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub checked_points: usize,
    pub violations: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub name: String,
    pub config_hash: String,
    pub version: String,
    pub horizon: usize,
    pub mean_final_gap: f64,
    pub mean_energy: f64,
    pub mean_delay: f64,
    pub mean_objective: f64,
    /// Peak of the seed-mean accuracy and the first time it reaches 75 % of it.
    pub peak_accuracy: Option<f64>,
    pub time_to_75pct_peak: Option<usize>,
    /// Seed-mean gap against `nu/(t + alpha)` for adaptive runs.
    pub bound_check: Option<BoundCheck>,
    pub runs: Vec<SeedSummary>,
}

pub fn version_string() -> String {
    format!("tthf {}", env!("CARGO_PKG_VERSION"))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Seed-mean accuracy on the aggregation grid shared by all traces.
fn mean_accuracy(traces: &[MetricsTrace]) -> Vec<(usize, f64)> {
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for tr in traces {
        for (t, a) in accuracy_points(tr) {
            by_t.entry(t).or_default().push(a);
        }
    }
    by_t.into_iter()
        .filter(|(_, v)| v.len() == traces.len())
        .map(|(t, v)| (t, mean(v.into_iter())))
        .collect()
}

fn rate_bound_check(traces: &[MetricsTrace]) -> Option<BoundCheck> {
    let first = traces.first()?.control.first()?;
    let gaps = mean_gaps(traces);
    let mut violations = 0;
    for (i, g) in gaps.iter().enumerate() {
        let t = (i + 1) as f64;
        if *g > first.nu / (t + first.alpha) {
            violations += 1;
        }
    }
    Some(BoundCheck {
        checked_points: gaps.len(),
        violations,
        pass: violations == 0,
    })
}

/// Everything a finished experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub traces: Vec<MetricsTrace>,
    pub summary_path: PathBuf,
}

fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

fn write_control_csv(trace: &MetricsTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &trace.control {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed (in parallel), writes one trace CSV per seed, control
/// rows for adaptive runs, then `summary.json`.
pub fn run_config(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let problem = build_problem(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let traces: Vec<MetricsTrace> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let trace = run_seed(&problem, cfg, seed)?;
            trace.write_csv(cfg.output_dir.join(trace_file_name(seed)))?;
            if !trace.control.is_empty() {
                write_control_csv(&trace, &cfg.output_dir.join(format!("control_seed{seed}.csv")))?;
            }
            Ok(trace)
        })
        .collect::<Result<_>>()?;

    let costs: Vec<CostSummary> = traces.iter().map(|t| accumulate_cost(t, &cfg.cost)).collect();
    let acc = mean_accuracy(&traces);
    let peak = acc.iter().map(|x| x.1).fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))));
    let runs = traces
        .iter()
        .zip(&costs)
        .map(|(tr, c)| {
            let pts = accuracy_points(tr);
            let own_peak = pts.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
            SeedSummary {
                seed: tr.seed,
                trace_file: trace_file_name(tr.seed),
                final_gap: tr.final_gap(),
                total_energy: c.total_energy,
                total_delay: c.total_delay,
                objective: c.objective,
                time_to_75pct_peak: time_to_accuracy(&pts, own_peak, 0.75),
            }
        })
        .collect();
    let summary = Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        version: version_string(),
        horizon: cfg.training.horizon,
        mean_final_gap: mean(traces.iter().map(MetricsTrace::final_gap)),
        mean_energy: mean(costs.iter().map(|c| c.total_energy)),
        mean_delay: mean(costs.iter().map(|c| c.total_delay)),
        mean_objective: mean(costs.iter().map(|c| c.objective)),
        peak_accuracy: peak,
        time_to_75pct_peak: peak.and_then(|p| time_to_accuracy(&acc, p, 0.75)),
        bound_check: rate_bound_check(&traces),
        runs,
    };
    let summary_path = cfg.output_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(ExperimentOutput {
        summary,
        traces,
        summary_path,
    })
}

/// Process exit code for an error: 2 for configuration and input
/// problems, 1 for everything raised while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Parse { .. }
        | Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::Csv(_) => 2,
        _ => 1,
    }
}

/// Loads, runs and reports; returns the process exit code.
pub fn run_experiment(config_path: impl AsRef<Path>) -> i32 {
    let result = ExperimentConfig::load(config_path).and_then(|cfg| run_config(&cfg));
    match result {
        Ok(out) => {
            log::info!("wrote {}", out.summary_path.display());
            0
        }
        Err(e) => {
            log::error!("{e}");
            exit_code(&e)
        }
    }
}

/// Per-timestep comparison of two traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// `gap_a - gap_b` at each `t`.
    pub deltas: Vec<f64>,
    /// First `t` at which the sign of the delta differs from its sign at
    /// the first timestep.
    pub crossover: Option<usize>,
    pub final_gap_a: f64,
    pub final_gap_b: f64,
    /// `a / b` ratios of total energy and delay.
    pub energy_ratio: f64,
    pub delay_ratio: f64,
}

pub fn compare_runs(a: &MetricsTrace, b: &MetricsTrace) -> Result<CompareReport> {
    if a.steps.len() != b.steps.len() {
        return Err(Error::DimensionMismatch {
            expected: a.steps.len(),
            found: b.steps.len(),
        });
    }
    let deltas: Vec<f64> = a
        .rows()
        .zip(b.rows())
        .map(|(x, y)| x.loss_gap_sampled - y.loss_gap_sampled)
        .collect();
    let first_sign = deltas.iter().copied().find(|d| *d != 0.0).map(f64::signum);
    let crossover = first_sign.and_then(|s| {
        a.rows()
            .zip(&deltas)
            .find(|(_, d)| **d != 0.0 && d.signum() != s)
            .map(|(r, _)| r.t)
    });
    let total = |t: &MetricsTrace| t.rows().fold((0.0, 0.0), |acc, r| (acc.0 + r.energy_j, acc.1 + r.delay_s));
    let (ea, da) = total(a);
    let (eb, db) = total(b);
    Ok(CompareReport {
        deltas,
        crossover,
        final_gap_a: a.final_gap(),
        final_gap_b: b.final_gap(),
        energy_ratio: ea / eb,
        delay_ratio: da / db,
    })
}

/// Replaces the value at a dotted path (`schedule.gamma.gamma`) of the
/// config tree.
pub fn with_override(cfg: &ExperimentConfig, path: &str, value: serde_json::Value) -> Result<ExperimentConfig> {
    let mut tree = serde_json::to_value(cfg)?;
    let mut node = &mut tree;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, key) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| Error::Config {
            path: parts[..i].join("."),
            reason: "not a table".into(),
        })?;
        if i + 1 == parts.len() {
            obj.insert((*key).to_string(), value.clone());
            break;
        }
        node = obj.entry((*key).to_string()).or_insert_with(|| serde_json::json!({}));
    }
    let out: ExperimentConfig = serde_path_to_error::deserialize(tree).map_err(|e| Error::Config {
        path: e.path().to_string(),
        reason: e.inner().to_string(),
    })?;
    out.validate()?;
    Ok(out)
}

fn value_label(v: &serde_json::Value) -> String {
    let raw = match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// One run per value of `path`, each in `output_dir/<last key>=<value>`.
pub fn sweep(cfg: &ExperimentConfig, path: &str, values: &[serde_json::Value]) -> Result<Vec<(serde_json::Value, Summary)>> {
    let key = path.rsplit('.').next().unwrap_or(path);
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        let mut c = with_override(cfg, path, v.clone())?;
        c.output_dir = cfg.output_dir.join(format!("{key}={}", value_label(v)));
        c.name = format!("{}/{key}={}", cfg.name, value_label(v));
        out.push((v.clone(), run_config(&c)?.summary));
    }
    Ok(out)
}

/// Runs the configured seeds and checks the seed-mean gap against the
/// sublinear-rate envelope. Needs a linear-regression task, a fixed
/// schedule with a diminishing step and a rule-based consensus plan.
pub fn bounds_report(cfg: &ExperimentConfig) -> Result<CertificateReport> {
    let (tau, gamma, alpha, phi) = match &cfg.schedule {
        Schedule::Fixed {
            tau,
            step: StepSchedule::Diminishing { gamma, alpha },
            gamma: GammaPlan::Rule { phi, .. },
            ..
        } => (*tau, *gamma, *alpha, *phi),
        _ => {
            return Err(Error::Config {
                path: "schedule".into(),
                reason: "certificate needs kind = \"fixed\" with a diminishing step and a rule consensus plan".into(),
            })
        }
    };
    let sigma2 = match (cfg.bounds.sigma2, cfg.training.batch_size) {
        (Some(s), _) => s,
        (None, None) => 0.0,
        (None, Some(_)) => {
            return Err(Error::Config {
                path: "bounds.sigma2".into(),
                reason: "required with mini-batches".into(),
            })
        }
    };
    let problem = build_problem(cfg)?;
    let (delta, zeta) = quadratic_diversity(&problem.model, &problem.clusters, &problem.w_star)?;
    let traces: Vec<MetricsTrace> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(&problem, cfg, s))
        .collect::<Result<_>>()?;
    let inputs = Thm2Inputs {
        gamma,
        alpha,
        mu: problem.mu,
        beta: problem.beta,
        tau,
        sigma2,
        phi,
        delta,
        omega: omega_of(zeta, problem.beta),
        init_gap: traces[0].initial_gap,
    };
    let report = CertificateReport::rate_envelope(inputs, &mean_gaps(&traces))?;
    if alpha < report.constants.alpha_min {
        log::warn!("alpha = {alpha} is below alpha_min = {}", report.constants.alpha_min);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{StepRecord, TraceRow};

    const MINIMAL: &str = r#"
seeds = [1]
output_dir = "out"

[dataset]
kind = "synthetic"
dim = 3
per_label = 4

[topology]
n_clusters = 2
cluster_size = 3

[schedule]
kind = "fixed"
tau = 5
step = { kind = "constant", eta = 0.05 }
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.cost, CostParams::default());
        assert_eq!(cfg.topology.field_m, 50.0);
        assert_eq!(cfg.partition.mode, PartitionMode::Extreme);
        assert!(matches!(cfg.schedule, Schedule::Fixed { gamma: GammaPlan::None, .. }));
    }

    #[test]
    fn adaptive_schedule_rejects_shadowed_keys() {
        let adaptive = MINIMAL.replace(
            "kind = \"fixed\"\ntau = 5\nstep = { kind = \"constant\", eta = 0.05 }",
            "kind = \"adaptive\"\ngamma_cap = 7",
        );
        match ExperimentConfig::from_toml_str(&adaptive).and_then(|c| c.validate()) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "schedule.gamma_cap"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_field_is_named() {
        let text = MINIMAL.replace("seeds = [1]\n", "");
        match ExperimentConfig::from_toml_str(&text) {
            Err(e @ Error::Config { .. }) => {
                assert!(e.to_string().contains("seeds"), "{e}");
                assert_eq!(exit_code(&e), 2);
            }
            other => panic!("{other:?}"),
        }
        let nested = MINIMAL.replace("per_label = 4\n", "");
        let err = ExperimentConfig::from_toml_str(&nested).unwrap_err();
        assert!(err.to_string().contains("per_label"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = MINIMAL.replace("n_clusters = 2", "n_clusters = 2\nclusterz = 3");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("topology"), "{err}");
    }

    #[test]
    fn adaptive_schedule_parses() {
        let text = MINIMAL.replace(
            "kind = \"fixed\"\ntau = 5\nstep = { kind = \"constant\", eta = 0.05 }",
            "kind = \"adaptive\"\nxi = 0.5\ntau_max = 8\ntau1 = 4",
        );
        let cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        match cfg.schedule {
            Schedule::Adaptive(a) => {
                assert_eq!(a.xi, 0.5);
                assert_eq!(a.tau_max, 8);
                assert_eq!(a.gamma_factor, 2.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_field_order() {
        let a = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let reordered = r#"
output_dir = "out"
[schedule]
step = { eta = 0.05, kind = "constant" }
tau = 5
kind = "fixed"
[topology]
cluster_size = 3
n_clusters = 2
[dataset]
per_label = 4
dim = 3
kind = "synthetic"
"#;
        let b = ExperimentConfig::from_toml_str(&format!("seeds = [1]\n{reordered}")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = with_override(&a, "training.horizon", serde_json::json!(7)).unwrap();
        assert_ne!(a.hash(), c.hash());
        assert_eq!(c.training.horizon, 7);
    }

    fn step(t: usize, gammas: Vec<usize>, aggregated: bool, participants: usize) -> StepRecord {
        StepRecord {
            row: TraceRow {
                t,
                loss_gap_sampled: 1.0 / t as f64,
                loss_gap_avg: 0.0,
                dispersion: 0.0,
                eps_rms: 0.0,
                gamma_total: gammas.iter().sum(),
                energy_j: 0.0,
                delay_s: 0.0,
            },
            eta: 0.1,
            gammas,
            capped: Vec::new(),
            eps: Vec::new(),
            aggregated,
            participants,
            accuracy: None,
        }
    }

    fn trace(steps: Vec<StepRecord>, sizes: Vec<usize>) -> MetricsTrace {
        MetricsTrace {
            seed: 0,
            initial_gap: 1.0,
            initial_accuracy: None,
            steps,
            control: Vec::new(),
            cluster_sizes: sizes,
        }
    }

    #[test]
    fn cost_of_pure_aggregations() {
        let steps = (1..=6).map(|t| step(t, vec![0, 0], t % 2 == 0, 2)).collect();
        let c = accumulate_cost(&trace(steps, vec![5, 5]), &CostParams::default());
        assert_eq!(c.total_energy, 3.0);
        assert_eq!(c.total_delay, 3.0);
        assert_eq!(c.intervals.len(), 3);
        assert!(c.intervals.iter().all(|i| i.tau == 2 && i.energy_avg == 0.5));
    }

    #[test]
    fn cost_of_one_consensus_step() {
        let c = accumulate_cost(&trace(vec![step(1, vec![3], false, 0)], vec![5]), &CostParams::default());
        assert!((c.total_energy - 15.0 * 0.04).abs() < 1e-15);
        assert!((c.total_delay - 3.0 * 0.04).abs() < 1e-15);
    }

    #[test]
    fn compare_identical_and_mismatched() {
        let a = trace((1..=4).map(|t| step(t, vec![1], false, 0)).collect(), vec![2]);
        let rep = compare_runs(&a, &a).unwrap();
        assert!(rep.deltas.iter().all(|d| *d == 0.0));
        assert_eq!(rep.crossover, None);
        let b = trace((1..=3).map(|t| step(t, vec![1], false, 0)).collect(), vec![2]);
        assert!(compare_runs(&a, &b).is_err());
    }

    #[test]
    fn accuracy_threshold() {
        let acc = [(0, 0.5), (10, 0.7), (20, 0.9), (30, 0.95)];
        assert_eq!(time_to_accuracy(&acc, 0.95, 0.75), Some(20));
        assert_eq!(time_to_accuracy(&acc, 0.6, 0.75), Some(0));
    }
}
