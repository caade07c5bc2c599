//! The TT-HF training loop and the federated-averaging baselines.
//!
//! Time runs `t = 1..=T`. At each `t` every device takes one SGD step from
//! its current model with step `eta_{t-1}`, then every cluster runs the
//! number of consensus rounds its controller asks for. When `t` closes an
//! interval the server aggregates (one sampled device per cluster, or every
//! device for the baselines) and broadcasts. Controllers decide step sizes,
//! interval lengths and consensus rounds; [`FixedController`] covers the
//! set-parameter algorithm and the baselines.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::dispersion_sample;
use crate::consensus::{consensus_error, divergence_estimate, divergence_exact, run_consensus, OutagePolicy};
use crate::control::{cluster_rounds, CostParams};
use crate::losses::{sign_accuracy, DevicePartition, LossKind, LossModel, QuadraticObjective};
use crate::rng::{self, tag};
use crate::topology::{build_topology, ChannelParams, ClusterSpec, Topology, TopologyConfig};
use crate::{Error, ModelVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `eta_t = gamma / (t + alpha)`.
    Diminishing { gamma: f64, alpha: f64 },
}

impl StepSchedule {
    pub fn eta(&self, t: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Diminishing { gamma, alpha } => gamma / (t as f64 + alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { eta } => eta >= 0.0 && eta.is_finite(),
            StepSchedule::Diminishing { gamma, alpha } => gamma > 0.0 && alpha > 0.0 && gamma.is_finite() && alpha.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("step", format!("{self:?} is not a valid step schedule")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// One uniformly sampled device per cluster.
    #[default]
    Sampled,
    /// Every device participates.
    Full,
}

/// The learning task bound to a topology, with its constants and optimum.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: LossModel,
    pub clusters: Vec<Vec<DevicePartition>>,
    pub topology: Topology,
    pub mu: f64,
    pub beta: f64,
    pub w_star: ModelVector,
    pub f_star: f64,
    quadratic: Option<QuadraticObjective>,
}

impl Problem {
    pub fn new(model: LossModel, clusters: Vec<Vec<DevicePartition>>, topology: Topology) -> Result<Self> {
        if clusters.len() != topology.clusters.len() {
            return Err(Error::DimensionMismatch {
                expected: topology.clusters.len(),
                found: clusters.len(),
            });
        }
        for (c, (parts, spec)) in clusters.iter().zip(&topology.clusters).enumerate() {
            if parts.is_empty() {
                return Err(Error::EmptyCluster(c));
            }
            if parts.len() != spec.size() {
                return Err(Error::DimensionMismatch {
                    expected: spec.size(),
                    found: parts.len(),
                });
            }
        }
        let flat: Vec<DevicePartition> = clusters.iter().flatten().cloned().collect();
        let (mu, beta) = model.smoothness_constants(&flat)?;
        let quadratic = match model.kind {
            LossKind::LinearRegression => Some(QuadraticObjective::new(&model, &clusters)?),
            LossKind::SquaredHingeSvm => None,
        };
        let w_star = model.optimum(&clusters)?;
        let mut p = Self {
            model,
            clusters,
            topology,
            mu,
            beta,
            w_star,
            f_star: 0.0,
            quadratic,
        };
        p.f_star = p.loss(&p.w_star)?;
        Ok(p)
    }

    /// Splits a flat device list into clusters matching `topology`.
    pub fn from_devices(model: LossModel, devices: Vec<DevicePartition>, topology: Topology) -> Result<Self> {
        let sizes = topology.sizes();
        if devices.len() != sizes.iter().sum::<usize>() {
            return Err(Error::DimensionMismatch {
                expected: sizes.iter().sum(),
                found: devices.len(),
            });
        }
        let mut it = devices.into_iter();
        let clusters = sizes.iter().map(|&s| it.by_ref().take(s).collect()).collect();
        Self::new(model, clusters, topology)
    }

    pub fn loss(&self, w: &ModelVector) -> Result<f64> {
        match &self.quadratic {
            Some(q) if w.len() == self.model.dim => Ok(q.value(w)),
            _ => self.model.global_loss(w, &self.clusters),
        }
    }

    pub fn gap(&self, w: &ModelVector) -> Result<f64> {
        Ok(self.loss(w)? - self.f_star)
    }

    pub fn grad(&self, w: &ModelVector) -> Result<ModelVector> {
        match &self.quadratic {
            Some(q) => Ok(q.gradient(w)),
            None => self.model.global_grad(w, &self.clusters),
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn n_devices(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }

    /// `varrho_c` per cluster.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.n_devices() as f64;
        self.clusters.iter().map(|c| c.len() as f64 / n).collect()
    }

    /// Global index of device `i` of cluster `c`.
    pub fn device_index(&self, c: usize, i: usize) -> usize {
        self.clusters[..c].iter().map(Vec::len).sum::<usize>() + i
    }

    pub fn all_devices(&self) -> Vec<DevicePartition> {
        self.clusters.iter().flatten().cloned().collect()
    }
}

/// What a controller sees when choosing consensus rounds.
pub struct RoundContext<'a> {
    pub t: usize,
    pub cluster: usize,
    /// `eta_t`, the target scale of the consensus error.
    pub eta: f64,
    pub tilde: &'a Array2<f64>,
    pub spec: &'a ClusterSpec,
}

/// What a controller sees right after a broadcast (and at `t = 0`).
pub struct AggregationContext<'a> {
    pub t: usize,
    /// Number of aggregations performed so far.
    pub k: usize,
    pub horizon: usize,
    pub w_hat: &'a ModelVector,
    /// Sampled device per cluster (local index) used for this aggregation.
    pub sampled: &'a [usize],
    /// Local models of the sampled devices just before aggregation.
    pub sampled_models: &'a [ModelVector],
    pub problem: &'a Problem,
    pub seed: u64,
    pub batch_size: Option<usize>,
}

/// Per-aggregation control decisions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlRow {
    pub k: usize,
    pub t_start: usize,
    pub tau: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub phi: f64,
    pub delta_prime: f64,
    pub sigma2: f64,
    pub nu: f64,
}

pub trait Controller {
    /// `eta_t`.
    fn eta(&self, t: usize) -> f64;

    /// Length of the interval that starts at `ctx.t`.
    fn next_interval(&mut self, ctx: &AggregationContext<'_>) -> Result<usize>;

    /// Consensus rounds for one cluster at one timestep.
    fn rounds(&mut self, ctx: &RoundContext<'_>) -> Result<usize>;

    /// Decision record of the latest [`Controller::next_interval`] call.
    fn control_row(&self) -> Option<ControlRow> {
        None
    }
}

/// How a fixed plan picks consensus rounds.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GammaPlan {
    /// No D2D communication.
    #[default]
    None,
    /// `gamma` rounds at every `every`-th timestep.
    Every { gamma: usize, every: usize },
    /// Certificate rule `lambda^Gamma sqrt(s) Upsilon <= eta_t phi` each
    /// timestep, with the exact divergence or its flooded estimate.
    Rule { phi: f64, estimated: bool },
}

/// Set control parameters: constant interval length, a step schedule and a
/// consensus plan.
#[derive(Debug, Clone)]
pub struct FixedController {
    pub step: StepSchedule,
    pub tau: usize,
    pub plan: GammaPlan,
}

impl Controller for FixedController {
    fn eta(&self, t: usize) -> f64 {
        self.step.eta(t)
    }

    fn next_interval(&mut self, _ctx: &AggregationContext<'_>) -> Result<usize> {
        Ok(self.tau)
    }

    fn rounds(&mut self, ctx: &RoundContext<'_>) -> Result<usize> {
        match self.plan {
            GammaPlan::None => Ok(0),
            GammaPlan::Every { gamma, every } => Ok(if every > 0 && ctx.t.is_multiple_of(every) { gamma } else { 0 }),
            GammaPlan::Rule { phi, estimated } => {
                if ctx.spec.size() <= 1 {
                    return Ok(0);
                }
                let ups = if estimated {
                    divergence_estimate(ctx.tilde, &ctx.spec.adjacency)?
                } else {
                    divergence_exact(ctx.tilde)
                };
                cluster_rounds(ctx.eta, phi, ctx.spec, ups)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub horizon: usize,
    /// Mini-batch size; `None` uses the full local dataset.
    pub batch_size: Option<usize>,
    pub aggregation: Aggregation,
    pub gamma_cap: usize,
    /// Per-round Rayleigh packet loss on D2D links.
    pub outage: Option<ChannelParams>,
    pub cost: CostParams,
    pub record_accuracy: bool,
    /// Re-place devices (and rebuild graphs) at every aggregation.
    pub relocate: Option<TopologyConfig>,
    pub seed: u64,
    /// Initial model; zeros when absent.
    pub init: Option<Vec<f64>>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            horizon: 100,
            batch_size: None,
            aggregation: Aggregation::Sampled,
            gamma_cap: 100,
            outage: None,
            cost: CostParams::default(),
            record_accuracy: false,
            relocate: None,
            seed: 0,
            init: None,
        }
    }
}

/// The CSV columns, in file order.
pub const TRACE_COLUMNS: [&str; 8] = [
    "t",
    "loss_gap_sampled",
    "loss_gap_avg",
    "dispersion",
    "eps_rms",
    "gamma_total",
    "energy_J",
    "delay_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub loss_gap_sampled: f64,
    pub loss_gap_avg: f64,
    pub dispersion: f64,
    pub eps_rms: f64,
    pub gamma_total: usize,
    #[serde(rename = "energy_J")]
    pub energy_j: f64,
    pub delay_s: f64,
}

/// Everything recorded at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub row: TraceRow,
    pub eta: f64,
    pub gammas: Vec<usize>,
    /// Clusters whose requested rounds exceeded the cap.
    pub capped: Vec<usize>,
    /// Consensus error `sqrt(mean ||e_i||^2)` per cluster.
    pub eps: Vec<f64>,
    pub aggregated: bool,
    pub participants: usize,
    /// Accuracy of the server model, at aggregation instants.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTrace {
    pub seed: u64,
    pub initial_gap: f64,
    pub initial_accuracy: Option<f64>,
    pub steps: Vec<StepRecord>,
    pub control: Vec<ControlRow>,
    /// Number of devices per cluster.
    pub cluster_sizes: Vec<usize>,
}

impl MetricsTrace {
    pub fn rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.steps.iter().map(|s| &s.row)
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.rows().map(|r| r.loss_gap_sampled).collect()
    }

    pub fn final_gap(&self) -> f64 {
        self.steps.last().map_or(self.initial_gap, |s| s.row.loss_gap_sampled)
    }

    pub fn aggregation_times(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.aggregated).map(|s| s.row.t).collect()
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for row in self.rows() {
            out.serialize(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(f))
    }

    /// Reads the CSV columns back; auxiliary fields are left empty.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut steps = Vec::new();
        for rec in rdr.deserialize() {
            let row: TraceRow = rec?;
            steps.push(StepRecord {
                row,
                eta: f64::NAN,
                gammas: Vec::new(),
                capped: Vec::new(),
                eps: Vec::new(),
                aggregated: false,
                participants: 0,
                accuracy: None,
            });
        }
        Ok(Self {
            seed: 0,
            initial_gap: f64::NAN,
            initial_accuracy: None,
            steps,
            control: Vec::new(),
            cluster_sizes: Vec::new(),
        })
    }
}

fn mean_row(m: &Array2<f64>) -> ModelVector {
    m.mean_axis(Axis(0)).expect("non-empty cluster")
}

fn sample_devices(problem: &Problem, seed: u64, k: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, &[tag::SAMPLE, k as u64]);
    problem.clusters.iter().map(|c| r.random_range(0..c.len())).collect()
}

/// `sum_c varrho_c w_{n_c}` or the full network average.
fn server_model(models: &[Array2<f64>], weights: &[f64], sampled: &[usize], aggregation: Aggregation) -> ModelVector {
    let dim = models[0].ncols();
    let mut out = ModelVector::zeros(dim);
    for ((m, &rho), &n) in models.iter().zip(weights).zip(sampled) {
        match aggregation {
            Aggregation::Sampled => out.scaled_add(rho, &m.row(n)),
            Aggregation::Full => out.scaled_add(rho, &mean_row(m)),
        }
    }
    out
}

fn check_finite(t: usize, what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite { t, what: what.to_string() })
    }
}

/// Runs the protocol with the given controller.
pub fn run_tthf(problem: &Problem, controller: &mut dyn Controller, cfg: &TrainerConfig) -> Result<MetricsTrace> {
    let dim = problem.model.dim;
    let weights = problem.weights();
    let n_clusters = problem.n_clusters();
    let sizes: Vec<usize> = problem.clusters.iter().map(Vec::len).collect();
    let seed = cfg.seed;
    if let Some(b) = cfg.batch_size {
        let smallest = problem.clusters.iter().flatten().map(DevicePartition::len).min().unwrap_or(0);
        if b == 0 || b > smallest {
            return Err(Error::invalid("batch_size", format!("must lie in 1..={smallest}, got {b}")));
        }
    }
    let w0 = match &cfg.init {
        Some(v) if v.len() != dim => {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            })
        }
        Some(v) => ModelVector::from(v.clone()),
        None => ModelVector::zeros(dim),
    };
    let broadcast = |w: &ModelVector| -> Vec<Array2<f64>> {
        sizes
            .iter()
            .map(|&s| {
                let mut m = Array2::<f64>::zeros((s, dim));
                m.rows_mut().into_iter().for_each(|mut r| r.assign(w));
                m
            })
            .collect()
    };
    let accuracy = |w: &ModelVector| -> Option<f64> {
        cfg.record_accuracy
            .then(|| problem.clusters.iter().map(|c| sign_accuracy(w, c) * c.len() as f64).sum::<f64>() / problem.n_devices() as f64)
    };

    let mut topology = problem.topology.clone();
    let mut outages: Vec<OutagePolicy> = outage_policies(&topology, cfg.outage.as_ref());
    let mut models = broadcast(&w0);
    let initial_gap = problem.gap(&w0)?;
    check_finite(0, "initial loss", [initial_gap])?;

    let mut k = 0usize;
    let mut sampled = sample_devices(problem, seed, k);
    let sampled_models: Vec<ModelVector> = vec![w0.clone(); n_clusters];
    let mut tau = controller.next_interval(&AggregationContext {
        t: 0,
        k,
        horizon: cfg.horizon,
        w_hat: &w0,
        sampled: &sampled,
        sampled_models: &sampled_models,
        problem,
        seed,
        batch_size: cfg.batch_size,
    })?;
    let mut control = Vec::new();
    let mut next_agg = clamp_interval(0, tau, cfg.horizon)?;
    if let Some(row) = controller.control_row() {
        control.push(ControlRow { tau: next_agg, ..row });
    }

    let mut steps = Vec::with_capacity(cfg.horizon);
    for t in 1..=cfg.horizon {
        let eta_prev = controller.eta(t - 1);
        let eta_t = controller.eta(t);
        check_finite(t, "step size", [eta_prev, eta_t])?;

        // Local SGD, in parallel over clusters and devices.
        let tildes: Vec<Array2<f64>> = models
            .par_iter()
            .enumerate()
            .map(|(c, m)| -> Result<Array2<f64>> {
                let mut out = m.clone();
                let base = problem.device_index(c, 0);
                let grads: Vec<Result<ModelVector>> = (0..m.nrows())
                    .into_par_iter()
                    .map(|i| {
                        let w = m.row(i).to_owned();
                        let part = &problem.clusters[c][i];
                        match cfg.batch_size {
                            None => problem.model.grad_full(&w, part),
                            Some(b) => {
                                let mut r = rng::stream(seed, &[tag::SGD, t as u64, (base + i) as u64]);
                                problem.model.grad_sgd(&w, part, b, &mut r)
                            }
                        }
                    })
                    .collect();
                for (i, g) in grads.into_iter().enumerate() {
                    out.row_mut(i).scaled_add(-eta_prev, &g?);
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (c, m) in tildes.iter().enumerate() {
            check_finite(t, &format!("local model in cluster {c}"), m.iter().copied())?;
        }

        // Consensus plan, then rounds in parallel.
        let mut gammas = Vec::with_capacity(n_clusters);
        let mut capped = Vec::new();
        for (c, tilde) in tildes.iter().enumerate() {
            let want = controller.rounds(&RoundContext {
                t,
                cluster: c,
                eta: eta_t,
                tilde,
                spec: &topology.clusters[c],
            })?;
            if want > cfg.gamma_cap {
                capped.push(c);
            }
            gammas.push(want.min(cfg.gamma_cap));
        }
        let mixed: Vec<(Array2<f64>, f64)> = tildes
            .into_par_iter()
            .enumerate()
            .map(|(c, tilde)| {
                let mut r = rng::stream(seed, &[tag::OUTAGE, t as u64, c as u64]);
                let cm = run_consensus(&tilde, &topology.clusters[c].v, gammas[c], &outages[c], &mut r);
                let eps = consensus_error(&cm).rms;
                (cm.post, eps)
            })
            .collect();
        let eps: Vec<f64> = mixed.iter().map(|(_, e)| *e).collect();
        models = mixed.into_iter().map(|(m, _)| m).collect();

        let means: Vec<ModelVector> = models.iter().map(mean_row).collect();
        let dispersion = dispersion_sample(&means, &weights);
        let mut w_bar = ModelVector::zeros(dim);
        for (m, &rho) in means.iter().zip(&weights) {
            w_bar.scaled_add(rho, m);
        }
        let w_hat = server_model(&models, &weights, &sampled, cfg.aggregation);
        let loss_gap_avg = problem.gap(&w_bar)?;
        let loss_gap_sampled = problem.gap(&w_hat)?;
        check_finite(t, "loss gap", [loss_gap_avg, loss_gap_sampled])?;
        let eps_rms = weights.iter().zip(&eps).map(|(r, e)| r * e * e).sum::<f64>().sqrt();

        let aggregated = t == next_agg;
        let participants = match (aggregated, cfg.aggregation) {
            (false, _) => 0,
            (true, Aggregation::Sampled) => n_clusters,
            (true, Aggregation::Full) => problem.n_devices(),
        };
        let (mut energy, mut delay) = (0.0, 0.0);
        for (c, &g) in gammas.iter().enumerate() {
            energy += (g * sizes[c]) as f64 * cfg.cost.e_d2d;
            delay += g as f64 * cfg.cost.delta_d2d;
        }
        if aggregated {
            energy += cfg.cost.e_glob * participants as f64 / n_clusters as f64;
            delay += cfg.cost.delta_glob;
        }

        let mut acc = None;
        if aggregated {
            let pre_models: Vec<ModelVector> = models.iter().zip(&sampled).map(|(m, &n)| m.row(n).to_owned()).collect();
            models = broadcast(&w_hat);
            check_broadcast(t, &models, &w_hat)?;
            acc = accuracy(&w_hat);
            k += 1;
            if let Some(reloc) = &cfg.relocate {
                topology = relocate(reloc, &topology, seed, k)?;
                outages = outage_policies(&topology, cfg.outage.as_ref());
            }
            let used = std::mem::replace(&mut sampled, sample_devices(problem, seed, k));
            if t < cfg.horizon {
                tau = controller.next_interval(&AggregationContext {
                    t,
                    k,
                    horizon: cfg.horizon,
                    w_hat: &w_hat,
                    sampled: &used,
                    sampled_models: &pre_models,
                    problem,
                    seed,
                    batch_size: cfg.batch_size,
                })?;
                next_agg = t + clamp_interval(t, tau, cfg.horizon)?;
                if let Some(row) = controller.control_row() {
                    control.push(ControlRow {
                        tau: next_agg - t,
                        ..row
                    });
                }
            }
        }

        steps.push(StepRecord {
            row: TraceRow {
                t,
                loss_gap_sampled,
                loss_gap_avg,
                dispersion,
                eps_rms,
                gamma_total: gammas.iter().sum(),
                energy_j: energy,
                delay_s: delay,
            },
            eta: eta_prev,
            gammas,
            capped,
            eps,
            aggregated,
            participants,
            accuracy: acc,
        });
    }
    let initial_accuracy = accuracy(&w0);
    Ok(MetricsTrace {
        seed,
        initial_gap,
        initial_accuracy,
        steps,
        control,
        cluster_sizes: sizes,
    })
}

fn clamp_interval(t: usize, tau: usize, horizon: usize) -> Result<usize> {
    if tau == 0 {
        return Err(Error::invalid("tau", format!("interval starting at t={t} has length 0")));
    }
    Ok(tau.min(horizon.saturating_sub(t)).max(1))
}

fn check_broadcast(t: usize, models: &[Array2<f64>], w_hat: &ModelVector) -> Result<()> {
    for (c, m) in models.iter().enumerate() {
        if m.outer_iter().any(|row| row != w_hat.view()) {
            return Err(Error::Invariant(format!("cluster {c} differs from the broadcast model at t={t}")));
        }
    }
    Ok(())
}

fn outage_policies(topology: &Topology, params: Option<&ChannelParams>) -> Vec<OutagePolicy> {
    topology
        .clusters
        .iter()
        .map(|spec| match params {
            Some(p) => OutagePolicy::rayleigh(p, spec),
            None => OutagePolicy::disabled(),
        })
        .collect()
}

fn relocate(cfg: &TopologyConfig, current: &Topology, seed: u64, k: usize) -> Result<Topology> {
    let next = build_topology(cfg, rng::derive_seed(seed, &[tag::TOPOLOGY, k as u64]))?;
    if next.sizes() != current.sizes() {
        return Err(Error::invalid("relocate", "relocation config changes cluster sizes"));
    }
    Ok(next)
}

/// Federated averaging with full participation and no D2D rounds.
pub fn run_baseline(problem: &Problem, step: StepSchedule, tau: usize, cfg: &TrainerConfig) -> Result<MetricsTrace> {
    let mut ctl = FixedController {
        step,
        tau,
        plan: GammaPlan::None,
    };
    let cfg = TrainerConfig {
        aggregation: Aggregation::Full,
        ..cfg.clone()
    };
    run_tthf(problem, &mut ctl, &cfg)
}

/// One SGD step `w - eta g` for a single device.
pub fn local_sgd_step<R: Rng + ?Sized>(
    model: &LossModel,
    w: &ModelVector,
    part: &DevicePartition,
    eta: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<ModelVector> {
    let g = model.grad_sgd(w, part, batch_size, rng)?;
    let mut out = w.clone();
    out.scaled_add(-eta, &g);
    Ok(out)
}

/// `sum_c varrho_c w_{n_c}` with `n_c` drawn uniformly per cluster.
pub fn global_aggregate<R: Rng + ?Sized>(clusters: &[Array2<f64>], weights: &[f64], rng: &mut R) -> (ModelVector, Vec<usize>) {
    let sampled: Vec<usize> = clusters.iter().map(|m| rng.random_range(0..m.nrows())).collect();
    (server_model(clusters, weights, &sampled, Aggregation::Sampled), sampled)
}
