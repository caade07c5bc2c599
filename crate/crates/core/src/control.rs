//! Adaptive control: step-size parameters, the feasibility check, the
//! largest admissible consensus coefficient `phi`, online estimators, the
//! divergence predictor, the consensus-round rule and the interval-length
//! line search.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    alpha_min, diversity_fit, nu_diversity_term, omega_max, omega_of, thm2_constants, z1, z1_omega_max_sq, z2,
    z2_slope, Thm2Inputs,
};
use crate::consensus::{divergence_estimate, divergence_exact, lemma1_bound};
use crate::losses::{DevicePartition, LossModel};
use crate::rng::{self, tag};
use crate::topology::ClusterSpec;
use crate::trainer::{run_tthf, AggregationContext, ControlRow, Controller, MetricsTrace, Problem, RoundContext, TrainerConfig};
use crate::{Error, ModelVector, Result};

/// Energy, delay and objective weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    /// Energy of one D2D round per device, J.
    pub e_d2d: f64,
    /// Energy of one sampled global aggregation, J.
    pub e_glob: f64,
    /// Delay of one D2D round, s.
    pub delta_d2d: f64,
    /// Delay of one global aggregation, s.
    pub delta_glob: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            e_d2d: 0.04,
            e_glob: 1.0,
            delta_d2d: 0.04,
            delta_glob: 1.0,
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.e_d2d, self.e_glob, self.delta_d2d, self.delta_glob, self.c1, self.c2, self.c3];
        if all.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("cost", "all cost parameters must be finite and >= 0"))
        }
    }
}

/// Smallest `Gamma >= 0` with `lambda^Gamma sqrt(s) Upsilon <= eta phi`.
///
/// Returns 0 when `Upsilon = 0` or the divergence is already under the
/// target, and `usize::MAX` when the target is zero but the divergence is
/// not.
pub fn gamma_rounds(eta: f64, phi: f64, s_c: usize, upsilon: f64, lambda: f64) -> Result<usize> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::invalid("lambda", format!("{lambda} outside (0, 1)")));
    }
    if !(upsilon >= 0.0) {
        return Err(Error::invalid("upsilon", format!("{upsilon} must be >= 0")));
    }
    let target = eta * phi;
    let spread = (s_c as f64).sqrt() * upsilon;
    if upsilon == 0.0 || spread <= target {
        return Ok(0);
    }
    if !(target > 0.0) {
        return Ok(usize::MAX);
    }
    let guess = ((target / spread).ln() / lambda.ln()).ceil();
    if !guess.is_finite() || guess >= i32::MAX as f64 {
        return Ok(usize::MAX);
    }
    let mut g = guess.max(1.0) as usize;
    while lemma1_bound(lambda, g, s_c, upsilon) > target {
        g += 1;
    }
    while g > 1 && lemma1_bound(lambda, g - 1, s_c, upsilon) <= target {
        g -= 1;
    }
    Ok(g)
}

/// [`gamma_rounds`] for a cluster, treating single devices and perfect
/// mixers (`lambda = 0`) directly.
pub fn cluster_rounds(eta: f64, phi: f64, spec: &ClusterSpec, upsilon: f64) -> Result<usize> {
    let s = spec.size();
    if s <= 1 || upsilon == 0.0 {
        return Ok(0);
    }
    if spec.lambda == 0.0 {
        return Ok(usize::from((s as f64).sqrt() * upsilon > eta * phi));
    }
    gamma_rounds(eta, phi, s, upsilon, spec.lambda)
}

/// Smallest `alpha >= alpha_min` with `omega_max(alpha) > omega`.
pub fn select_alpha(mu: f64, beta: f64, gamma: f64, omega: f64, tau: usize) -> Result<f64> {
    const CAP: f64 = 1e8;
    if mu * gamma <= 1.0 {
        return Err(Error::RateCertificateInapplicable(format!(
            "mu*gamma = {} must exceed 1",
            mu * gamma
        )));
    }
    if !(0.0..1.0).contains(&omega) {
        return Err(Error::invalid("omega", format!("{omega} outside [0, 1)")));
    }
    let lo = alpha_min(mu, beta, gamma, omega);
    let ok = |a: f64| omega_max(mu, beta, gamma, tau, a) > omega;
    if ok(lo) {
        return Ok(lo);
    }
    if !ok(CAP) {
        return Err(Error::DiversityTooLarge { omega, cap: CAP });
    }
    let (mut lo, mut hi) = (lo, CAP);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Model and environment constants the controller plugs into the rate
/// certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateInputs {
    pub mu: f64,
    pub beta: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub tau: usize,
    pub sigma2: f64,
    pub delta: f64,
    pub omega: f64,
    /// Initial loss gap or its surrogate `||grad F(w0)||^2 / (2 mu)`.
    pub init_gap: f64,
}

impl RateInputs {
    pub fn with_phi(&self, phi: f64) -> Thm2Inputs {
        Thm2Inputs {
            gamma: self.gamma,
            alpha: self.alpha,
            mu: self.mu,
            beta: self.beta,
            tau: self.tau,
            sigma2: self.sigma2,
            phi,
            delta: self.delta,
            omega: self.omega,
            init_gap: self.init_gap,
        }
    }

    fn z2_min(&self) -> f64 {
        z2(self.beta, self.gamma, self.tau, self.alpha, self.sigma2, 0.0, self.delta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BindingTerm {
    Noise,
    Diversity,
    Initial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub nu_max: f64,
    /// Noise, diversity and initial-gap terms of `nu` at `phi = 0`.
    pub terms: [f64; 3],
    pub binding: BindingTerm,
}

/// Compares the `phi = 0` value of every argument of `nu` with `nu_max`.
pub fn feasibility_check_nu(nu_max: f64, r: &RateInputs) -> Result<FeasibilityReport> {
    let i = r.with_phi(0.0);
    thm2_constants(&i)?;
    let z1v = z1(r.mu, r.beta, r.gamma, r.tau, r.alpha);
    let z2m = r.z2_min();
    let terms = [
        r.beta * r.beta * r.gamma * r.gamma * z2m / (r.mu * r.gamma - 1.0),
        nu_diversity_term(&i, z1v, z2m),
        r.alpha * r.init_gap,
    ];
    let (idx, worst) = terms
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let binding = [BindingTerm::Noise, BindingTerm::Diversity, BindingTerm::Initial][idx];
    Ok(FeasibilityReport {
        feasible: worst <= nu_max,
        nu_max,
        terms,
        binding,
    })
}

/// Feasibility with `nu_max = xi (T + alpha)`.
pub fn feasibility_check(horizon: usize, xi: f64, r: &RateInputs) -> Result<FeasibilityReport> {
    feasibility_check_nu(xi * (horizon as f64 + r.alpha), r)
}

/// Largest `phi` keeping `nu <= nu_max`.
pub fn phi_max(nu_max: f64, r: &RateInputs) -> Result<f64> {
    let z1v = z1(r.mu, r.beta, r.gamma, r.tau, r.alpha);
    let bg2 = r.beta * r.beta * r.gamma * r.gamma;
    let div_room = (z1_omega_max_sq(r.mu, r.beta, r.gamma, r.alpha) - z1v * r.omega * r.omega) / r.alpha;
    let cap = ((r.mu * r.gamma - 1.0) / bg2).min(div_room);
    let z2m = r.z2_min();
    let mut num = nu_max * cap - z2m;
    if num < 0.0 && num.abs() <= 1e-12 * z2m.abs().max(f64::MIN_POSITIVE) {
        num = 0.0;
    }
    if num < 0.0 {
        return Err(Error::RerunFeasibility(num));
    }
    let den = 1.0 + r.beta * z2_slope(r.beta, r.gamma, r.tau, r.alpha);
    Ok(r.beta.sqrt() * (num / den).sqrt())
}

/// `||g1 - g2||^2 / 2` from two independent mini-batches, together with
/// their mean.
pub fn estimate_sigma<R: Rng + ?Sized>(
    model: &LossModel,
    w: &ModelVector,
    part: &DevicePartition,
    batch_size: usize,
    rng: &mut R,
) -> Result<(f64, ModelVector)> {
    let g1 = model.grad_sgd(w, part, batch_size, rng)?;
    let g2 = model.grad_sgd(w, part, batch_size, rng)?;
    let d = &g1 - &g2;
    Ok((0.5 * d.dot(&d), (g1 + g2) * 0.5))
}

/// The server keeps the largest reported value.
pub fn server_sigma(reports: &[f64]) -> f64 {
    reports.iter().copied().fold(0.0, f64::max)
}

/// Line fits of the divergence dynamics, one per regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    /// `Upsilon_t = A Upsilon_{t-1} + B` after a step without consensus.
    pub a_idle: f64,
    pub b_idle: f64,
    /// `Upsilon_t = a Upsilon_{t-1} + b` after a step with consensus.
    pub a_mix: f64,
    pub b_mix: f64,
    pub idle_fallback: bool,
    pub mix_fallback: bool,
}

impl Default for Predictor {
    fn default() -> Self {
        Self {
            a_idle: 1.0,
            b_idle: 0.0,
            a_mix: 1.0,
            b_mix: 0.0,
            idle_fallback: true,
            mix_fallback: true,
        }
    }
}

impl Predictor {
    pub fn predict(&self, prev_upsilon: f64, prev_gamma: usize) -> f64 {
        let next = if prev_gamma == 0 {
            self.a_idle * prev_upsilon + self.b_idle
        } else {
            self.a_mix * prev_upsilon + self.b_mix
        };
        next.max(0.0)
    }
}

/// Least-squares line through `(x, y)`; `None` with fewer than two points.
/// A degenerate spread in `x` keeps slope one.
fn fit_line(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= 1e-24 * (1.0 + mx * mx) * nf {
        return Some((1.0, my - mx));
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Fits both regimes from consecutive `(Upsilon, Gamma)` samples.
pub fn fit_predictor(upsilon: &[f64], gammas: &[usize]) -> Predictor {
    assert_eq!(upsilon.len(), gammas.len());
    let (mut xi, mut yi, mut xm, mut ym) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for k in 1..upsilon.len() {
        if gammas[k - 1] == 0 {
            xi.push(upsilon[k - 1]);
            yi.push(upsilon[k]);
        } else {
            xm.push(upsilon[k - 1]);
            ym.push(upsilon[k]);
        }
    }
    let mut p = Predictor::default();
    if let Some((a, b)) = fit_line(&xi, &yi) {
        p.a_idle = a;
        p.b_idle = b;
        p.idle_fallback = false;
    }
    if let Some((a, b)) = fit_line(&xm, &ym) {
        p.a_mix = a;
        p.b_mix = b;
        p.mix_fallback = false;
    }
    p
}

/// What the line search needs to know about one cluster.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPlan {
    pub size: usize,
    pub lambda: f64,
    pub predictor: Predictor,
}

/// Step-size and consensus parameters the line search rolls forward with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanParams {
    pub gamma: f64,
    pub alpha: f64,
    pub phi: f64,
    pub gamma_cap: usize,
}

fn plan_rounds(eta: f64, phi: f64, c: &ClusterPlan, upsilon: f64, cap: usize) -> Result<usize> {
    if c.size <= 1 || upsilon == 0.0 {
        return Ok(0);
    }
    let g = if c.lambda == 0.0 {
        usize::from((c.size as f64).sqrt() * upsilon > eta * phi)
    } else {
        gamma_rounds(eta, phi, c.size, upsilon, c.lambda)?
    };
    Ok(g.min(cap))
}

/// Objective of the interval-length problem for every `tau` in
/// `1..=tau_max`; index `tau - 1`.
pub fn interval_objective(
    t_km1: usize,
    p: &PlanParams,
    cost: &CostParams,
    clusters: &[ClusterPlan],
    tau_max: usize,
) -> Result<Vec<f64>> {
    if tau_max == 0 {
        return Err(Error::invalid("tau_range", "empty range of interval lengths"));
    }
    // Rounds at each t = t_km1 ..= t_km1 + tau_max, summed over clusters.
    let mut rounds = vec![0.0; tau_max + 1];
    let mut weighted = vec![0.0; tau_max + 1];
    for c in clusters {
        let mut ups = 0.0;
        let mut prev_gamma = 0usize;
        for (j, (r, w)) in rounds.iter_mut().zip(weighted.iter_mut()).enumerate() {
            if j > 0 {
                ups = c.predictor.predict(ups, prev_gamma);
            }
            let t = t_km1 + j;
            let eta = p.gamma / (t as f64 + p.alpha);
            let g = plan_rounds(eta, p.phi, c, ups, p.gamma_cap)?;
            *r += g as f64;
            *w += (g * c.size) as f64;
            prev_gamma = g;
        }
    }
    let mut out = Vec::with_capacity(tau_max);
    let (mut sum_r, mut sum_w) = (rounds[0], weighted[0]);
    for tau in 1..=tau_max {
        sum_r += rounds[tau];
        sum_w += weighted[tau];
        let tf = tau as f64;
        let energy = cost.c1 * (cost.e_glob + sum_w * cost.e_d2d) / tf;
        let delay = cost.c2 * (cost.delta_glob + sum_r * cost.delta_d2d) / tf;
        let progress = cost.c3 * (1.0 - (t_km1 as f64 + p.alpha) / (t_km1 as f64 + tf + p.alpha));
        out.push(energy + delay + progress);
    }
    Ok(out)
}

/// Integer line search over `1..=tau_max`; ties go to the smaller `tau`.
pub fn solve_p(t_km1: usize, p: &PlanParams, cost: &CostParams, clusters: &[ClusterPlan], tau_max: usize) -> Result<usize> {
    let obj = interval_objective(t_km1, p, cost, clusters, tau_max)?;
    let mut best = 0;
    for (k, v) in obj.iter().enumerate() {
        if *v < obj[best] {
            best = k;
        }
    }
    Ok(best + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitGapVariant {
    /// `||grad F(w0)||^2 / (2 mu)` from the sampled gradients.
    PlSurrogate,
    /// The true `F(w0) - F(w*)`.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptiveConfig {
    /// Target loss `xi`.
    pub xi: f64,
    /// Longest tolerable interval.
    pub tau_max: usize,
    /// First interval length.
    pub tau1: usize,
    /// `zeta = zeta_fraction * 2 beta`.
    pub zeta_fraction: f64,
    /// `gamma = gamma_factor / mu`.
    pub gamma_factor: f64,
    pub init_gap: InitGapVariant,
    /// Divergence from flooding (`true`) or the exact pairwise maximum.
    pub estimated_upsilon: bool,
    /// Horizon doublings tried before relaxing `xi`.
    pub max_horizon_doublings: usize,
    pub max_xi_relaxations: usize,
    pub xi_relaxation: f64,
    pub cost: CostParams,
    pub gamma_cap: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            xi: 0.1,
            tau_max: 20,
            tau1: 10,
            zeta_fraction: 0.1,
            gamma_factor: 2.0,
            init_gap: InitGapVariant::PlSurrogate,
            estimated_upsilon: true,
            max_horizon_doublings: 3,
            max_xi_relaxations: 3,
            xi_relaxation: 1.25,
            cost: CostParams::default(),
            gamma_cap: 100,
        }
    }
}

/// Server-side estimates and tuned parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub zeta: f64,
    pub delta_prime: f64,
    pub sigma2: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub phi: f64,
    pub nu_max: f64,
    pub nu: f64,
    pub xi: f64,
    pub horizon: usize,
    pub tau_max: usize,
    pub predictors: Vec<Predictor>,
}

/// The adaptive controller.
pub struct AdaptiveController {
    cfg: AdaptiveConfig,
    mu: f64,
    beta: f64,
    pub state: ControlState,
    init_gap: Option<f64>,
    /// `(Upsilon, Gamma)` per cluster over the running interval.
    history: Vec<Vec<(f64, usize)>>,
    last_row: Option<ControlRow>,
}

impl AdaptiveController {
    pub fn new(cfg: AdaptiveConfig, problem: &Problem) -> Result<Self> {
        cfg.cost.validate()?;
        if cfg.tau_max == 0 || cfg.tau1 == 0 || cfg.tau1 > cfg.tau_max {
            return Err(Error::invalid("tau1", "need 1 <= tau1 <= tau_max"));
        }
        if !(cfg.zeta_fraction >= 0.0 && cfg.zeta_fraction < 1.0) {
            return Err(Error::invalid("zeta_fraction", "must lie in [0, 1)"));
        }
        if !(cfg.xi > 0.0) {
            return Err(Error::invalid("xi", "target loss must be > 0"));
        }
        let (mu, beta) = (problem.mu, problem.beta);
        let gamma = cfg.gamma_factor / mu;
        let zeta = cfg.zeta_fraction * 2.0 * beta;
        let alpha = select_alpha(mu, beta, gamma, omega_of(zeta, beta), cfg.tau_max)?;
        Ok(Self {
            cfg,
            mu,
            beta,
            state: ControlState {
                zeta,
                delta_prime: 0.0,
                sigma2: 0.0,
                gamma,
                alpha,
                phi: 0.0,
                nu_max: 0.0,
                nu: 0.0,
                xi: cfg.xi,
                horizon: 0,
                tau_max: cfg.tau_max,
                predictors: vec![Predictor::default(); problem.n_clusters()],
            },
            init_gap: None,
            history: vec![Vec::new(); problem.n_clusters()],
            last_row: None,
        })
    }

    fn omega(&self) -> f64 {
        omega_of(self.state.zeta, self.beta)
    }

    /// Sampled-device estimates of `delta'`, `sigma^2` and `grad F`.
    fn estimate(&self, ctx: &AggregationContext<'_>) -> Result<(f64, f64, ModelVector)> {
        let p = ctx.problem;
        let mut grads = Vec::with_capacity(p.n_clusters());
        let mut sigmas = Vec::with_capacity(p.n_clusters());
        for (c, (&n, w)) in ctx.sampled.iter().zip(ctx.sampled_models).enumerate() {
            let part = &p.clusters[c][n];
            let batch = ctx.batch_size.unwrap_or(part.len());
            let mut r = rng::stream(ctx.seed, &[tag::SIGMA, ctx.k as u64, c as u64]);
            let (s2, g) = estimate_sigma(&p.model, w, part, batch, &mut r)?;
            sigmas.push(s2);
            grads.push(g);
        }
        let weights = p.weights();
        let delta_prime = diversity_fit(&grads, &weights, ctx.w_hat.dot(ctx.w_hat).sqrt(), self.state.zeta);
        let mut g_avg = ModelVector::zeros(p.model.dim);
        for (g, &r) in grads.iter().zip(&weights) {
            g_avg.scaled_add(r, g);
        }
        Ok((delta_prime, server_sigma(&sigmas), g_avg))
    }

    fn rate_inputs(&self) -> RateInputs {
        RateInputs {
            mu: self.mu,
            beta: self.beta,
            gamma: self.state.gamma,
            alpha: self.state.alpha,
            tau: self.cfg.tau_max,
            sigma2: self.state.sigma2,
            delta: self.state.delta_prime,
            omega: self.omega(),
            init_gap: self.init_gap.unwrap_or(0.0),
        }
    }

    /// Feasibility with the relaxation schedule, then `phi_max`.
    fn tune(&mut self, horizon: usize) -> Result<()> {
        let r = self.rate_inputs();
        let mut t_eff = horizon;
        let mut xi = self.cfg.xi;
        let mut doublings = 0;
        let mut relaxations = 0;
        loop {
            let rep = feasibility_check(t_eff, xi, &r)?;
            if rep.feasible {
                self.state.nu_max = rep.nu_max;
                break;
            }
            if doublings < self.cfg.max_horizon_doublings {
                doublings += 1;
                t_eff *= 2;
            } else if relaxations < self.cfg.max_xi_relaxations {
                relaxations += 1;
                xi *= self.cfg.xi_relaxation;
            } else {
                return Err(Error::Infeasible(format!(
                    "binding term {:?} = {:e} exceeds nu_max = {:e} (T = {t_eff}, xi = {xi})",
                    rep.binding,
                    rep.terms.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    rep.nu_max
                )));
            }
        }
        if doublings + relaxations > 0 {
            log::info!("feasibility relaxed: T = {t_eff}, xi = {xi}");
        }
        self.state.xi = xi;
        self.state.horizon = t_eff;
        self.state.phi = phi_max(self.state.nu_max, &r)?;
        self.state.nu = thm2_constants(&r.with_phi(self.state.phi))?.nu;
        Ok(())
    }
}

impl Controller for AdaptiveController {
    fn eta(&self, t: usize) -> f64 {
        self.state.gamma / (t as f64 + self.state.alpha)
    }

    fn next_interval(&mut self, ctx: &AggregationContext<'_>) -> Result<usize> {
        let (delta_prime, sigma2, g_avg) = self.estimate(ctx)?;
        self.state.delta_prime = delta_prime;
        self.state.sigma2 = sigma2;
        if self.init_gap.is_none() {
            self.init_gap = Some(match self.cfg.init_gap {
                InitGapVariant::PlSurrogate => g_avg.dot(&g_avg) / (2.0 * self.mu),
                InitGapVariant::Exact => ctx.problem.gap(ctx.w_hat)?,
            });
        }
        self.tune(ctx.horizon)?;

        let tau = if ctx.k == 0 {
            self.cfg.tau1
        } else {
            for (c, h) in self.history.iter().enumerate() {
                let ups: Vec<f64> = h.iter().map(|x| x.0).collect();
                let gam: Vec<usize> = h.iter().map(|x| x.1).collect();
                self.state.predictors[c] = fit_predictor(&ups, &gam);
            }
            let plans: Vec<ClusterPlan> = ctx
                .problem
                .topology
                .clusters
                .iter()
                .zip(&self.state.predictors)
                .map(|(spec, &predictor)| ClusterPlan {
                    size: spec.size(),
                    lambda: spec.lambda,
                    predictor,
                })
                .collect();
            let params = PlanParams {
                gamma: self.state.gamma,
                alpha: self.state.alpha,
                phi: self.state.phi,
                gamma_cap: self.cfg.gamma_cap,
            };
            let room = ctx.horizon.saturating_sub(ctx.t).clamp(1, self.cfg.tau_max);
            solve_p(ctx.t, &params, &self.cfg.cost, &plans, room)?
        };
        for h in &mut self.history {
            h.clear();
        }
        self.last_row = Some(ControlRow {
            k: ctx.k,
            t_start: ctx.t,
            tau,
            alpha: self.state.alpha,
            gamma: self.state.gamma,
            phi: self.state.phi,
            delta_prime: self.state.delta_prime,
            sigma2: self.state.sigma2,
            nu: self.state.nu,
        });
        Ok(tau)
    }

    fn rounds(&mut self, ctx: &RoundContext<'_>) -> Result<usize> {
        let ups = if self.cfg.estimated_upsilon {
            divergence_estimate(ctx.tilde, &ctx.spec.adjacency)?
        } else {
            divergence_exact(ctx.tilde)
        };
        let g = cluster_rounds(ctx.eta, self.state.phi, ctx.spec, ups)?.min(self.cfg.gamma_cap);
        self.history[ctx.cluster].push((ups, g));
        Ok(g)
    }

    fn control_row(&self) -> Option<ControlRow> {
        self.last_row
    }
}

/// Runs TT-HF under the adaptive controller.
pub fn run_adaptive(problem: &Problem, cfg: &AdaptiveConfig, trainer: &TrainerConfig) -> Result<MetricsTrace> {
    let mut ctl = AdaptiveController::new(*cfg, problem)?;
    let trainer = TrainerConfig {
        gamma_cap: cfg.gamma_cap,
        cost: cfg.cost,
        ..trainer.clone()
    };
    run_tthf(problem, &mut ctl, &trainer)
}
