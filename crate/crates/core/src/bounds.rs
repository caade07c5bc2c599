//! Closed-form convergence certificates: gradient diversity, the dispersion
//! bound, the one-step loss bound and the constants of the `O(1/t)` rate.
//!
//! Notation: `mu`, `beta` are the strong convexity and smoothness constants,
//! `omega = zeta / (2 beta)` the normalized diversity slope, `sigma2` the SGD
//! noise variance bound, `delta` the diversity offset and `phi` the
//! consensus-error coefficient (`eps_t = eta_t phi`).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::linalg::symmetric_norm;
use crate::losses::{second_moment, DevicePartition, LossKind, LossModel};
use crate::trainer::StepSchedule;
use crate::{Error, ModelVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityEstimate {
    pub delta: f64,
    pub zeta: f64,
    pub omega: f64,
}

impl DiversityEstimate {
    pub fn new(delta: f64, zeta: f64, beta: f64) -> Self {
        Self {
            delta,
            zeta,
            omega: omega_of(zeta, beta),
        }
    }
}

/// `zeta / (2 beta)` clamped to `[0, 1]`.
pub fn omega_of(zeta: f64, beta: f64) -> f64 {
    (zeta / (2.0 * beta)).clamp(0.0, 1.0)
}

/// Smallest `delta'` with `||g_c - sum varrho g|| <= delta' + zeta ||w_hat||`
/// for every cluster.
pub fn diversity_fit(cluster_grads: &[ModelVector], weights: &[f64], w_hat_norm: f64, zeta: f64) -> f64 {
    assert_eq!(cluster_grads.len(), weights.len());
    let Some(first) = cluster_grads.first() else {
        return 0.0;
    };
    let mut avg = ModelVector::zeros(first.len());
    for (g, &w) in cluster_grads.iter().zip(weights) {
        avg.scaled_add(w, g);
    }
    let worst = cluster_grads
        .iter()
        .map(|g| {
            let d = g - &avg;
            d.dot(&d).sqrt()
        })
        .fold(0.0, f64::max);
    (worst - zeta * w_hat_norm).max(0.0)
}

/// Exact `(delta, zeta)` of a regularized linear regression:
/// `grad F_c(w) - grad F(w) = (H_c - H)(w - w*) + grad F_c(w*)`, so
/// `delta = max_c ||grad F_c(w*)||` and `zeta = max_c ||H_c - H||`.
pub fn quadratic_diversity(
    model: &LossModel,
    clusters: &[Vec<DevicePartition>],
    w_star: &ModelVector,
) -> Result<(f64, f64)> {
    if model.kind != LossKind::LinearRegression {
        return Err(Error::invalid("kind", "exact diversity needs linear regression"));
    }
    let n_devices: usize = clusters.iter().map(Vec::len).sum();
    let mut h_global = Array2::<f64>::zeros((model.dim, model.dim));
    let mut h_clusters = Vec::with_capacity(clusters.len());
    for (c, parts) in clusters.iter().enumerate() {
        if parts.is_empty() {
            return Err(Error::EmptyCluster(c));
        }
        let mut h = Array2::<f64>::zeros((model.dim, model.dim));
        for p in parts {
            h += &second_moment(p);
        }
        h_global += &h;
        h /= parts.len() as f64;
        h_clusters.push(h);
    }
    h_global /= n_devices as f64;
    let mut delta = 0.0f64;
    let mut zeta = 0.0f64;
    for (parts, h) in clusters.iter().zip(&h_clusters) {
        zeta = zeta.max(symmetric_norm(&(h - &h_global)));
        let g = model.global_grad(w_star, std::slice::from_ref(parts))?;
        delta = delta.max(g.dot(&g).sqrt());
    }
    Ok((delta, zeta))
}

/// `1 - mu/(4 beta) + sqrt((1 + mu/(4 beta))^2 + 2 omega)`.
pub fn lambda_plus(mu: f64, beta: f64, omega: f64) -> f64 {
    let x = mu / (4.0 * beta);
    1.0 - x + ((1.0 + x) * (1.0 + x) + 2.0 * omega).sqrt()
}

/// The dispersion growth factor `Sigma_{+,t}` for the interval starting at
/// `t_km1`, via `S_{t+1} = (1 + eta_t beta) S_t + P_t beta eta_t` with
/// `P_t = prod_{j < t} (1 + eta_j beta lambda_+)`.
pub fn sigma_plus(t: usize, t_km1: usize, sched: &StepSchedule, beta: f64, lam_plus: f64) -> f64 {
    let mut s = 0.0;
    let mut p = 1.0;
    for l in t_km1..t {
        let eta = sched.eta(l);
        s = (1.0 + eta * beta) * s + p * beta * eta;
        p *= 1.0 + eta * beta * lam_plus;
    }
    s
}

/// `sum_c varrho_c ||w_c - w_bar||^2` with `w_bar = sum_c varrho_c w_c`.
pub fn dispersion_sample(cluster_means: &[ModelVector], weights: &[f64]) -> f64 {
    assert_eq!(cluster_means.len(), weights.len());
    let Some(first) = cluster_means.first() else {
        return 0.0;
    };
    let mut avg = ModelVector::zeros(first.len());
    for (w, &r) in cluster_means.iter().zip(weights) {
        avg.scaled_add(r, w);
    }
    cluster_means
        .iter()
        .zip(weights)
        .map(|(w, &r)| {
            let d = w - &avg;
            r * d.dot(&d)
        })
        .sum()
}

/// Per-timestep mean over runs; every run must have the same length.
pub fn dispersion_mc(runs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = runs.first() else {
        return Ok(Vec::new());
    };
    if let Some(bad) = runs.iter().find(|r| r.len() != first.len()) {
        return Err(Error::DimensionMismatch {
            expected: first.len(),
            found: bad.len(),
        });
    }
    let n = runs.len() as f64;
    Ok((0..first.len()).map(|t| runs.iter().map(|r| r[t]).sum::<f64>() / n).collect())
}

/// Inputs of the dispersion bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DispersionConstants {
    pub mu: f64,
    pub beta: f64,
    pub omega: f64,
    pub sigma2: f64,
    pub delta: f64,
    /// Consensus-error bound at the start of the interval.
    pub eps0: f64,
    pub gamma: f64,
    pub alpha: f64,
}

impl DispersionConstants {
    pub fn schedule(&self) -> StepSchedule {
        StepSchedule::Diminishing {
            gamma: self.gamma,
            alpha: self.alpha,
        }
    }

    /// `alpha >= gamma beta max{lambda_+ - 2 + mu/(2 beta), beta/mu}`.
    pub fn check_hypothesis(&self) -> Result<()> {
        let lp = lambda_plus(self.mu, self.beta, self.omega);
        let need = self.gamma * self.beta * (lp - 2.0 + self.mu / (2.0 * self.beta)).max(self.beta / self.mu);
        if self.alpha < need {
            return Err(Error::Hypothesis(format!(
                "alpha = {} < gamma*beta*max(lambda_plus - 2 + mu/(2 beta), beta/mu) = {need}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Upper bound on the expected dispersion at `t` inside the interval that
/// started at `t_km1`, given the loss gap of the network average there.
pub fn prop1_bound(c: &DispersionConstants, t: usize, t_km1: usize, gap_km1: f64) -> Result<f64> {
    c.check_hypothesis()?;
    if t < t_km1 {
        return Err(Error::invalid("t", format!("{t} precedes interval start {t_km1}")));
    }
    let lp = lambda_plus(c.mu, c.beta, c.omega);
    let s = sigma_plus(t, t_km1, &c.schedule(), c.beta, lp);
    let s2 = s * s;
    Ok(16.0 * c.omega * c.omega / c.mu * s2 * gap_km1
        + 25.0 * s2 * ((c.sigma2 + c.delta * c.delta) / (c.beta * c.beta) + c.eps0 * c.eps0))
}

/// Right-hand side of the one-step loss bound.
#[allow(clippy::too_many_arguments)]
pub fn thm1_rhs(
    prev_gap: f64,
    eta: f64,
    beta: f64,
    dispersion: f64,
    eps_t: f64,
    eps_tp1: f64,
    sigma2: f64,
    mu: f64,
) -> Result<f64> {
    if eta > 1.0 / beta {
        return Err(Error::Hypothesis(format!("eta = {eta} exceeds 1/beta = {}", 1.0 / beta)));
    }
    Ok((1.0 - mu * eta) * prev_gap
        + 0.5 * eta * beta * beta * dispersion
        + 0.5 * (eta * beta * beta * eps_t * eps_t + eta * eta * beta * sigma2 + beta * eps_tp1 * eps_tp1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Inputs {
    pub gamma: f64,
    pub alpha: f64,
    pub mu: f64,
    pub beta: f64,
    /// Longest interval length.
    pub tau: usize,
    pub sigma2: f64,
    pub phi: f64,
    pub delta: f64,
    pub omega: f64,
    /// `F(w_hat^0) - F(w*)` or a surrogate of it.
    pub init_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thm2Constants {
    pub alpha_min: f64,
    /// Infinite for `tau = 1`; stored as `null` in JSON.
    #[serde(with = "unbounded")]
    pub omega_max: f64,
    pub z1: f64,
    pub z2: f64,
    pub nu: f64,
}

mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// `gamma beta max{mu/(4 beta) - 1 + sqrt((1 + mu/(4 beta))^2 + 2 omega), beta/mu}`.
pub fn alpha_min(mu: f64, beta: f64, gamma: f64, omega: f64) -> f64 {
    let x = mu / (4.0 * beta);
    gamma * beta * (x - 1.0 + ((1.0 + x) * (1.0 + x) + 2.0 * omega).sqrt()).max(beta / mu)
}

/// `(1 + (tau - 1)/(alpha - 1))^(6 beta gamma)`, shared by `Z1` and `Z2`.
fn growth(beta: f64, gamma: f64, tau: usize, alpha: f64) -> f64 {
    (1.0 + (tau as f64 - 1.0) / (alpha - 1.0)).powf(6.0 * beta * gamma)
}

pub fn z1(mu: f64, beta: f64, gamma: f64, tau: usize, alpha: f64) -> f64 {
    let tau_f = tau as f64;
    32.0 * beta * beta * gamma / mu
        * (tau_f - 1.0)
        * (1.0 + tau_f / (alpha - 1.0)).powi(2)
        * growth(beta, gamma, tau, alpha)
}

/// Multiplier of `(sigma^2 + phi^2 + delta^2)` in `Z2`.
pub(crate) fn z2_slope(beta: f64, gamma: f64, tau: usize, alpha: f64) -> f64 {
    let tau_f = tau as f64;
    50.0 * gamma * (tau_f - 1.0) * (1.0 + (tau_f - 2.0) / (alpha + 1.0)) * growth(beta, gamma, tau, alpha)
}

#[allow(clippy::too_many_arguments)]
pub fn z2(beta: f64, gamma: f64, tau: usize, alpha: f64, sigma2: f64, phi: f64, delta: f64) -> f64 {
    (sigma2 + 2.0 * phi * phi) / (2.0 * beta)
        + z2_slope(beta, gamma, tau, alpha) * (sigma2 + phi * phi + delta * delta)
}

/// `alpha (mu gamma - 1 + 1/(1 + alpha)) / (beta gamma)^2`, i.e.
/// `Z1 omega_max^2`; finite even when `Z1 = 0`.
pub(crate) fn z1_omega_max_sq(mu: f64, beta: f64, gamma: f64, alpha: f64) -> f64 {
    alpha * (mu * gamma - 1.0 + 1.0 / (1.0 + alpha)) / (beta * gamma * beta * gamma)
}

/// Largest tolerable `omega` for a given `alpha`; infinite when `tau = 1`.
pub fn omega_max(mu: f64, beta: f64, gamma: f64, tau: usize, alpha: f64) -> f64 {
    let z = z1(mu, beta, gamma, tau, alpha);
    if z == 0.0 {
        return f64::INFINITY;
    }
    (z1_omega_max_sq(mu, beta, gamma, alpha) / z).sqrt()
}

fn check_rate_inputs(i: &Thm2Inputs) -> Result<()> {
    if !(i.mu > 0.0 && i.beta >= i.mu) {
        return Err(Error::invalid("mu", format!("need 0 < mu <= beta, got mu={}, beta={}", i.mu, i.beta)));
    }
    if i.mu * i.gamma <= 1.0 {
        return Err(Error::RateCertificateInapplicable(format!(
            "mu*gamma = {} must exceed 1",
            i.mu * i.gamma
        )));
    }
    if !(i.alpha > 1.0) {
        return Err(Error::RateCertificateInapplicable(format!("alpha = {} must exceed 1", i.alpha)));
    }
    if i.tau == 0 {
        return Err(Error::invalid("tau", "must be >= 1"));
    }
    Ok(())
}

/// Second argument of `nu`: `alpha Z2 / (Z1 (omega_max^2 - omega^2))`, in
/// the form that stays finite at `Z1 = 0`.
pub(crate) fn nu_diversity_term(i: &Thm2Inputs, z1v: f64, z2v: f64) -> f64 {
    let denom = z1_omega_max_sq(i.mu, i.beta, i.gamma, i.alpha) - z1v * i.omega * i.omega;
    i.alpha * z2v / denom
}

pub fn thm2_constants(i: &Thm2Inputs) -> Result<Thm2Constants> {
    check_rate_inputs(i)?;
    let amin = alpha_min(i.mu, i.beta, i.gamma, i.omega);
    let z1v = z1(i.mu, i.beta, i.gamma, i.tau, i.alpha);
    let z2v = z2(i.beta, i.gamma, i.tau, i.alpha, i.sigma2, i.phi, i.delta);
    let om = omega_max(i.mu, i.beta, i.gamma, i.tau, i.alpha);
    if i.omega >= om {
        return Err(Error::RateCertificateInapplicable(format!(
            "omega = {} is not below omega_max = {om}",
            i.omega
        )));
    }
    let nu = (i.beta * i.beta * i.gamma * i.gamma * z2v / (i.mu * i.gamma - 1.0))
        .max(nu_diversity_term(i, z1v, z2v))
        .max(i.alpha * i.init_gap);
    Ok(Thm2Constants {
        alpha_min: amin,
        omega_max: om,
        z1: z1v,
        z2: z2v,
        nu,
    })
}

/// One certified point of a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifiedPoint {
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub inputs: Thm2Inputs,
    pub constants: Thm2Constants,
    pub points: Vec<CertifiedPoint>,
    pub violations: usize,
}

impl CertificateReport {
    /// Checks `measured[t-1] <= nu / (t + alpha)` for `t = 1..`.
    pub fn rate_envelope(inputs: Thm2Inputs, measured: &[f64]) -> Result<Self> {
        let constants = thm2_constants(&inputs)?;
        let points: Vec<CertifiedPoint> = measured
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let t = k + 1;
                CertifiedPoint {
                    t,
                    measured: m,
                    bound: constants.nu / (t as f64 + inputs.alpha),
                }
            })
            .collect();
        let violations = points.iter().filter(|p| p.measured > p.bound).count();
        Ok(Self {
            inputs,
            constants,
            points,
            violations,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn diversity_fit_cases() {
        let g = vec![array![1.0, 2.0], array![1.0, 2.0]];
        assert_eq!(diversity_fit(&g, &[0.5, 0.5], 3.0, 0.0), 0.0);
        let g = vec![array![0.0, 0.0], array![2.0, 0.0]];
        assert!((diversity_fit(&g, &[0.5, 0.5], 1.0, 0.25) - 0.75).abs() < 1e-15);
        assert_eq!(diversity_fit(&g, &[0.5, 0.5], 1.0, 10.0), 0.0);
    }

    #[test]
    fn lambda_plus_values() {
        for (mu, beta) in [(0.1, 1.0), (1.0, 1.0), (0.3, 7.0)] {
            assert_eq!(lambda_plus(mu, beta, 0.0), 2.0);
        }
        assert!((lambda_plus(1e-12, 1.0, 1.0) - (1.0 + 3f64.sqrt())).abs() < 1e-9);
    }

    fn naive_sigma(t: usize, t0: usize, sched: &StepSchedule, beta: f64, lp: f64) -> f64 {
        let mut total = 0.0;
        for l in t0..t {
            let mut left = 1.0;
            for j in t0..l {
                left *= 1.0 + sched.eta(j) * beta * lp;
            }
            let mut right = 1.0;
            for j in (l + 1)..t {
                right *= 1.0 + sched.eta(j) * beta;
            }
            total += left * beta * sched.eta(l) * right;
        }
        total
    }

    #[test]
    fn sigma_plus_matches_naive_sum() {
        let sched = StepSchedule::Diminishing { gamma: 2.0, alpha: 9.0 };
        assert_eq!(sigma_plus(7, 7, &sched, 2.0, 2.3), 0.0);
        assert!((sigma_plus(8, 7, &sched, 2.0, 2.3) - 2.0 * sched.eta(7)).abs() < 1e-15);
        for t0 in [0, 3, 40] {
            let want = naive_sigma(t0 + 5, t0, &sched, 2.0, 2.3);
            let got = sigma_plus(t0 + 5, t0, &sched, 2.0, 2.3);
            assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn dispersion_arithmetic() {
        assert_eq!(dispersion_sample(&[array![1.0], array![1.0]], &[0.5, 0.5]), 0.0);
        assert_eq!(dispersion_sample(&[array![0.0], array![2.0]], &[0.5, 0.5]), 1.0);
        assert_eq!(dispersion_mc(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![2.0, 3.0]);
        assert!(dispersion_mc(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn constants() -> DispersionConstants {
        DispersionConstants {
            mu: 1.0,
            beta: 2.0,
            omega: 0.0,
            sigma2: 0.0,
            delta: 0.0,
            eps0: 0.0,
            gamma: 2.0,
            alpha: 8.0,
        }
    }

    #[test]
    fn prop1_bound_degenerate_cases() {
        let c = DispersionConstants {
            sigma2: 1.0,
            ..constants()
        };
        assert_eq!(prop1_bound(&c, 5, 5, 3.0).unwrap(), 0.0);
        for t in 0..30 {
            assert_eq!(prop1_bound(&constants(), t, 0, 3.0).unwrap(), 0.0);
        }
        let bad = DispersionConstants { alpha: 1.0, ..c };
        assert!(matches!(prop1_bound(&bad, 3, 0, 1.0), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn thm1_rhs_cases() {
        assert!((thm1_rhs(2.0, 0.1, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0).unwrap() - 1.8).abs() < 1e-15);
        let got = thm1_rhs(0.0, 0.1, 2.0, 0.0, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((got - 0.01).abs() < 1e-15);
        assert!(thm1_rhs(0.0, 0.6, 2.0, 0.0, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    fn inputs() -> Thm2Inputs {
        Thm2Inputs {
            gamma: 2.0,
            alpha: 10.0,
            mu: 1.0,
            beta: 2.0,
            tau: 1,
            sigma2: 1.0,
            phi: 0.0,
            delta: 0.0,
            omega: 0.0,
            init_gap: 0.0,
        }
    }

    #[test]
    fn thm2_tau_one() {
        let c = thm2_constants(&inputs()).unwrap();
        assert_eq!(c.z1, 0.0);
        assert!((c.z2 - 0.25).abs() < 1e-15);
        assert!(c.omega_max.is_infinite());
        assert!(c.nu >= inputs().alpha * inputs().init_gap);
    }

    #[test]
    fn thm2_rejects_small_gamma() {
        let i = Thm2Inputs { gamma: 0.5, ..inputs() };
        assert!(matches!(thm2_constants(&i), Err(Error::RateCertificateInapplicable(_))));
    }

    #[test]
    fn certificate_report_counts_violations() {
        let i = Thm2Inputs { init_gap: 1.0, ..inputs() };
        let rep = CertificateReport::rate_envelope(i, &[0.0, 100.0]).unwrap();
        assert_eq!(rep.violations, 1);
        let back: CertificateReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    proptest! {
        #[test]
        fn lambda_plus_range(ratio in 1e-6f64..=1.0, omega in 0.0f64..=1.0) {
            let lp = lambda_plus(ratio, 1.0, omega);
            prop_assert!(lp >= 2.0 - 1e-15 && lp <= 1.0 + 3f64.sqrt() + 1e-15);
        }

        #[test]
        fn omega_max_grows_with_alpha(tau in 2usize..30, a in 2.0f64..500.0) {
            let lo = omega_max(1.0, 2.0, 2.0, tau, a);
            let hi = omega_max(1.0, 2.0, 2.0, tau, a * 1.5);
            prop_assert!(hi > lo);
        }
    }
}
