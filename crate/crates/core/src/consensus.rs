//! D2D consensus rounds, consensus error and intra-cluster divergence.
//!
//! Models of a cluster are stacked as rows of an `s_c x M` matrix. Without
//! outages `Gamma` rounds compute `V^Gamma W`. With outages every round
//! draws one Rayleigh power gain per undirected link; a lost link has its
//! weight moved onto both endpoints' diagonal entries, so the round matrix
//! stays symmetric and doubly stochastic.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::Exp1;

use crate::topology::{expected_snr, Adjacency, ChannelParams, ClusterSpec};
use crate::{Error, Result};

/// Intermediate (`tilde`) and post-consensus (`post`) models of a cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModels {
    pub tilde: Array2<f64>,
    pub post: Array2<f64>,
}

/// Per-round packet loss on D2D links.
#[derive(Debug, Clone)]
pub struct OutagePolicy {
    pub enabled: bool,
    /// `2^(R/W) - 1`.
    pub snr_threshold: f64,
    /// Expected SNR of each device pair; only graph edges are read.
    pub link_snr: Array2<f64>,
}

impl OutagePolicy {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            snr_threshold: 0.0,
            link_snr: Array2::zeros((0, 0)),
        }
    }

    pub fn rayleigh(params: &ChannelParams, spec: &ClusterSpec) -> Self {
        let n = spec.size();
        let mut link_snr = Array2::<f64>::from_elem((n, n), f64::INFINITY);
        for (i, j) in spec.adjacency.edges() {
            let a = spec.positions[i];
            let b = spec.positions[j];
            let d = (a[0] - b[0]).hypot(a[1] - b[1]).max(params.ref_dist_m);
            let snr = expected_snr(params, d);
            link_snr[[i, j]] = snr;
            link_snr[[j, i]] = snr;
        }
        Self {
            enabled: true,
            snr_threshold: params.snr_threshold(),
            link_snr,
        }
    }
}

/// Round matrix after fading: lost links fold their weight into the
/// diagonal. Returns the number of lost links alongside.
pub fn lossy_round_matrix<R: Rng + ?Sized>(
    v: &Array2<f64>,
    outage: &OutagePolicy,
    rng: &mut R,
) -> (Array2<f64>, usize) {
    let mut m = v.clone();
    let n = v.nrows();
    let mut lost = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let w = v[[i, j]];
            if w == 0.0 {
                continue;
            }
            let gain: f64 = rng.sample(Exp1);
            if outage.link_snr[[i, j]] * gain < outage.snr_threshold {
                m[[i, j]] = 0.0;
                m[[j, i]] = 0.0;
                m[[i, i]] += w;
                m[[j, j]] += w;
                lost += 1;
            }
        }
    }
    (m, lost)
}

/// Runs `gamma` consensus rounds on `tilde`.
pub fn run_consensus<R: Rng + ?Sized>(
    tilde: &Array2<f64>,
    v: &Array2<f64>,
    gamma: usize,
    outage: &OutagePolicy,
    rng: &mut R,
) -> ClusterModels {
    let mut post = tilde.clone();
    for _ in 0..gamma {
        post = if outage.enabled {
            lossy_round_matrix(v, outage, rng).0.dot(&post)
        } else {
            v.dot(&post)
        };
    }
    ClusterModels {
        tilde: tilde.clone(),
        post,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusError {
    /// `||e_i||` per device.
    pub per_device: Vec<f64>,
    /// `sqrt(mean ||e_i||^2)`.
    pub rms: f64,
}

impl ConsensusError {
    pub fn max(&self) -> f64 {
        self.per_device.iter().copied().fold(0.0, f64::max)
    }
}

fn row_mean(m: ArrayView2<f64>) -> Array1<f64> {
    m.mean_axis(Axis(0)).expect("at least one row")
}

/// `e_i = w_i - mean(tilde)`.
pub fn consensus_error(cm: &ClusterModels) -> ConsensusError {
    let mean = row_mean(cm.tilde.view());
    let per_device: Vec<f64> = cm
        .post
        .outer_iter()
        .map(|w| {
            let e = &w - &mean;
            e.dot(&e).sqrt()
        })
        .collect();
    let rms = (per_device.iter().map(|e| e * e).sum::<f64>() / per_device.len() as f64).sqrt();
    ConsensusError { per_device, rms }
}

/// Largest pairwise distance between rows.
pub fn divergence_exact(tilde: &Array2<f64>) -> f64 {
    let n = tilde.nrows();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = &tilde.row(i) - &tilde.row(j);
            best = best.max(d.dot(&d));
        }
    }
    best.sqrt()
}

/// Max/min flooding of one scalar per node for `rounds` synchronous
/// rounds. Returns each node's `(max, min)`.
pub fn flood_extrema(values: &[f64], adj: &Adjacency, rounds: usize) -> Vec<(f64, f64)> {
    let mut state: Vec<(f64, f64)> = values.iter().map(|&v| (v, v)).collect();
    for _ in 0..rounds {
        let prev = state.clone();
        for (i, s) in state.iter_mut().enumerate() {
            for &j in adj.neighbors(i) {
                s.0 = s.0.max(prev[j].0);
                s.1 = s.1.min(prev[j].1);
            }
        }
    }
    state
}

/// `max_j ||w_j|| - min_j ||w_j||` as learned by flooding for
/// `diameter(G_c)` rounds.
pub fn divergence_estimate(tilde: &Array2<f64>, adj: &Adjacency) -> Result<f64> {
    let diameter = adj.diameter().ok_or(Error::Disconnected)?;
    let norms: Vec<f64> = tilde.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
    let state = flood_extrema(&norms, adj, diameter);
    let (hi, lo) = state.first().copied().unwrap_or((0.0, 0.0));
    Ok(hi - lo)
}

/// Consensus-error certificate `lambda^Gamma sqrt(s) Upsilon`.
pub fn lemma1_bound(lambda: f64, gamma: usize, s_c: usize, upsilon: f64) -> f64 {
    let power = if gamma == 0 { 1.0 } else { lambda.powi(gamma as i32) };
    power * (s_c as f64).sqrt() * upsilon
}
