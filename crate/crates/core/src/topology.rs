//! Device placement, the D2D channel model, graph construction and
//! consensus matrices.
//!
//! Links are decided on the expected SNR: an edge exists when the outage
//! probability at the configured rate stays below the threshold. Per-round
//! fading draws are the business of [`crate::consensus`].

use std::collections::VecDeque;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::symmetric_spectral_radius;
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Noise power spectral density, dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    /// Pathloss at the reference distance, dB.
    pub pathloss_ref_db: f64,
    pub pathloss_exp: f64,
    pub ref_dist_m: f64,
    pub rate_bps: f64,
    pub outage_threshold: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            noise_psd_dbm_hz: -173.0,
            bandwidth_hz: 1e6,
            tx_power_dbm: 24.0,
            pathloss_ref_db: -30.0,
            pathloss_exp: 3.75,
            ref_dist_m: 1.0,
            rate_bps: 14e6,
            outage_threshold: 0.05,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::invalid("bandwidth_hz", "must be > 0"));
        }
        if !(self.outage_threshold >= 0.0 && self.outage_threshold < 1.0) {
            return Err(Error::invalid("outage_threshold", "must lie in [0, 1)"));
        }
        if !(self.ref_dist_m > 0.0) {
            return Err(Error::invalid("ref_dist_m", "must be > 0"));
        }
        if !(self.rate_bps >= 0.0) {
            return Err(Error::invalid("rate_bps", "must be >= 0"));
        }
        if !(self.pathloss_exp >= 0.0) {
            return Err(Error::invalid("pathloss_exp", "must be >= 0"));
        }
        Ok(())
    }

    /// `2^(R/W) - 1`: the SNR a link must exceed to carry the rate.
    pub fn snr_threshold(&self) -> f64 {
        (self.rate_bps / self.bandwidth_hz).exp2() - 1.0
    }
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Expected (fading-averaged) linear SNR at `distance_m`.
pub fn expected_snr(params: &ChannelParams, distance_m: f64) -> f64 {
    let d = if distance_m < params.ref_dist_m {
        log::warn!(
            "distance {distance_m} m below reference {} m; clamped",
            params.ref_dist_m
        );
        params.ref_dist_m
    } else {
        distance_m
    };
    let gain_db = params.pathloss_ref_db - 10.0 * params.pathloss_exp * (d / params.ref_dist_m).log10();
    let noise_dbm = params.noise_psd_dbm_hz + 10.0 * params.bandwidth_hz.log10();
    db_to_linear(params.tx_power_dbm + gain_db - noise_dbm)
}

/// Rayleigh-fading outage probability at the configured rate.
pub fn outage_prob(params: &ChannelParams, snr_linear: f64) -> f64 {
    if params.rate_bps == 0.0 {
        return 0.0;
    }
    if snr_linear.is_infinite() {
        return 0.0;
    }
    -(-params.snr_threshold() / snr_linear).exp_m1()
}

pub type Position = [f64; 2];

fn distance(a: &Position, b: &Position) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn place_cluster(s_c: usize, field_m: f64, seed: u64, cluster: usize, attempt: usize) -> Vec<Position> {
    let mut r = rng::stream(seed, &[tag::PLACEMENT, cluster as u64, attempt as u64]);
    (0..s_c)
        .map(|_| [r.random_range(0.0..=field_m), r.random_range(0.0..=field_m)])
        .collect()
}

/// Uniform positions in a `field_m` square, one independent field per
/// cluster.
pub fn place_devices(n_clusters: usize, s_c: usize, field_m: f64, seed: u64) -> Result<Vec<Vec<Position>>> {
    if !(field_m > 0.0 && field_m.is_finite()) {
        return Err(Error::invalid("field_m", "must be finite and > 0"));
    }
    Ok((0..n_clusters).map(|c| place_cluster(s_c, field_m, seed, c, 0)).collect())
}

/// Undirected graph as neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); n],
        }
    }

    pub fn complete(n: usize) -> Self {
        Self {
            neighbors: (0..n).map(|i| (0..n).filter(|&j| j != i).collect()).collect(),
        }
    }

    pub fn path(n: usize) -> Self {
        let mut a = Self::empty(n);
        for i in 1..n {
            a.add_edge(i - 1, i);
        }
        a
    }

    pub fn from_matrix(m: &[Vec<bool>]) -> Result<Self> {
        let n = m.len();
        let mut a = Self::empty(n);
        for (i, row) in m.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            if row[i] {
                return Err(Error::invalid("adjacency", format!("self-loop at {i}")));
            }
            for (j, &e) in row.iter().enumerate() {
                if e != m[j][i] {
                    return Err(Error::invalid("adjacency", format!("asymmetric entry ({i}, {j})")));
                }
                if e && j > i {
                    a.add_edge(i, j);
                }
            }
        }
        Ok(a)
    }

    pub fn to_matrix(&self) -> Vec<Vec<bool>> {
        let n = self.len();
        let mut m = vec![vec![false; n]; n];
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb {
                m[i][j] = true;
            }
        }
        m
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        if i != j && !self.neighbors[i].contains(&j) {
            self.neighbors[i].push(j);
            self.neighbors[j].push(i);
            self.neighbors[i].sort_unstable();
            self.neighbors[j].sort_unstable();
        }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn mean_degree(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.neighbors.iter().map(Vec::len).sum::<usize>() as f64 / self.len() as f64
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            out.extend(nb.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    fn bfs(&self, src: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[src] = Some(0);
        let mut q = VecDeque::from([src]);
        while let Some(u) = q.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.neighbors[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    q.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.bfs(0).iter().all(Option::is_some)
    }

    /// Longest shortest path; `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let mut best = 0;
        for s in 0..self.len() {
            for d in self.bfs(s) {
                best = best.max(d?);
            }
        }
        Some(best)
    }
}

/// Edge iff the expected-SNR outage probability is within the threshold.
pub fn build_graph(positions: &[Position], params: &ChannelParams) -> Adjacency {
    let n = positions.len();
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = distance(&positions[i], &positions[j]).max(params.ref_dist_m);
            let p = outage_prob(params, expected_snr(params, d));
            if p <= params.outage_threshold {
                a.add_edge(i, j);
            }
        }
    }
    a
}

/// `V = I - d_c L`.
pub fn consensus_matrix(adj: &Adjacency, d_c: f64) -> Result<Array2<f64>> {
    let max_deg = adj.max_degree();
    let upper = if max_deg == 0 { f64::INFINITY } else { 1.0 / max_deg as f64 };
    if !(d_c > 0.0 && d_c < upper) {
        return Err(Error::invalid(
            "d_c",
            format!("{d_c} outside the valid interval (0, {upper}) for max degree {max_deg}"),
        ));
    }
    let n = adj.len();
    let mut v = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for &j in adj.neighbors(i) {
            v[[i, j]] = d_c;
        }
        v[[i, i]] = 1.0 - d_c * adj.degree(i) as f64;
    }
    Ok(v)
}

/// `1/8`, or `0.9 / D_c` when `1/8` would not be below `1 / D_c`.
pub fn default_dc(max_degree: usize) -> f64 {
    if max_degree < 8 {
        0.125
    } else {
        0.9 / max_degree as f64
    }
}

/// `rho(V - 11^T / s)`; errors when the result is not below one.
pub fn spectral_radius(v: &Array2<f64>) -> Result<f64> {
    let s = v.nrows();
    if s <= 1 {
        return Ok(0.0);
    }
    let deflated = v - 1.0 / s as f64;
    let lambda = symmetric_spectral_radius(&deflated);
    if lambda >= 1.0 - 1e-12 {
        return Err(Error::SpectralRadius(lambda));
    }
    Ok(lambda)
}

/// One cluster's D2D layout and mixing matrix.
#[derive(Debug, Clone)]
pub struct ClusterSpec {
    pub positions: Vec<Position>,
    pub adjacency: Adjacency,
    pub v: Array2<f64>,
    pub lambda: f64,
    pub d_c: f64,
    pub diameter: usize,
    /// `s_c / I`.
    pub varrho: f64,
}

impl ClusterSpec {
    pub fn new(positions: Vec<Position>, adjacency: Adjacency, d_c: Option<f64>, varrho: f64) -> Result<Self> {
        if adjacency.is_empty() {
            return Err(Error::EmptyCluster(0));
        }
        if positions.len() != adjacency.len() {
            return Err(Error::DimensionMismatch {
                expected: adjacency.len(),
                found: positions.len(),
            });
        }
        let diameter = adjacency.diameter().ok_or(Error::Disconnected)?;
        let d_c = d_c.unwrap_or_else(|| default_dc(adjacency.max_degree()));
        let v = consensus_matrix(&adjacency, d_c)?;
        let lambda = spectral_radius(&v)?;
        Ok(Self {
            positions,
            adjacency,
            v,
            lambda,
            d_c,
            diameter,
            varrho,
        })
    }

    pub fn size(&self) -> usize {
        self.adjacency.len()
    }

    /// `1 / s_c`.
    pub fn rho(&self) -> f64 {
        1.0 / self.size() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub n_clusters: usize,
    pub cluster_size: usize,
    pub field_m: f64,
    /// `None` selects [`default_dc`] per cluster.
    pub d_c: Option<f64>,
    pub max_attempts: usize,
    pub channel: ChannelParams,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            n_clusters: 25,
            cluster_size: 5,
            field_m: 50.0,
            d_c: None,
            max_attempts: 100,
            channel: ChannelParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    pub clusters: Vec<ClusterSpec>,
}

impl Topology {
    pub fn n_devices(&self) -> usize {
        self.clusters.iter().map(ClusterSpec::size).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(ClusterSpec::size).collect()
    }

    /// Fully connected clusters of the given sizes with the default `d_c`.
    pub fn complete(sizes: &[usize]) -> Result<Self> {
        let total: usize = sizes.iter().sum();
        let clusters = sizes
            .iter()
            .map(|&s| {
                ClusterSpec::new(vec![[0.0, 0.0]; s], Adjacency::complete(s), None, s as f64 / total as f64)
            })
            .collect::<Result<_>>()?;
        Ok(Self { clusters })
    }

    /// Clusters from explicit graphs.
    pub fn from_graphs(graphs: Vec<Adjacency>, d_c: Option<f64>) -> Result<Self> {
        let total: usize = graphs.iter().map(Adjacency::len).sum();
        let clusters = graphs
            .into_iter()
            .map(|g| {
                let s = g.len();
                ClusterSpec::new(vec![[0.0, 0.0]; s], g, d_c, s as f64 / total as f64)
            })
            .collect::<Result<_>>()?;
        Ok(Self { clusters })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TopologyFile {
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterFile {
                    positions: c.positions.clone(),
                    adjacency: c.adjacency.to_matrix(),
                    v: c.v.outer_iter().map(|r| r.to_vec()).collect(),
                    lambda: c.lambda,
                    d_c: c.d_c,
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Rebuilds from exported JSON; `V` and `lambda` are recomputed and
    /// checked against the stored values.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(text)?;
        let total: usize = file.clusters.iter().map(|c| c.positions.len()).sum();
        let clusters = file
            .clusters
            .into_iter()
            .enumerate()
            .map(|(k, c)| {
                let s = c.positions.len();
                let adj = Adjacency::from_matrix(&c.adjacency)?;
                let spec = ClusterSpec::new(c.positions, adj, Some(c.d_c), s as f64 / total as f64)?;
                let same_shape = c.v.len() == s && c.v.iter().all(|r| r.len() == s);
                let v_matches = same_shape
                    && spec
                        .v
                        .iter()
                        .zip(c.v.iter().flatten())
                        .all(|(a, b)| (a - b).abs() <= 1e-12);
                if !v_matches || (spec.lambda - c.lambda).abs() > 1e-9 {
                    return Err(Error::invalid("topology", format!("cluster {k}: stored V or lambda disagrees")));
                }
                Ok(spec)
            })
            .collect::<Result<_>>()?;
        Ok(Self { clusters })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    clusters: Vec<ClusterFile>,
}

#[derive(Serialize, Deserialize)]
struct ClusterFile {
    positions: Vec<Position>,
    adjacency: Vec<Vec<bool>>,
    v: Vec<Vec<f64>>,
    lambda: f64,
    d_c: f64,
}

/// Places every cluster, re-seeding a cluster until its D2D graph is
/// connected.
pub fn build_topology(cfg: &TopologyConfig, seed: u64) -> Result<Topology> {
    cfg.channel.validate()?;
    if cfg.n_clusters == 0 || cfg.cluster_size == 0 {
        return Err(Error::invalid("topology", "need at least one cluster of one device"));
    }
    if !(cfg.field_m > 0.0) {
        return Err(Error::invalid("field_m", "must be > 0"));
    }
    let total = (cfg.n_clusters * cfg.cluster_size) as f64;
    let varrho = cfg.cluster_size as f64 / total;
    let mut clusters = Vec::with_capacity(cfg.n_clusters);
    'clusters: for c in 0..cfg.n_clusters {
        for attempt in 0..cfg.max_attempts.max(1) {
            let pos = place_cluster(cfg.cluster_size, cfg.field_m, seed, c, attempt);
            let adj = build_graph(&pos, &cfg.channel);
            if adj.is_connected() {
                clusters.push(ClusterSpec::new(pos, adj, cfg.d_c, varrho)?);
                continue 'clusters;
            }
        }
        return Err(Error::PlacementFailed {
            cluster: c,
            attempts: cfg.max_attempts,
        });
    }
    Ok(Topology { clusters })
}

/// Verifies row-stochasticity, symmetry, the sparsity pattern and
/// `lambda < 1`.
pub fn check_assumption2(spec: &ClusterSpec) -> Result<()> {
    let n = spec.size();
    for i in 0..n {
        let row_sum: f64 = spec.v.row(i).sum();
        if (row_sum - 1.0).abs() > 1e-12 {
            return Err(Error::Invariant(format!("row {i} of V sums to {row_sum}")));
        }
        for j in 0..n {
            if spec.v[[i, j]] != spec.v[[j, i]] {
                return Err(Error::Invariant(format!("V not symmetric at ({i}, {j})")));
            }
            if i != j && !spec.adjacency.has_edge(i, j) && spec.v[[i, j]] != 0.0 {
                return Err(Error::Invariant(format!("V has weight on non-edge ({i}, {j})")));
            }
        }
    }
    if spec.lambda >= 1.0 {
        return Err(Error::SpectralRadius(spec.lambda));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn snr_at_one_metre_is_107_db() {
        let p = ChannelParams::default();
        let db = 10.0 * expected_snr(&p, 1.0).log10();
        assert!((db - 107.0).abs() < 1e-9, "{db}");
        let drop = db - 10.0 * expected_snr(&p, 2.0).log10();
        assert!((drop - 37.5 * 2f64.log10()).abs() < 1e-9);
        let flat = ChannelParams {
            pathloss_exp: 0.0,
            ..p
        };
        assert_eq!(expected_snr(&flat, 3.0), expected_snr(&flat, 30.0));
        // below the reference distance the value is clamped
        assert_eq!(expected_snr(&p, 0.25), expected_snr(&p, 1.0));
    }

    #[test]
    fn outage_limits_and_monotonicity() {
        let p = ChannelParams::default();
        assert_eq!(outage_prob(&p, f64::INFINITY), 0.0);
        assert!(outage_prob(&p, 1e300) < 1e-290);
        let zero = ChannelParams { rate_bps: 0.0, ..p };
        assert_eq!(outage_prob(&zero, 1.0), 0.0);
        let rates: Vec<f64> = (1..=20).map(|k| k as f64 * 1e5).collect();
        let snrs: Vec<f64> = (1..=20).map(|k| 10f64.powf(k as f64 / 2.0)).collect();
        for (a, &r) in rates.iter().enumerate() {
            for (b, &s) in snrs.iter().enumerate() {
                let q = ChannelParams { rate_bps: r, ..p };
                let direct = 1.0 - (-(2f64.powf(r / p.bandwidth_hz) - 1.0) / s).exp();
                let got = outage_prob(&q, s);
                assert!((got - direct).abs() <= 1e-12 * direct.max(1e-300) + 1e-15);
                if a > 0 {
                    let prev = ChannelParams { rate_bps: rates[a - 1], ..p };
                    assert!(got > outage_prob(&prev, s));
                }
                if b > 0 {
                    assert!(got < outage_prob(&q, snrs[b - 1]));
                }
            }
        }
    }

    #[test]
    fn placement_defaults() {
        let pos = place_devices(25, 5, 50.0, 3).unwrap();
        assert_eq!(pos.iter().map(Vec::len).sum::<usize>(), 125);
        assert!(pos.iter().flatten().all(|p| (0.0..=50.0).contains(&p[0]) && (0.0..=50.0).contains(&p[1])));
        assert_eq!(pos, place_devices(25, 5, 50.0, 3).unwrap());
        assert!(place_devices(1, 1, 0.0, 3).is_err());
    }

    #[test]
    fn graph_extremes() {
        let p = ChannelParams::default();
        let g = build_graph(&[[1.0, 1.0]; 4], &p);
        assert_eq!(g, Adjacency::complete(4));
        let strict = ChannelParams {
            outage_threshold: 0.0,
            ..p
        };
        assert_eq!(build_graph(&[[1.0, 1.0], [1.0, 2.0]], &strict).edges().len(), 0);
    }

    #[test]
    fn default_layouts_have_sparse_graphs() {
        let p = ChannelParams::default();
        let degrees: Vec<f64> = (0..100)
            .map(|s| build_graph(&place_devices(1, 5, 50.0, s).unwrap()[0], &p).mean_degree())
            .collect();
        let mean = degrees.iter().sum::<f64>() / degrees.len() as f64;
        assert!((1.0..=3.0).contains(&mean), "{mean}");
    }

    #[test]
    fn path_matrix_and_radius() {
        let v = consensus_matrix(&Adjacency::path(3), 1.0 / 3.0).unwrap();
        let third = 1.0 / 3.0;
        let want = array![[2.0 * third, third, 0.0], [third, third, third], [0.0, third, 2.0 * third]];
        assert!((&v - &want).iter().all(|d| d.abs() < 1e-15));
        assert!((spectral_radius(&v).unwrap() - 2.0 / 3.0).abs() < 1e-10);
        assert!(consensus_matrix(&Adjacency::path(3), 0.5).is_err());
        assert!(consensus_matrix(&Adjacency::path(3), 0.0).is_err());
    }

    #[test]
    fn complete_graph_radius_closed_form() {
        let eps = 1e-3;
        let v = consensus_matrix(&Adjacency::complete(4), 0.25 - eps).unwrap();
        assert!((spectral_radius(&v).unwrap() - 4.0 * eps).abs() < 1e-10);
        let single = consensus_matrix(&Adjacency::empty(1), 0.125).unwrap();
        assert_eq!(spectral_radius(&single).unwrap(), 0.0);
    }

    #[test]
    fn disconnected_is_rejected() {
        let v = consensus_matrix(&Adjacency::empty(3), 0.125).unwrap();
        assert!(matches!(spectral_radius(&v), Err(Error::SpectralRadius(_))));
        assert!(matches!(
            ClusterSpec::new(vec![[0.0; 2]; 3], Adjacency::empty(3), None, 1.0),
            Err(Error::Disconnected)
        ));
    }

    #[test]
    fn default_dc_falls_back_for_dense_graphs() {
        assert_eq!(default_dc(3), 0.125);
        assert!((default_dc(10) - 0.09).abs() < 1e-15);
    }

    #[test]
    fn built_topology_is_valid_and_round_trips() {
        let topo = build_topology(&TopologyConfig::default(), 11).unwrap();
        assert_eq!(topo.n_devices(), 125);
        for c in &topo.clusters {
            check_assumption2(c).unwrap();
            assert!((c.varrho - 0.04).abs() < 1e-15);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("topo.json");
        topo.save(&path).unwrap();
        let back = Topology::load(&path).unwrap();
        for (a, b) in topo.clusters.iter().zip(&back.clusters) {
            assert_eq!(a.adjacency, b.adjacency);
            assert_eq!(a.v, b.v);
            assert_eq!(a.positions, b.positions);
        }
    }

    #[test]
    fn denser_graphs_mix_faster_on_average() {
        let mean_lambda = |p_edge: f64| {
            let mut total = 0.0;
            let mut count = 0;
            for seed in 0..200u64 {
                let mut r = rng::stream(seed, &[tag::TOPOLOGY]);
                let mut g = Adjacency::empty(8);
                for i in 0..8 {
                    for j in (i + 1)..8 {
                        if r.random::<f64>() < p_edge {
                            g.add_edge(i, j);
                        }
                    }
                }
                if g.is_connected() {
                    total += spectral_radius(&consensus_matrix(&g, 0.1).unwrap()).unwrap();
                    count += 1;
                }
            }
            total / count as f64
        };
        assert!(mean_lambda(0.8) < mean_lambda(0.4));
    }

    fn random_connected(n: usize, seed: u64) -> Adjacency {
        let mut r = rng::stream(seed, &[tag::TOPOLOGY]);
        let mut g = Adjacency::empty(n);
        for i in 1..n {
            g.add_edge(i, r.random_range(0..i));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if r.random::<f64>() < 0.3 {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    proptest! {
        #[test]
        fn generated_matrices_satisfy_assumptions(n in 1usize..9, seed in any::<u64>()) {
            let g = random_connected(n, seed);
            let spec = ClusterSpec::new(vec![[0.0; 2]; n], g, None, 1.0).unwrap();
            check_assumption2(&spec).unwrap();
            let ones = spec.v.sum_axis(ndarray::Axis(1));
            prop_assert!(ones.iter().all(|v| (v - 1.0).abs() < 1e-12));
        }

        #[test]
        fn consensus_contracts_by_lambda(n in 2usize..9, seed in any::<u64>(), z in proptest::collection::vec(-10.0f64..10.0, 8)) {
            let g = random_connected(n, seed);
            let spec = ClusterSpec::new(vec![[0.0; 2]; n], g, None, 1.0).unwrap();
            let z = ndarray::Array1::from(z[..n].to_vec());
            let mean = z.mean().unwrap();
            let centred = &z - mean;
            let mixed = spec.v.dot(&z) - mean;
            let lhs = mixed.dot(&mixed).sqrt();
            let rhs = spec.lambda * centred.dot(&centred).sqrt() + 1e-9;
            prop_assert!(lhs <= rhs, "{lhs} > {rhs}");
        }
    }
}
