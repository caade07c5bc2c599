//! Learning tasks: per-device, per-cluster and global losses with exact and
//! mini-batch gradients, plus the strong-convexity and smoothness constants
//! consumed by the convergence bounds.
//!
//! The global loss weights every device equally: clusters carry weight
//! `s_c / I` and devices `1 / s_c` within their cluster.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky_solve, symmetric_eigenvalues};
use crate::{Error, ModelVector, Result};

/// A single labelled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub x: Array1<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `1/2 (y - w.x)^2`
    LinearRegression,
    /// `1/2 max(0, 1 - y w.x)^2`
    SquaredHingeSvm,
}

/// A strongly convex task: pointwise loss plus `reg/2 ||w||^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub kind: LossKind,
    pub reg: f64,
    pub dim: usize,
}

/// The local dataset of one device, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePartition {
    pub device_id: usize,
    pub features: Array2<f64>,
    pub targets: Array1<f64>,
    /// Original class label of every row.
    pub labels: Vec<usize>,
}

impl DevicePartition {
    pub fn from_points(device_id: usize, points: &[DataPoint]) -> Result<Self> {
        let m = points.first().map(|p| p.x.len()).unwrap_or(0);
        let mut features = Array2::zeros((points.len(), m));
        for (mut row, p) in features.outer_iter_mut().zip(points) {
            if p.x.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: p.x.len(),
                });
            }
            row.assign(&p.x);
        }
        Ok(Self {
            device_id,
            features,
            targets: points.iter().map(|p| p.y).collect(),
            labels: vec![0; points.len()],
        })
    }

    /// `D_i`
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn point(&self, i: usize) -> DataPoint {
        DataPoint {
            x: self.features.row(i).to_owned(),
            y: self.targets[i],
        }
    }

    pub fn points(&self) -> impl Iterator<Item = DataPoint> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// Cluster weights `varrho_c = s_c / sum(s)`.
pub fn cluster_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

impl LossModel {
    pub fn new(kind: LossKind, reg: f64, dim: usize) -> Result<Self> {
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::invalid("reg", format!("must be finite and >= 0, got {reg}")));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "model dimension must be >= 1"));
        }
        Ok(Self { kind, reg, dim })
    }

    fn check(&self, w: &ModelVector, part: &DevicePartition) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: w.len(),
            });
        }
        if part.feature_dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: part.feature_dim(),
            });
        }
        if part.is_empty() {
            return Err(Error::invalid("part", format!("device {} holds no data", part.device_id)));
        }
        Ok(())
    }

    /// Pointwise loss without the regularizer.
    fn data_loss(&self, x: ArrayView1<f64>, y: f64, w: &ModelVector) -> f64 {
        let z = x.dot(w);
        match self.kind {
            LossKind::LinearRegression => 0.5 * (y - z) * (y - z),
            LossKind::SquaredHingeSvm => {
                let h = (1.0 - y * z).max(0.0);
                0.5 * h * h
            }
        }
    }

    /// d(data_loss)/dz, so the gradient is `residual * x`.
    fn residual(&self, x: ArrayView1<f64>, y: f64, w: &ModelVector) -> f64 {
        let z = x.dot(w);
        match self.kind {
            LossKind::LinearRegression => z - y,
            LossKind::SquaredHingeSvm => -y * (1.0 - y * z).max(0.0),
        }
    }

    /// `F_i(w)`, including `reg/2 ||w||^2`.
    pub fn local_loss(&self, w: &ModelVector, part: &DevicePartition) -> Result<f64> {
        self.check(w, part)?;
        let sum: f64 = part
            .features
            .outer_iter()
            .zip(part.targets.iter())
            .map(|(x, &y)| self.data_loss(x, y, w))
            .sum();
        Ok(sum / part.len() as f64 + 0.5 * self.reg * w.dot(w))
    }

    /// `F_c(w)`: unweighted mean of the cluster's device losses.
    pub fn cluster_loss(&self, w: &ModelVector, parts: &[DevicePartition]) -> Result<f64> {
        if parts.is_empty() {
            return Err(Error::EmptyCluster(0));
        }
        let mut sum = 0.0;
        for p in parts {
            sum += self.local_loss(w, p)?;
        }
        Ok(sum / parts.len() as f64)
    }

    /// `F(w) = sum_c varrho_c F_c(w)`.
    pub fn global_loss(&self, w: &ModelVector, clusters: &[Vec<DevicePartition>]) -> Result<f64> {
        let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(c));
        }
        let weights = cluster_weights(&sizes);
        let mut total = 0.0;
        for (parts, rho) in clusters.iter().zip(weights) {
            total += rho * self.cluster_loss(w, parts)?;
        }
        Ok(total)
    }

    /// Exact `grad F_i(w)`.
    pub fn grad_full(&self, w: &ModelVector, part: &DevicePartition) -> Result<ModelVector> {
        self.check(w, part)?;
        Ok(self.grad_rows(w, part, 0..part.len()))
    }

    fn grad_rows(
        &self,
        w: &ModelVector,
        part: &DevicePartition,
        rows: impl ExactSizeIterator<Item = usize>,
    ) -> ModelVector {
        let n = rows.len() as f64;
        let mut g = Array1::<f64>::zeros(self.dim);
        for i in rows {
            let x = part.features.row(i);
            let r = self.residual(x, part.targets[i], w);
            if r != 0.0 {
                g.scaled_add(r, &x);
            }
        }
        g /= n;
        g.scaled_add(self.reg, w);
        g
    }

    /// Gradient over a uniformly drawn mini-batch of exactly `batch_size`
    /// distinct points.
    pub fn grad_sgd<R: Rng + ?Sized>(
        &self,
        w: &ModelVector,
        part: &DevicePartition,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<ModelVector> {
        self.check(w, part)?;
        if batch_size == 0 || batch_size > part.len() {
            return Err(Error::invalid(
                "batch_size",
                format!("must lie in 1..={}, got {batch_size}", part.len()),
            ));
        }
        if batch_size == part.len() {
            return Ok(self.grad_rows(w, part, 0..part.len()));
        }
        let idx = index::sample(rng, part.len(), batch_size);
        Ok(self.grad_rows(w, part, idx.into_iter()))
    }

    /// `(mu, beta)` for the global loss and the device losses.
    ///
    /// `mu` is the strong-convexity modulus of the global loss only; `beta`
    /// bounds the curvature of every device loss. For the squared hinge the
    /// curvature of a point is either `x x^T` or zero, so `beta` uses the
    /// per-device second-moment matrix and `mu` falls back to `reg`.
    pub fn smoothness_constants(&self, parts: &[DevicePartition]) -> Result<(f64, f64)> {
        if parts.is_empty() {
            return Err(Error::EmptyCluster(0));
        }
        let mut mean_gram = Array2::<f64>::zeros((self.dim, self.dim));
        let mut beta_data = 0.0f64;
        for p in parts {
            if p.feature_dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: p.feature_dim(),
                });
            }
            let g = second_moment(p);
            let top = *symmetric_eigenvalues(&g).last().unwrap();
            beta_data = beta_data.max(top);
            mean_gram += &g;
        }
        mean_gram /= parts.len() as f64;
        let mu = match self.kind {
            LossKind::LinearRegression => symmetric_eigenvalues(&mean_gram)[0].max(0.0) + self.reg,
            LossKind::SquaredHingeSvm => self.reg,
        };
        let beta = beta_data + self.reg;
        if mu <= 1e-12 * beta.max(1.0) {
            return Err(Error::StrongConvexityNotCertified(mu));
        }
        Ok((mu, beta.max(mu)))
    }

    /// Minimizer of the global loss: normal equations for regression,
    /// long-run gradient descent for the squared hinge.
    pub fn optimum(&self, clusters: &[Vec<DevicePartition>]) -> Result<ModelVector> {
        match self.kind {
            LossKind::LinearRegression => {
                let q = QuadraticObjective::new(self, clusters)?;
                cholesky_solve(&q.hessian, &q.linear)
            }
            LossKind::SquaredHingeSvm => {
                let flat: Vec<DevicePartition> = clusters.iter().flatten().cloned().collect();
                let (_, beta) = self.smoothness_constants(&flat)?;
                let mut w = Array1::<f64>::zeros(self.dim);
                for _ in 0..200_000 {
                    let g = self.global_grad(&w, clusters)?;
                    if g.dot(&g).sqrt() < 1e-10 {
                        break;
                    }
                    w.scaled_add(-1.0 / beta, &g);
                }
                Ok(w)
            }
        }
    }

    /// `grad F(w)`.
    pub fn global_grad(&self, w: &ModelVector, clusters: &[Vec<DevicePartition>]) -> Result<ModelVector> {
        let sizes: Vec<usize> = clusters.iter().map(Vec::len).collect();
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::EmptyCluster(c));
        }
        let weights = cluster_weights(&sizes);
        let mut g = Array1::<f64>::zeros(self.dim);
        for (parts, rho) in clusters.iter().zip(weights) {
            let per = rho / parts.len() as f64;
            for p in parts {
                g.scaled_add(per, &self.grad_full(w, p)?);
            }
        }
        Ok(g)
    }
}

/// `(1/D_i) X^T X`
pub fn second_moment(part: &DevicePartition) -> Array2<f64> {
    part.features.t().dot(&part.features) / part.len() as f64
}

/// `F(w) = 1/2 w^T H w - b^T w + c` for regularized linear regression,
/// precomputed so the global loss costs `O(M^2)` per evaluation.
#[derive(Debug, Clone)]
pub struct QuadraticObjective {
    pub hessian: Array2<f64>,
    pub linear: Array1<f64>,
    pub constant: f64,
}

impl QuadraticObjective {
    pub fn new(model: &LossModel, clusters: &[Vec<DevicePartition>]) -> Result<Self> {
        if model.kind != LossKind::LinearRegression {
            return Err(Error::invalid("kind", "quadratic form needs linear regression"));
        }
        let n_devices: usize = clusters.iter().map(Vec::len).sum();
        if n_devices == 0 {
            return Err(Error::EmptyCluster(0));
        }
        let mut hessian = Array2::<f64>::zeros((model.dim, model.dim));
        let mut linear = Array1::<f64>::zeros(model.dim);
        let mut constant = 0.0;
        for p in clusters.iter().flatten() {
            if p.feature_dim() != model.dim {
                return Err(Error::DimensionMismatch {
                    expected: model.dim,
                    found: p.feature_dim(),
                });
            }
            let d = p.len() as f64;
            hessian += &(p.features.t().dot(&p.features) / d);
            linear += &(p.features.t().dot(&p.targets) / d);
            constant += 0.5 * p.targets.dot(&p.targets) / d;
        }
        let inv = 1.0 / n_devices as f64;
        hessian *= inv;
        linear *= inv;
        constant *= inv;
        for i in 0..model.dim {
            hessian[[i, i]] += model.reg;
        }
        Ok(Self {
            hessian,
            linear,
            constant,
        })
    }

    pub fn value(&self, w: &ModelVector) -> f64 {
        0.5 * w.dot(&self.hessian.dot(w)) - self.linear.dot(w) + self.constant
    }

    pub fn gradient(&self, w: &ModelVector) -> ModelVector {
        self.hessian.dot(w) - &self.linear
    }
}

/// Fraction of points whose sign of `w.x` matches the sign of the target.
pub fn sign_accuracy(w: &ModelVector, parts: &[DevicePartition]) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    for p in parts {
        let scores = p.features.dot(w);
        for (s, y) in scores.iter().zip(p.targets.iter()) {
            let pred = if *s >= 0.0 { 1.0 } else { -1.0 };
            if (pred > 0.0) == (*y > 0.0) {
                hits += 1;
            }
        }
        total += p.len();
    }
    hits as f64 / total.max(1) as f64
}

/// Stacks device features row-wise; handy for oracles and reporting.
pub fn stack_features(parts: &[DevicePartition]) -> Array2<f64> {
    let views: Vec<_> = parts.iter().map(|p| p.features.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("consistent feature dimension")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn part(id: usize, xs: &[&[f64]], ys: &[f64]) -> DevicePartition {
        let pts: Vec<DataPoint> = xs
            .iter()
            .zip(ys)
            .map(|(x, &y)| DataPoint {
                x: Array1::from(x.to_vec()),
                y,
            })
            .collect();
        DevicePartition::from_points(id, &pts).unwrap()
    }

    fn random_part(id: usize, n: usize, m: usize, seed: u64) -> DevicePartition {
        let mut r = rng::stream(seed, &[id as u64]);
        let features = Array2::from_shape_fn((n, m), |_| r.sample::<f64, _>(StandardNormal));
        let targets = Array1::from_shape_fn(n, |_| if r.random::<bool>() { 1.0 } else { -1.0 });
        DevicePartition {
            device_id: id,
            features,
            targets,
            labels: vec![0; n],
        }
    }

    fn random_w(m: usize, seed: u64) -> ModelVector {
        let mut r = rng::stream(seed, &[99]);
        Array1::from_shape_fn(m, |_| r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn single_point_regression_values() {
        let m = LossModel::new(LossKind::LinearRegression, 0.0, 1).unwrap();
        let p = part(0, &[&[1.0]], &[0.0]);
        let w = array![2.0];
        assert_eq!(m.local_loss(&w, &p).unwrap(), 2.0);
        assert_eq!(m.grad_full(&w, &p).unwrap(), array![2.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = LossModel::new(LossKind::LinearRegression, 0.0, 2).unwrap();
        let p = part(0, &[&[1.0]], &[0.0]);
        assert!(matches!(
            m.local_loss(&array![1.0, 1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(m.grad_full(&array![1.0], &p).is_err());
    }

    #[test]
    fn regression_loss_matches_direct_sum() {
        let model = LossModel::new(LossKind::LinearRegression, 0.3, 4).unwrap();
        let p = random_part(1, 10, 4, 11);
        let w = random_w(4, 5);
        let mut oracle = 0.0;
        for i in 0..10 {
            let mut z = 0.0;
            for j in 0..4 {
                z += p.features[[i, j]] * w[j];
            }
            oracle += 0.5 * (p.targets[i] - z).powi(2);
        }
        oracle = oracle / 10.0 + 0.15 * w.iter().map(|v| v * v).sum::<f64>();
        let got = model.local_loss(&w, &p).unwrap();
        assert!(((got - oracle) / oracle).abs() < 1e-12);
    }

    #[test]
    fn closed_form_optimum_is_stationary_and_minimal() {
        let model = LossModel::new(LossKind::LinearRegression, 0.1, 3).unwrap();
        let clusters = vec![vec![random_part(0, 12, 3, 1), random_part(1, 8, 3, 1)], vec![random_part(2, 9, 3, 1)]];
        let w = model.optimum(&clusters).unwrap();
        let g = model.global_grad(&w, &clusters).unwrap();
        assert!(g.dot(&g).sqrt() < 1e-10);
        let f0 = model.global_loss(&w, &clusters).unwrap();
        let mut r = rng::stream(3, &[]);
        for _ in 0..100 {
            let d = Array1::from_shape_fn(3, |_| 0.1 * r.sample::<f64, _>(StandardNormal));
            assert!(model.global_loss(&(&w + &d), &clusters).unwrap() >= f0);
        }
    }

    #[test]
    fn svm_optimum_is_stationary() {
        let model = LossModel::new(LossKind::SquaredHingeSvm, 0.1, 3).unwrap();
        let clusters = vec![vec![random_part(0, 12, 3, 4), random_part(1, 8, 3, 4)]];
        let w = model.optimum(&clusters).unwrap();
        let g = model.global_grad(&w, &clusters).unwrap();
        assert!(g.dot(&g).sqrt() < 1e-10);
    }

    #[test]
    fn global_loss_is_flat_device_average() {
        let model = LossModel::new(LossKind::SquaredHingeSvm, 0.05, 3).unwrap();
        let clusters = vec![
            vec![random_part(0, 5, 3, 2), random_part(1, 7, 3, 2), random_part(2, 3, 3, 2)],
            vec![random_part(3, 6, 3, 2)],
        ];
        let w = random_w(3, 8);
        let flat: f64 = clusters
            .iter()
            .flatten()
            .map(|p| model.local_loss(&w, p).unwrap())
            .sum::<f64>()
            / 4.0;
        let got = model.global_loss(&w, &clusters).unwrap();
        assert!((got - flat).abs() < 1e-12);
        assert_eq!(cluster_weights(&[3, 1]), vec![0.75, 0.25]);
    }

    #[test]
    fn identical_devices_give_local_loss() {
        let model = LossModel::new(LossKind::LinearRegression, 0.2, 3).unwrap();
        let p = random_part(0, 6, 3, 9);
        let clusters = vec![vec![p.clone(), p.clone()], vec![p.clone()]];
        let w = random_w(3, 1);
        let a = model.global_loss(&w, &clusters).unwrap();
        let b = model.local_loss(&w, &p).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn empty_cluster_rejected() {
        let model = LossModel::new(LossKind::LinearRegression, 0.2, 3).unwrap();
        let clusters = vec![vec![random_part(0, 6, 3, 9)], vec![]];
        assert!(matches!(
            model.global_loss(&random_w(3, 1), &clusters),
            Err(Error::EmptyCluster(1))
        ));
    }

    #[test]
    fn gradients_match_central_differences() {
        for (k, kind) in [LossKind::LinearRegression, LossKind::SquaredHingeSvm]
            .into_iter()
            .enumerate()
        {
            for trial in 0..100u64 {
                let model = LossModel::new(kind, 0.1, 4).unwrap();
                let p = random_part(trial as usize, 7, 4, 1000 + trial + 500 * k as u64);
                let w = random_w(4, trial + 17);
                let g = model.grad_full(&w, &p).unwrap();
                let h = 1e-5;
                for j in 0..4 {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[j] += h;
                    wm[j] -= h;
                    let fd = (model.local_loss(&wp, &p).unwrap() - model.local_loss(&wm, &p).unwrap())
                        / (2.0 * h);
                    assert!((fd - g[j]).abs() < 1e-6, "{kind:?} trial {trial} coord {j}: {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn full_batch_sgd_equals_full_gradient() {
        let model = LossModel::new(LossKind::LinearRegression, 0.1, 3).unwrap();
        let p = random_part(0, 9, 3, 2);
        let w = random_w(3, 3);
        let mut r = rng::stream(0, &[]);
        assert_eq!(
            model.grad_sgd(&w, &p, 9, &mut r).unwrap(),
            model.grad_full(&w, &p).unwrap()
        );
        assert!(model.grad_sgd(&w, &p, 0, &mut r).is_err());
        assert!(model.grad_sgd(&w, &p, 10, &mut r).is_err());
    }

    #[test]
    fn sgd_is_deterministic_per_stream() {
        let model = LossModel::new(LossKind::SquaredHingeSvm, 0.1, 3).unwrap();
        let p = random_part(0, 20, 3, 2);
        let w = random_w(3, 3);
        let a = model.grad_sgd(&w, &p, 4, &mut rng::stream(5, &[1, 2])).unwrap();
        let b = model.grad_sgd(&w, &p, 4, &mut rng::stream(5, &[1, 2])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_is_unbiased_with_bounded_variance() {
        let model = LossModel::new(LossKind::LinearRegression, 0.1, 3).unwrap();
        let p = random_part(0, 15, 3, 21);
        let w = random_w(3, 4);
        let full = model.grad_full(&w, &p).unwrap();
        let n = 10_000;
        let mut r = rng::stream(77, &[]);
        let draws: Vec<ModelVector> = (0..n).map(|_| model.grad_sgd(&w, &p, 4, &mut r).unwrap()).collect();
        let mut sq_noise = 0.0;
        for j in 0..3 {
            let mean = draws.iter().map(|g| g[j]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - full[j]).abs() <= 3.0 * se + 1e-12, "coord {j}");
        }
        for g in &draws {
            let d = g - &full;
            sq_noise += d.dot(&d);
        }
        let emp = sq_noise / n as f64;
        // Exact variance bound: every batch's noise is at most the largest
        // single-point deviation.
        let worst = (0..15)
            .map(|i| {
                let x = p.features.row(i);
                let gi = &x * (x.dot(&w) - p.targets[i]) + &(&w * 0.1);
                let d = &gi - &full;
                d.dot(&d)
            })
            .fold(0.0, f64::max);
        assert!(emp.is_finite() && emp <= worst);
    }

    #[test]
    fn smoothness_constants_small_cases() {
        let p = part(0, &[&[1.0]], &[0.0]);
        let m0 = LossModel::new(LossKind::LinearRegression, 0.0, 1).unwrap();
        assert_eq!(m0.smoothness_constants(std::slice::from_ref(&p)).unwrap(), (1.0, 1.0));
        let m1 = LossModel::new(LossKind::LinearRegression, 0.1, 1).unwrap();
        let (mu, beta) = m1.smoothness_constants(&[p]).unwrap();
        assert!((mu - 1.1).abs() < 1e-15 && (beta - 1.1).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_unregularized_is_rejected() {
        let p = part(0, &[&[1.0, 0.0], &[2.0, 0.0]], &[0.0, 1.0]);
        let m = LossModel::new(LossKind::LinearRegression, 0.0, 2).unwrap();
        assert!(matches!(
            m.smoothness_constants(std::slice::from_ref(&p)),
            Err(Error::StrongConvexityNotCertified(_))
        ));
        let svm = LossModel::new(LossKind::SquaredHingeSvm, 0.0, 2).unwrap();
        assert!(svm.smoothness_constants(&[p]).is_err());
    }

    #[test]
    fn quadratic_objective_matches_global_loss() {
        let model = LossModel::new(LossKind::LinearRegression, 0.2, 3).unwrap();
        let clusters = vec![vec![random_part(0, 5, 3, 1), random_part(1, 9, 3, 1)], vec![random_part(2, 4, 3, 1)]];
        let q = QuadraticObjective::new(&model, &clusters).unwrap();
        let w = random_w(3, 2);
        let a = q.value(&w);
        let b = model.global_loss(&w, &clusters).unwrap();
        assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        let ga = q.gradient(&w);
        let gb = model.global_grad(&w, &clusters).unwrap();
        assert!((&ga - &gb).iter().all(|v| v.abs() < 1e-12));
    }
}
