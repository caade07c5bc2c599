//! Synthetic Gaussian-class datasets, heterogeneous device partitions and
//! CSV ingestion.
//!
//! Class labels are mapped to `±1` targets by splitting the label range in
//! half: labels `< ceil(n_labels / 2)` become `+1`, the rest `-1`. The same
//! targets serve both the regression and the squared-hinge task, which keeps
//! the model a single weight vector of dimension `m`.

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::DevicePartition;
use crate::rng::{self, tag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_labels: usize,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_labels: usize) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_labels) {
            return Err(Error::invalid("labels", format!("label {bad} outside 0..{n_labels}")));
        }
        let mut seen = vec![false; n_labels];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invalid("labels", format!("label {missing} never appears")));
        }
        Ok(Self {
            features,
            labels,
            n_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn target_of(&self, label: usize) -> f64 {
        if label < self.n_labels.div_ceil(2) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn targets(&self) -> Array1<f64> {
        self.labels.iter().map(|&l| self.target_of(l)).collect()
    }

    /// The whole dataset as one partition (device id 0).
    pub fn as_partition(&self) -> DevicePartition {
        DevicePartition {
            device_id: 0,
            features: self.features.clone(),
            targets: self.targets(),
            labels: self.labels.clone(),
        }
    }
}

/// Gaussian classes: class `k` has mean `separation * u_k` (unit-norm random
/// directions, re-centred so the class means average to zero) and identity
/// covariance.
pub fn gen_synthetic(
    m: usize,
    n_labels: usize,
    per_label: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if m == 0 {
        return Err(Error::invalid("m", "feature dimension must be >= 1"));
    }
    if n_labels < 2 {
        return Err(Error::invalid("n_labels", "need at least 2 labels"));
    }
    if per_label == 0 {
        return Err(Error::invalid("per_label", "need at least 1 point per label"));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation", "must be finite and >= 0"));
    }
    let mut rng = rng::stream(seed, &[tag::DATASET]);
    let mut means = Array2::<f64>::zeros((n_labels, m));
    for mut row in means.outer_iter_mut() {
        row.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
        let norm = row.dot(&row).sqrt().max(f64::MIN_POSITIVE);
        row.mapv_inplace(|v| separation * v / norm);
    }
    let centre = means.mean_axis(ndarray::Axis(0)).unwrap();
    for mut row in means.outer_iter_mut() {
        row -= &centre;
    }
    let n = n_labels * per_label;
    let mut features = Array2::<f64>::zeros((n, m));
    let mut labels = Vec::with_capacity(n);
    for label in 0..n_labels {
        for k in 0..per_label {
            let mut row = features.row_mut(label * per_label + k);
            for j in 0..m {
                row[j] = means[[label, j]] + rng.sample::<f64, _>(StandardNormal);
            }
            labels.push(label);
        }
    }
    LabeledDataset::new(features, labels, n_labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    /// One label per device.
    Extreme,
    /// Three labels per device.
    Moderate,
    /// Uniform random split.
    Iid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionPlan {
    pub mode: PartitionMode,
    pub labels_per_device: usize,
    pub seed: u64,
}

impl PartitionPlan {
    pub fn new(mode: PartitionMode, n_labels: usize, seed: u64) -> Self {
        let labels_per_device = match mode {
            PartitionMode::Extreme => 1,
            PartitionMode::Moderate => 3.min(n_labels),
            PartitionMode::Iid => n_labels,
        };
        Self {
            mode,
            labels_per_device,
            seed,
        }
    }
}

/// Splits `dataset` over `n_devices`. Every point lands on exactly one
/// device; points of a label are shuffled and dealt round-robin over the
/// devices holding that label.
pub fn partition(
    dataset: &LabeledDataset,
    n_devices: usize,
    plan: &PartitionPlan,
) -> Result<Vec<DevicePartition>> {
    if n_devices == 0 {
        return Err(Error::invalid("n_devices", "need at least one device"));
    }
    if dataset.len() < n_devices {
        return Err(Error::invalid(
            "dataset",
            format!("{} points cannot give {n_devices} devices one point each", dataset.len()),
        ));
    }
    let expected_lpd = PartitionPlan::new(plan.mode, dataset.n_labels, plan.seed).labels_per_device;
    if plan.labels_per_device != expected_lpd {
        return Err(Error::invalid(
            "labels_per_device",
            format!("{:?} mode needs {expected_lpd}, got {}", plan.mode, plan.labels_per_device),
        ));
    }
    let mut rng = rng::stream(plan.seed, &[tag::PARTITION]);
    let mut assignment: Vec<Vec<usize>> = vec![Vec::new(); n_devices];

    match plan.mode {
        PartitionMode::Iid => {
            let mut idx: Vec<usize> = (0..dataset.len()).collect();
            idx.shuffle(&mut rng);
            for (k, i) in idx.into_iter().enumerate() {
                assignment[k % n_devices].push(i);
            }
        }
        PartitionMode::Extreme | PartitionMode::Moderate => {
            let lpd = plan.labels_per_device;
            let n_labels = dataset.n_labels;
            if n_devices * lpd < n_labels {
                return Err(Error::invalid(
                    "n_devices",
                    format!("{n_devices} devices with {lpd} label(s) each cannot cover {n_labels} labels"),
                ));
            }
            // Device slot d holds labels {d*lpd + j mod n_labels}; the slot
            // order is shuffled so clusters get a random label mix.
            let mut slots: Vec<usize> = (0..n_devices).collect();
            slots.shuffle(&mut rng);
            let label_sets: Vec<Vec<usize>> = slots
                .iter()
                .map(|&d| (0..lpd).map(|j| (d * lpd + j) % n_labels).collect())
                .collect();
            for label in 0..n_labels {
                let holders: Vec<usize> = (0..n_devices).filter(|&d| label_sets[d].contains(&label)).collect();
                let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == label).collect();
                if idx.len() < holders.len() {
                    return Err(Error::invalid(
                        "dataset",
                        format!("label {label} has {} points for {} devices", idx.len(), holders.len()),
                    ));
                }
                idx.shuffle(&mut rng);
                for (k, i) in idx.into_iter().enumerate() {
                    assignment[holders[k % holders.len()]].push(i);
                }
            }
        }
    }

    assignment
        .into_iter()
        .enumerate()
        .map(|(device_id, mut rows)| {
            rows.sort_unstable();
            if rows.is_empty() {
                return Err(Error::invalid("dataset", format!("device {device_id} received no points")));
            }
            let features = dataset.features.select(ndarray::Axis(0), &rows);
            let labels: Vec<usize> = rows.iter().map(|&i| dataset.labels[i]).collect();
            let targets = labels.iter().map(|&l| dataset.target_of(l)).collect();
            Ok(DevicePartition {
                device_id,
                features,
                targets,
                labels,
            })
        })
        .collect()
}

/// Reads numeric CSV rows whose last column is an integer class label.
pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(k + 1);
        let parse_err = |column: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            row: line,
            column,
            reason,
        };
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(parse_err(record.len(), format!("expected {w} columns, found {}", record.len())));
        }
        if w < 2 {
            return Err(parse_err(1, "need at least one feature and a label".into()));
        }
        for (j, cell) in record.iter().enumerate().take(w - 1) {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(j + 1, format!("non-numeric feature `{cell}`")))?;
            rows.push(v);
        }
        let cell = &record[w - 1];
        let label = cell
            .parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && *v >= 0.0)
            .ok_or_else(|| parse_err(w, format!("label `{cell}` is not a non-negative integer")))?;
        labels.push(label as usize);
    }
    let w = width.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        column: 0,
        reason: "no data rows".into(),
    })?;
    let features = Array2::from_shape_vec((labels.len(), w - 1), rows).expect("row-major shape");
    let n_labels = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    LabeledDataset::new(features, labels, n_labels)
}

/// Writes the dataset in the format [`load_csv`] reads (no header).
pub fn write_csv(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for (row, label) in dataset.features.outer_iter().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;
    use std::io::Write;

    fn label_set(p: &DevicePartition) -> BTreeSet<usize> {
        p.labels.iter().copied().collect()
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic(5, 3, 10, 2.0, 9).unwrap();
        let b = gen_synthetic(5, 3, 10, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(5, 3, 10, 2.0, 10).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 30);
    }

    #[test]
    fn synthetic_validates_inputs() {
        assert!(gen_synthetic(0, 2, 1, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 1, 1, 1.0, 0).is_err());
        assert!(gen_synthetic(2, 2, 0, 1.0, 0).is_err());
    }

    #[test]
    fn iid_even_split() {
        let ds = gen_synthetic(2, 4, 25, 1.0, 1).unwrap();
        let parts = partition(&ds, 4, &PartitionPlan::new(PartitionMode::Iid, 4, 3)).unwrap();
        assert!(parts.iter().all(|p| p.len() == 25));
    }

    #[test]
    fn label_cardinalities_per_mode() {
        let ds = gen_synthetic(3, 10, 40, 1.0, 1).unwrap();
        let ext = partition(&ds, 25, &PartitionPlan::new(PartitionMode::Extreme, 10, 3)).unwrap();
        assert!(ext.iter().all(|p| label_set(p).len() == 1));
        let modr = partition(&ds, 25, &PartitionPlan::new(PartitionMode::Moderate, 10, 3)).unwrap();
        assert!(modr.iter().all(|p| label_set(p).len() == 3));
    }

    #[test]
    fn partition_is_exact() {
        let ds = gen_synthetic(3, 10, 13, 1.0, 2).unwrap();
        for mode in [PartitionMode::Extreme, PartitionMode::Moderate, PartitionMode::Iid] {
            let parts = partition(&ds, 20, &PartitionPlan::new(mode, 10, 4)).unwrap();
            let total: usize = parts.iter().map(|p| p.len()).sum();
            assert_eq!(total, ds.len());
            // multiset of rows is preserved
            let mut got: Vec<Vec<u64>> = parts
                .iter()
                .flat_map(|p| p.features.outer_iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect::<Vec<_>>())
                .collect();
            let mut want: Vec<Vec<u64>> = ds
                .features
                .outer_iter()
                .map(|r| r.iter().map(|v| v.to_bits()).collect())
                .collect();
            got.sort();
            want.sort();
            assert_eq!(got, want, "{mode:?}");
        }
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        let ds = gen_synthetic(2, 2, 1, 1.0, 0).unwrap();
        assert!(partition(&ds, 3, &PartitionPlan::new(PartitionMode::Iid, 2, 0)).is_err());
        let ds = gen_synthetic(2, 10, 2, 1.0, 0).unwrap();
        assert!(partition(&ds, 5, &PartitionPlan::new(PartitionMode::Extreme, 10, 0)).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ds = gen_synthetic(3, 2, 4, 1.5, 5).unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&ds, &path).unwrap();
        let back = load_csv(&path, false).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.iter().zip(ds.features.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }

        let small = dir.path().join("small.csv");
        std::fs::write(&small, "x1,x2,label\n1,2,0\n3,4,1\n5,6,0\n").unwrap();
        assert_eq!(load_csv(&small, true).unwrap().len(), 3);

        let bad = dir.path().join("bad.csv");
        let mut f = std::fs::File::create(&bad).unwrap();
        writeln!(f, "1.0,2.0,0\n1.5,oops,1").unwrap();
        match load_csv(&bad, false) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
