//! Datasets, label statistics, Wasserstein heterogeneity metrics, and the
//! aggregation weights built on them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx_dataset, read_idx_images, read_idx_labels};
pub use partition::{partition_devices, PartitionScheme};
pub use synthetic::{gaussian_blobs, BlobSpec};

/// Lower clamp applied to Wasserstein distances before taking `e^(1/W)`,
/// so that perfectly homogeneous clusters keep finite, monotone weights.
pub const MIN_WASSERSTEIN: f64 = 1e-3;

/// A labeled classification dataset with dense real features.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    features: Vec<f64>, // row-major, len = n * feature_dim
    labels: Vec<usize>,
    feature_dim: usize,
    label_count: usize,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, label_count: usize) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        let dim = features[0].len();
        let mut flat = Vec::with_capacity(features.len() * dim);
        for (i, f) in features.iter().enumerate() {
            if f.len() != dim {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has dimension {} but expected {dim}",
                    f.len()
                )));
            }
            flat.extend_from_slice(f);
        }
        Self::from_flat(flat, labels, dim, label_count)
    }

    pub fn from_flat(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        label_count: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        if features.len() != labels.len() * feature_dim {
            return Err(Error::InvalidDataset(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                labels.len(),
                feature_dim
            )));
        }
        if label_count == 0 {
            return Err(Error::InvalidDataset("label_count must be positive".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= label_count) {
            return Err(Error::InvalidDataset(format!(
                "label {bad} out of range [0, {label_count})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            label_count,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-label sample counts over `indices`.
    pub fn label_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.label_count];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

/// One device's slice of the dataset, by sample index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DevicePartition {
    pub device_id: usize,
    pub sample_indices: Vec<usize>,
}

impl DevicePartition {
    pub fn new(device_id: usize, sample_indices: Vec<usize>) -> Result<Self> {
        if sample_indices.is_empty() {
            return Err(Error::InvalidPartition(format!(
                "device {device_id} received no samples"
            )));
        }
        let mut seen = sample_indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPartition(format!(
                "device {device_id} has duplicate sample indices"
            )));
        }
        Ok(Self {
            device_id,
            sample_indices,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Discrete probability mass over class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPmf {
    mass: Vec<f64>,
}

impl LabelPmf {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::EmptyInput("pmf"));
        }
        if mass.iter().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::InvalidParameter("pmf entries must be finite and nonnegative".into()));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "pmf sums to {total}, expected 1"
            )));
        }
        Ok(Self { mass })
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("label counts"));
        }
        let mass = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Self { mass })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }
}

/// Ground metric used between label indices in the Wasserstein distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GroundMetric {
    /// |i - j| on integer label indices (1-D optimal transport).
    #[default]
    LabelIndex,
    /// 0/1 discrete metric; the distance becomes total variation.
    Discrete,
}

/// Label distribution of `indices` within `dataset`.
pub fn label_pmf(indices: &[usize], dataset: &LabeledDataset) -> Result<LabelPmf> {
    if indices.is_empty() {
        return Err(Error::EmptyInput("index set for label pmf"));
    }
    LabelPmf::from_counts(&dataset.label_counts(indices))
}

/// 1-D Wasserstein distance between two label PMFs under `metric`.
///
/// For the index metric this is the closed form
/// `W(a, b) = sum_i |CDF_a(i) - CDF_b(i)|`; for the discrete metric it is
/// total variation.
pub fn wasserstein(a: &LabelPmf, b: &LabelPmf, metric: GroundMetric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::PmfLengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d = match metric {
        GroundMetric::LabelIndex => {
            let mut cum = 0.0;
            let mut total = 0.0;
            for i in 0..a.len() - 1 {
                cum += a.mass[i] - b.mass[i];
                total += cum.abs();
            }
            total
        }
        GroundMetric::Discrete => {
            0.5 * a
                .mass
                .iter()
                .zip(&b.mass)
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        }
    };
    Ok(d)
}

/// Wasserstein distance with the default |i - j| label-index metric.
pub fn wasserstein_1d(a: &LabelPmf, b: &LabelPmf) -> Result<f64> {
    wasserstein(a, b, GroundMetric::LabelIndex)
}

/// Cluster contribution `theta_c = |D_c| * e^(1/W_c)`.
///
/// `w` is clamped below at [`MIN_WASSERSTEIN`] and the result saturates at
/// `f64::MAX` instead of overflowing to infinity, keeping threshold
/// comparisons and serialization well defined.
pub fn contribution(sample_count: usize, w: f64) -> f64 {
    let w_eff = w.max(MIN_WASSERSTEIN);
    let ln_value = (sample_count as f64).ln() + w_eff.recip();
    if ln_value >= f64::MAX.ln() {
        f64::MAX
    } else {
        ln_value.exp()
    }
}

/// Data-side profile of one cluster: size, label PMF, distance to the
/// global PMF, and the derived contribution score.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterDataProfile {
    pub cluster_id: usize,
    pub sample_count: usize,
    pub pmf: LabelPmf,
    pub wasserstein_to_global: f64,
    pub contribution: f64,
}

impl ClusterDataProfile {
    pub fn new(
        cluster_id: usize,
        member_indices: &[usize],
        dataset: &LabeledDataset,
        global: &LabelPmf,
        metric: GroundMetric,
    ) -> Result<Self> {
        let pmf = label_pmf(member_indices, dataset)?;
        let w = wasserstein(&pmf, global, metric)?;
        Ok(Self {
            cluster_id,
            sample_count: member_indices.len(),
            contribution: contribution(member_indices.len(), w),
            wasserstein_to_global: w,
            pmf,
        })
    }
}

/// Inter-cluster aggregation weights `G_c = |D_c| e^(1/W_c) / sum(...)`.
///
/// Evaluated in log space so near-zero distances cannot overflow.
pub fn cluster_weight_gc(profiles: &[ClusterDataProfile]) -> Result<Vec<f64>> {
    if profiles.is_empty() {
        return Err(Error::EmptyInput("cluster profiles"));
    }
    let logs: Vec<f64> = profiles
        .iter()
        .map(|p| {
            let w_eff = p.wasserstein_to_global.max(MIN_WASSERSTEIN);
            (p.sample_count as f64).ln() + w_eff.recip()
        })
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}

/// Intra-cluster weights proportional to per-device sample counts.
pub fn intra_weights_gk(partitions: &[&DevicePartition]) -> Result<Vec<f64>> {
    if partitions.is_empty() {
        return Err(Error::EmptyInput("device partitions"));
    }
    let total: usize = partitions.iter().map(|p| p.len()).sum();
    Ok(partitions
        .iter()
        .map(|p| p.len() as f64 / total as f64)
        .collect())
}

/// Per-device label information matrix.
///
/// Entry (k, l) is `(C_k^l / D) * ln(D * C_k^l / (D_k * C^l))`, with the
/// `0 ln 0 = 0` convention, computed over the samples covered by the
/// partitions (devices outside the federation do not enter the totals).
#[derive(Debug, Clone)]
pub struct InfoMatrix {
    xi: Array2<f64>,
}

impl InfoMatrix {
    pub fn from_matrix(xi: Array2<f64>) -> Self {
        Self { xi }
    }

    pub fn device_count(&self) -> usize {
        self.xi.nrows()
    }

    pub fn label_count(&self) -> usize {
        self.xi.ncols()
    }

    pub fn row(&self, k: usize) -> ndarray::ArrayView1<'_, f64> {
        self.xi.row(k)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.xi
    }
}

pub fn info_matrix(partitions: &[DevicePartition], dataset: &LabeledDataset) -> Result<InfoMatrix> {
    if partitions.is_empty() {
        return Err(Error::EmptyInput("partitions"));
    }
    let label_count = dataset.label_count();
    let per_device: Vec<Vec<usize>> = partitions
        .iter()
        .map(|p| dataset.label_counts(&p.sample_indices))
        .collect();
    let mut global = vec![0usize; label_count];
    for counts in &per_device {
        for (g, c) in global.iter_mut().zip(counts) {
            *g += c;
        }
    }
    let total: usize = global.iter().sum();
    let total_f = total as f64;

    let mut xi = Array2::zeros((partitions.len(), label_count));
    for (k, counts) in per_device.iter().enumerate() {
        let dev_total = counts.iter().sum::<usize>() as f64;
        for (l, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue; // 0 * ln 0 convention
            }
            let c = c as f64;
            xi[(k, l)] = (c / total_f) * ((total_f * c) / (dev_total * global[l] as f64)).ln();
        }
    }
    Ok(InfoMatrix { xi })
}
