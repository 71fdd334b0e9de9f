//! Synthetic Gaussian-blob classification data for desk-scale runs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::LabeledDataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    pub classes: usize,
    pub feature_dim: usize,
    pub samples: usize,
    /// Norm of each class center.
    pub center_scale: f64,
    /// Isotropic standard deviation around each center.
    pub cluster_std: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            feature_dim: 20,
            samples: 6000,
            center_scale: 3.0,
            cluster_std: 1.0,
        }
    }
}

/// Draws a balanced Gaussian-blob dataset: one random direction per class,
/// scaled to `center_scale`, plus isotropic noise. Deterministic per seed.
pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledDataset> {
    if spec.classes == 0 || spec.feature_dim == 0 || spec.samples == 0 {
        return Err(Error::InvalidParameter(
            "blob spec requires positive classes, dims, and samples".into(),
        ));
    }
    if spec.samples < spec.classes {
        return Err(Error::InvalidParameter(format!(
            "{} samples cannot cover {} classes",
            spec.samples, spec.classes
        )));
    }
    let mut rng = rng::stream(seed, &[rng::stage::DATASET]);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut centers = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut c: Vec<f64> = (0..spec.feature_dim)
            .map(|_| std_normal.sample(&mut rng))
            .collect();
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut c {
            *v *= spec.center_scale / norm;
        }
        centers.push(c);
    }

    let base = spec.samples / spec.classes;
    let extra = spec.samples % spec.classes;
    let mut features = Vec::with_capacity(spec.samples * spec.feature_dim);
    let mut labels = Vec::with_capacity(spec.samples);
    for (class, center) in centers.iter().enumerate() {
        let count = base + usize::from(class < extra);
        for _ in 0..count {
            for &c in center {
                features.push(c + spec.cluster_std * std_normal.sample(&mut rng));
            }
            labels.push(class);
        }
    }
    LabeledDataset::from_flat(features, labels, spec.feature_dim, spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let spec = BlobSpec {
            classes: 5,
            feature_dim: 4,
            samples: 52,
            center_scale: 2.0,
            cluster_std: 0.5,
        };
        let a = gaussian_blobs(&spec, 9).unwrap();
        let b = gaussian_blobs(&spec, 9).unwrap();
        assert_eq!(a.len(), 52);
        assert_eq!(a.labels(), b.labels());
        assert_eq!(a.feature(13), b.feature(13));

        let counts = a.label_counts(&a.all_indices());
        assert_eq!(counts, vec![11, 11, 10, 10, 10]);
    }

    #[test]
    fn centers_sit_at_requested_scale() {
        let spec = BlobSpec {
            classes: 3,
            feature_dim: 8,
            samples: 3000,
            center_scale: 5.0,
            cluster_std: 0.1,
        };
        let ds = gaussian_blobs(&spec, 1).unwrap();
        // mean norm per class should be close to center_scale
        for class in 0..3 {
            let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.label(i) == class).collect();
            let mut mean = vec![0.0; 8];
            for &i in &idx {
                for (m, v) in mean.iter_mut().zip(ds.feature(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= idx.len() as f64;
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 5.0).abs() < 0.1, "class {class} center norm {norm}");
        }
    }
}
