//! Deterministic dataset partitioning across devices.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::{DevicePartition, LabeledDataset};

/// How samples are spread across devices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "scheme")]
pub enum PartitionScheme {
    /// Every device draws uniformly from the whole dataset.
    Iid,
    /// Every device holds samples from exactly `labels_per_device` labels.
    LabelLimited { labels_per_device: usize },
    /// `iid_devices` uniform devices plus `noniid_devices` label-limited ones.
    Mixed {
        iid_devices: usize,
        noniid_devices: usize,
        labels_per_device: usize,
    },
}

impl PartitionScheme {
    pub fn device_count_hint(&self) -> Option<usize> {
        match self {
            PartitionScheme::Mixed {
                iid_devices,
                noniid_devices,
                ..
            } => Some(iid_devices + noniid_devices),
            _ => None,
        }
    }
}

/// Splits `dataset` into `k` disjoint device partitions.
///
/// Partitions cover a subset of the dataset (chunking remainders may drop a
/// few samples), are disjoint, and are fully determined by `seed`.
pub fn partition_devices(
    dataset: &LabeledDataset,
    scheme: PartitionScheme,
    k: usize,
    seed: u64,
) -> Result<Vec<DevicePartition>> {
    if k == 0 {
        return Err(Error::InvalidParameter("device count must be >= 1".into()));
    }
    if k > dataset.len() {
        return Err(Error::InvalidPartition(format!(
            "{k} devices exceed {} samples",
            dataset.len()
        )));
    }
    let mut rng = rng::stream(seed, &[rng::stage::PARTITION]);
    let mut pool: Vec<usize> = dataset.all_indices();
    pool.shuffle(&mut rng);

    match scheme {
        PartitionScheme::Iid => {
            let chunks = split_even(&pool, k);
            build(chunks, (0..k).collect())
        }
        PartitionScheme::LabelLimited { labels_per_device } => {
            let chunks = label_limited(&pool, dataset, k, labels_per_device, &mut rng)?;
            build(chunks, (0..k).collect())
        }
        PartitionScheme::Mixed {
            iid_devices,
            noniid_devices,
            labels_per_device,
        } => {
            if iid_devices + noniid_devices != k {
                return Err(Error::InvalidParameter(format!(
                    "mixed scheme devices {iid_devices}+{noniid_devices} != K={k}"
                )));
            }
            if iid_devices == 0 {
                let chunks = label_limited(&pool, dataset, k, labels_per_device, &mut rng)?;
                return build(chunks, (0..k).collect());
            }
            if noniid_devices == 0 {
                let chunks = split_even(&pool, k);
                return build(chunks, (0..k).collect());
            }
            // shuffled id assignment so data type does not correlate with
            // device index (and hence with spatial region)
            let mut ids: Vec<usize> = (0..k).collect();
            ids.shuffle(&mut rng);

            let iid_sample_count = pool.len() * iid_devices / k;
            let (iid_pool, noniid_pool) = pool.split_at(iid_sample_count);
            let mut chunks = split_even(iid_pool, iid_devices);
            chunks.extend(label_limited(
                noniid_pool,
                dataset,
                noniid_devices,
                labels_per_device,
                &mut rng,
            )?);
            build(chunks, ids)
        }
    }
}

fn build(chunks: Vec<Vec<usize>>, ids: Vec<usize>) -> Result<Vec<DevicePartition>> {
    let mut parts: Vec<DevicePartition> = chunks
        .into_iter()
        .zip(ids)
        .map(|(indices, id)| DevicePartition::new(id, indices))
        .collect::<Result<_>>()?;
    parts.sort_by_key(|p| p.device_id);
    Ok(parts)
}

fn split_even(pool: &[usize], k: usize) -> Vec<Vec<usize>> {
    let base = pool.len() / k;
    let extra = pool.len() % k;
    let mut out = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let take = base + usize::from(i < extra);
        out.push(pool[at..at + take].to_vec());
        at += take;
    }
    out
}

/// Gives device `j` the labels `perm[(j*m + i) mod L]`, i in 0..m, then splits
/// each label's samples evenly among the devices holding it. Consecutive
/// slices of a cyclic permutation of distinct labels are distinct for m <= L.
fn label_limited(
    pool: &[usize],
    dataset: &LabeledDataset,
    k: usize,
    m: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<Vec<usize>>> {
    let label_count = dataset.label_count();
    if m == 0 {
        return Err(Error::InvalidParameter(
            "labels_per_device must be >= 1".into(),
        ));
    }
    if m > label_count {
        return Err(Error::InvalidParameter(format!(
            "labels_per_device {m} exceeds label count {label_count}"
        )));
    }

    let mut perm: Vec<usize> = (0..label_count).collect();
    perm.shuffle(rng);

    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); label_count];
    for &i in pool {
        by_label[dataset.label(i)].push(i);
    }

    // holders[label] = devices assigned that label, in device order
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); label_count];
    for dev in 0..k {
        for slot in 0..m {
            holders[perm[(dev * m + slot) % label_count]].push(dev);
        }
    }

    let mut chunks: Vec<Vec<usize>> = vec![Vec::new(); k];
    for label in 0..label_count {
        let devs = &holders[label];
        if devs.is_empty() {
            continue;
        }
        for (slot, piece) in split_even(&by_label[label], devs.len()).into_iter().enumerate() {
            chunks[devs[slot]].extend(piece);
        }
    }

    if let Some(empty) = chunks.iter().position(|c| c.is_empty()) {
        return Err(Error::InvalidPartition(format!(
            "label-limited split left device slot {empty} empty; \
             not enough samples per label for {k} devices"
        )));
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::label_pmf;

    fn blob_like(n: usize, labels: usize) -> LabeledDataset {
        let feats: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let ls: Vec<usize> = (0..n).map(|i| i % labels).collect();
        LabeledDataset::new(feats, ls, labels).unwrap()
    }

    #[test]
    fn single_device_iid_gets_everything() {
        let ds = blob_like(40, 4);
        let parts = partition_devices(&ds, PartitionScheme::Iid, 1, 7).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].len(), 40);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = blob_like(300, 10);
        let scheme = PartitionScheme::Mixed {
            iid_devices: 4,
            noniid_devices: 4,
            labels_per_device: 2,
        };
        let a = partition_devices(&ds, scheme, 8, 99).unwrap();
        let b = partition_devices(&ds, scheme, 8, 99).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.device_id, y.device_id);
            assert_eq!(x.sample_indices, y.sample_indices);
        }
        let c = partition_devices(&ds, scheme, 8, 100).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.sample_indices != y.sample_indices));
    }

    #[test]
    fn partitions_are_disjoint() {
        let ds = blob_like(500, 10);
        let parts = partition_devices(
            &ds,
            PartitionScheme::LabelLimited {
                labels_per_device: 2,
            },
            10,
            3,
        )
        .unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &parts {
            for &i in &p.sample_indices {
                assert!(seen.insert(i), "index {i} assigned twice");
            }
        }
    }

    #[test]
    fn label_limited_uses_exactly_m_labels() {
        let ds = blob_like(1000, 10);
        let parts = partition_devices(
            &ds,
            PartitionScheme::LabelLimited {
                labels_per_device: 2,
            },
            10,
            11,
        )
        .unwrap();
        for p in &parts {
            let mut labels: Vec<usize> =
                p.sample_indices.iter().map(|&i| ds.label(i)).collect();
            labels.sort_unstable();
            labels.dedup();
            assert_eq!(labels.len(), 2, "device {} labels {labels:?}", p.device_id);
        }
    }

    #[test]
    fn mixed_scheme_shapes() {
        let ds = blob_like(3000, 10);
        let parts = partition_devices(
            &ds,
            PartitionScheme::Mixed {
                iid_devices: 24,
                noniid_devices: 6,
                labels_per_device: 2,
            },
            30,
            11,
        )
        .unwrap();
        assert_eq!(parts.len(), 30);
        // count devices by how many labels they carry
        let mut narrow = 0;
        let mut wide = 0;
        for p in &parts {
            let mut labels: Vec<usize> =
                p.sample_indices.iter().map(|&i| ds.label(i)).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.len() <= 2 {
                narrow += 1;
            } else {
                wide += 1;
            }
        }
        assert_eq!(narrow, 6);
        assert_eq!(wide, 24);
        // near-uniform pmf on the IID devices
        let ds_pmf = label_pmf(&ds.all_indices(), &ds).unwrap();
        for p in &parts {
            let mut labels: Vec<usize> =
                p.sample_indices.iter().map(|&i| ds.label(i)).collect();
            labels.sort_unstable();
            labels.dedup();
            if labels.len() > 2 {
                let pmf = label_pmf(&p.sample_indices, &ds).unwrap();
                for (a, b) in pmf.mass().iter().zip(ds_pmf.mass()) {
                    assert!((a - b).abs() < 0.08, "iid device far from global pmf");
                }
            }
        }
    }

    #[test]
    fn errors_on_bad_parameters() {
        let ds = blob_like(20, 4);
        assert!(partition_devices(&ds, PartitionScheme::Iid, 0, 1).is_err());
        assert!(partition_devices(&ds, PartitionScheme::Iid, 21, 1).is_err());
        assert!(partition_devices(
            &ds,
            PartitionScheme::LabelLimited {
                labels_per_device: 5
            },
            4,
            1
        )
        .is_err());
        assert!(partition_devices(
            &ds,
            PartitionScheme::Mixed {
                iid_devices: 2,
                noniid_devices: 3,
                labels_per_device: 2
            },
            4,
            1
        )
        .is_err());
    }
}
