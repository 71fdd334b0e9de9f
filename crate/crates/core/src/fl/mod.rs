//! The hierarchical FL engine: local mini-batch training, CAMU scheduling,
//! intra-cluster aggregation, the noisy leader-to-BS uplink, and the global
//! update loop.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bound::dissimilarity_sample;
use crate::cluster::ClusterAssignment;
use crate::data::{DevicePartition, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{ConvexModelSpec, ModelParams};
use crate::rng;

mod history;

pub use history::{DissimilarityEstimate, RoundRecord, TrainingHistory};

/// Per-cluster multi-round gate and pass count: `N_c = 1 + S_c * n_c`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CamuEntry {
    pub cluster_id: usize,
    /// The contribution gate S_c.
    pub multi_round: bool,
    /// Extra passes n_c granted when the gate is open.
    pub extra_updates: u32,
}

impl CamuEntry {
    pub fn passes(&self) -> u32 {
        1 + if self.multi_round { self.extra_updates } else { 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CamuSchedule {
    pub per_cluster: Vec<CamuEntry>,
}

impl CamuSchedule {
    pub fn passes(&self) -> Vec<u32> {
        self.per_cluster.iter().map(|e| e.passes()).collect()
    }

    pub fn extras(&self) -> Vec<u32> {
        self.per_cluster
            .iter()
            .map(|e| if e.multi_round { e.extra_updates } else { 0 })
            .collect()
    }

    pub fn gates(&self) -> Vec<bool> {
        self.per_cluster.iter().map(|e| e.multi_round).collect()
    }
}

/// CAMU gating: clusters at or above the contribution threshold keep their
/// capacity-driven extra passes, everyone else drops to a single pass.
pub fn camu_schedule(contributions: &[f64], threshold: f64, capacities: &[u32]) -> CamuSchedule {
    assert_eq!(
        contributions.len(),
        capacities.len(),
        "one capacity per cluster"
    );
    CamuSchedule {
        per_cluster: contributions
            .iter()
            .zip(capacities)
            .enumerate()
            .map(|(cluster_id, (&theta, &cap))| CamuEntry {
                cluster_id,
                multi_round: theta >= threshold,
                extra_updates: cap,
            })
            .collect(),
    }
}

/// Leader-to-BS uplink description: per-cluster transmit power, channel
/// norm, and the shared noise scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UplinkModel {
    pub sigma_n: f64,
    pub per_cluster_power: Vec<f64>,
    pub per_cluster_channel_norm: Vec<f64>,
}

impl UplinkModel {
    pub fn noiseless(clusters: usize) -> Self {
        Self {
            sigma_n: 0.0,
            per_cluster_power: vec![1.0; clusters],
            per_cluster_channel_norm: vec![1.0; clusters],
        }
    }

    pub fn validate(&self, clusters: usize) -> Result<()> {
        if self.per_cluster_power.len() != clusters
            || self.per_cluster_channel_norm.len() != clusters
        {
            return Err(Error::ShapeMismatch(format!(
                "uplink model sized for {} clusters, expected {clusters}",
                self.per_cluster_power.len()
            )));
        }
        if self.sigma_n < 0.0 {
            return Err(Error::InvalidParameter("sigma_n must be nonnegative".into()));
        }
        if self
            .per_cluster_power
            .iter()
            .chain(&self.per_cluster_channel_norm)
            .any(|&v| v <= 0.0)
        {
            return Err(Error::InvalidParameter(
                "uplink powers and channel norms must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch gradient of the device objective at `model`.
///
/// `batch_fraction = 1` reproduces the exact mean gradient over the
/// device's samples.
pub fn local_gradient(
    spec: &ConvexModelSpec,
    model: &ModelParams,
    dataset: &LabeledDataset,
    partition: &DevicePartition,
    batch_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if partition.is_empty() {
        return Err(Error::InvalidPartition(format!(
            "device {} has no samples",
            partition.device_id
        )));
    }
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "batch_fraction {batch_fraction} outside (0, 1]"
        )));
    }
    let n = partition.len();
    let take = ((batch_fraction * n as f64).round() as usize).clamp(1, n);
    let batch: Vec<usize> = if take == n {
        partition.sample_indices.clone()
    } else {
        rand::seq::index::sample(rng, n, take)
            .into_iter()
            .map(|i| partition.sample_indices[i])
            .collect()
    };
    Ok(spec.gradient(&model.values, dataset, &batch))
}

/// `steps` sequential SGD steps `w <- w - lr * g` on one device.
pub fn local_update(
    spec: &ConvexModelSpec,
    model: &ModelParams,
    dataset: &LabeledDataset,
    partition: &DevicePartition,
    lr: f64,
    steps: u32,
    batch_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    if steps == 0 {
        return Err(Error::InvalidParameter("local update needs >= 1 step".into()));
    }
    if lr < 0.0 {
        return Err(Error::InvalidParameter("learning rate must be >= 0".into()));
    }
    let mut w = model.clone();
    for _ in 0..steps {
        let g = local_gradient(spec, &w, dataset, partition, batch_fraction, rng)?;
        w.axpy(-lr, &g)?;
    }
    Ok(w)
}

/// Weighted coordinate-wise average of member models (lossless).
pub fn intra_aggregate(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    weighted_average(models, weights, 1e-9)
}

/// Weighted average of (possibly noisy) cluster models at the BS.
pub fn global_aggregate(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    weighted_average(models, weights, 1e-9)
}

fn weighted_average(models: &[ModelParams], weights: &[f64], tol: f64) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::EmptyInput("models to aggregate"));
    }
    if models.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} models vs {} weights",
            models.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(format!(
            "aggregation weights sum to {total}"
        )));
    }
    let q = models[0].len();
    let mut out = ModelParams::zeros(q);
    for (m, &w) in models.iter().zip(weights) {
        if m.len() != q {
            return Err(Error::ShapeMismatch(format!(
                "model with {} parameters among {q}-parameter peers",
                m.len()
            )));
        }
        out.axpy(w, &m.values)?;
    }
    Ok(out)
}

/// Adds i.i.d. zero-mean Gaussian error per coordinate with standard
/// deviation `sigma_n / (power * h_norm)`. `sigma_n = 0` is the identity.
pub fn uplink_transmit(
    model: &ModelParams,
    power: f64,
    h_norm: f64,
    sigma_n: f64,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    assert!(power > 0.0 && h_norm > 0.0, "uplink needs positive power and channel norm");
    if sigma_n == 0.0 {
        return model.clone();
    }
    let std = sigma_n / (power * h_norm);
    let normal = Normal::new(0.0, std).expect("valid uplink noise std");
    let values = model
        .values
        .iter()
        .map(|&v| v + normal.sample(rng))
        .collect();
    ModelParams { values }
}

/// How member models merge inside a cluster when N_c > 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// Every member takes one step from the shared cluster model, then the
    /// cluster aggregates; repeated N_c times.
    #[default]
    PerPass,
    /// Members run N_c steps independently and aggregate once before uplink.
    EndOnly,
}

/// Everything `run_training` needs, assembled by the scenario layer.
pub struct TrainingSetup<'a> {
    pub spec: &'a ConvexModelSpec,
    pub dataset: &'a LabeledDataset,
    /// Indexed by device id.
    pub partitions: &'a [DevicePartition],
    pub assignment: &'a ClusterAssignment,
    /// G_c, one per cluster, summing to 1.
    pub inter_weights: Vec<f64>,
    /// G_{k,c} per cluster, each summing to 1, ordered like cluster members.
    pub intra_weights: Vec<Vec<f64>>,
    pub schedule: CamuSchedule,
    pub uplink: UplinkModel,
    pub lr: f64,
    pub batch_fraction: f64,
    pub rounds: usize,
    pub aggregation: AggregationMode,
    /// Measure delta / delta_c along the trajectory (adds full-batch
    /// gradient evaluations per round).
    pub track_dissimilarity: bool,
    /// Energy charged to every round, recorded in the history.
    pub energy_per_round_j: f64,
    pub master_seed: u64,
    pub initial: Option<ModelParams>,
}

/// Weighted global objective F(w) = sum_c G_c sum_k G_kc F_k(w).
pub fn global_loss(
    spec: &ConvexModelSpec,
    dataset: &LabeledDataset,
    partitions: &[DevicePartition],
    assignment: &ClusterAssignment,
    inter_weights: &[f64],
    intra_weights: &[Vec<f64>],
    w: &[f64],
) -> f64 {
    assignment
        .clusters
        .iter()
        .enumerate()
        .map(|(c, cluster)| {
            let inner: f64 = cluster
                .members
                .iter()
                .zip(&intra_weights[c])
                .map(|(&k, &gk)| gk * spec.loss(w, dataset, &partitions[k].sample_indices))
                .sum();
            inter_weights[c] * inner
        })
        .sum()
}

/// Runs T global rounds of CAMU-scheduled hierarchical training.
///
/// Per round, every cluster runs its scheduled number of local passes over
/// its members with intra-aggregation, leaders uplink through the noisy
/// channel, and the BS aggregates with the inter-cluster weights. Clusters
/// execute in index order so results are bit-stable.
pub fn run_training(setup: &TrainingSetup<'_>) -> Result<TrainingHistory> {
    let clusters = &setup.assignment.clusters;
    let c_count = clusters.len();
    if setup.inter_weights.len() != c_count || setup.intra_weights.len() != c_count {
        return Err(Error::ShapeMismatch(format!(
            "weights sized for {} clusters, expected {c_count}",
            setup.inter_weights.len()
        )));
    }
    if setup.schedule.per_cluster.len() != c_count {
        return Err(Error::ShapeMismatch(format!(
            "schedule covers {} clusters, expected {c_count}",
            setup.schedule.per_cluster.len()
        )));
    }
    setup.uplink.validate(c_count)?;
    let q = setup.spec.param_count();
    let passes = setup.schedule.passes();

    let mut w = setup
        .initial
        .clone()
        .unwrap_or_else(|| ModelParams::zeros(q));
    if w.len() != q {
        return Err(Error::ShapeMismatch(format!(
            "initial model has {} parameters, spec wants {q}",
            w.len()
        )));
    }

    let eval_indices = setup.dataset.all_indices();
    let mut records = Vec::with_capacity(setup.rounds + 1);
    let mut record = |round: usize, w: &ModelParams, energy: f64, records: &mut Vec<RoundRecord>| -> Result<()> {
        let loss = global_loss(
            setup.spec,
            setup.dataset,
            setup.partitions,
            setup.assignment,
            &setup.inter_weights,
            &setup.intra_weights,
            &w.values,
        );
        if !loss.is_finite() {
            return Err(Error::Divergence { round, loss });
        }
        let accuracy = setup.spec.accuracy(&w.values, setup.dataset, &eval_indices);
        records.push(RoundRecord {
            round,
            loss,
            accuracy,
            energy_j: energy,
            passes: passes.clone(),
        });
        Ok(())
    };
    record(0, &w, 0.0, &mut records)?;

    let mut delta_tracker = DissimTracker::new(c_count);
    let mut cumulative_energy = 0.0;

    for round in 1..=setup.rounds {
        if setup.track_dissimilarity {
            delta_tracker.observe(setup, &w)?;
        }

        let mut cluster_models = Vec::with_capacity(c_count);
        for (c, cluster) in clusters.iter().enumerate() {
            let n_passes = passes[c];
            let gk = &setup.intra_weights[c];
            let cluster_model = match setup.aggregation {
                AggregationMode::PerPass => {
                    let mut wc = w.clone();
                    for pass in 0..n_passes {
                        let locals: Vec<ModelParams> = cluster
                            .members
                            .iter()
                            .map(|&k| {
                                let mut stream = rng::stream(
                                    setup.master_seed,
                                    &[rng::stage::BATCH, round as u64, c as u64, k as u64, pass as u64],
                                );
                                local_update(
                                    setup.spec,
                                    &wc,
                                    setup.dataset,
                                    &setup.partitions[k],
                                    setup.lr,
                                    1,
                                    setup.batch_fraction,
                                    &mut stream,
                                )
                            })
                            .collect::<Result<_>>()?;
                        wc = intra_aggregate(&locals, gk)?;
                    }
                    wc
                }
                AggregationMode::EndOnly => {
                    let locals: Vec<ModelParams> = cluster
                        .members
                        .iter()
                        .map(|&k| {
                            let mut stream = rng::stream(
                                setup.master_seed,
                                &[rng::stage::BATCH, round as u64, c as u64, k as u64, 0],
                            );
                            local_update(
                                setup.spec,
                                &w,
                                setup.dataset,
                                &setup.partitions[k],
                                setup.lr,
                                n_passes,
                                setup.batch_fraction,
                                &mut stream,
                            )
                        })
                        .collect::<Result<_>>()?;
                    intra_aggregate(&locals, gk)?
                }
            };
            let mut uplink_rng =
                rng::stream(setup.master_seed, &[rng::stage::UPLINK, round as u64, c as u64]);
            cluster_models.push(uplink_transmit(
                &cluster_model,
                setup.uplink.per_cluster_power[c],
                setup.uplink.per_cluster_channel_norm[c],
                setup.uplink.sigma_n,
                &mut uplink_rng,
            ));
        }
        w = global_aggregate(&cluster_models, &setup.inter_weights)?;
        cumulative_energy += setup.energy_per_round_j;
        record(round, &w, setup.energy_per_round_j, &mut records)?;
    }

    Ok(TrainingHistory {
        master_seed: setup.master_seed,
        records,
        cumulative_energy_j: cumulative_energy,
        final_model: w,
        dissimilarity: if setup.track_dissimilarity {
            Some(delta_tracker.finish())
        } else {
            None
        },
    })
}

/// Running maxima of the dissimilarity ratios along a trajectory.
struct DissimTracker {
    inter: f64,
    intra: Vec<f64>,
    stationary: usize,
}

impl DissimTracker {
    fn new(clusters: usize) -> Self {
        Self {
            inter: 1.0,
            intra: vec![1.0; clusters],
            stationary: 0,
        }
    }

    fn observe(&mut self, setup: &TrainingSetup<'_>, w: &ModelParams) -> Result<()> {
        let q = setup.spec.param_count();
        let clusters = &setup.assignment.clusters;
        let mut cluster_grads: Vec<Vec<f64>> = Vec::with_capacity(clusters.len());
        let mut device_grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(clusters.len());

        for (c, cluster) in clusters.iter().enumerate() {
            let per_dev: Vec<Vec<f64>> = cluster
                .members
                .iter()
                .map(|&k| {
                    setup
                        .spec
                        .gradient(&w.values, setup.dataset, &setup.partitions[k].sample_indices)
                })
                .collect();
            let mut agg = vec![0.0; q];
            for (g, &gk) in per_dev.iter().zip(&setup.intra_weights[c]) {
                for (a, v) in agg.iter_mut().zip(g) {
                    *a += gk * v;
                }
            }
            cluster_grads.push(agg);
            device_grads.push(per_dev);
        }

        let mut global = vec![0.0; q];
        for (g, &gc) in cluster_grads.iter().zip(&setup.inter_weights) {
            for (a, v) in global.iter_mut().zip(g) {
                *a += gc * v;
            }
        }

        match dissimilarity_sample(&global, &cluster_grads, &setup.inter_weights) {
            Some(d) => self.inter = self.inter.max(d),
            None => {
                self.stationary += 1;
                return Ok(());
            }
        }
        for (c, per_dev) in device_grads.iter().enumerate() {
            if let Some(d) =
                dissimilarity_sample(&cluster_grads[c], per_dev, &setup.intra_weights[c])
            {
                self.intra[c] = self.intra[c].max(d);
            }
        }
        Ok(())
    }

    fn finish(self) -> DissimilarityEstimate {
        DissimilarityEstimate {
            inter: self.inter,
            intra: self.intra,
            stationary_rounds: self.stationary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::Cluster;
    use crate::data::partition_devices;
    use crate::data::PartitionScheme;

    fn toy_dataset() -> LabeledDataset {
        // two well-separated classes in 2-D
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let off = (i % 5) as f64 * 0.1;
            feats.push(vec![2.0 + off, 2.0 - off]);
            labels.push(0);
            feats.push(vec![-2.0 - off, -2.0 + off]);
            labels.push(1);
        }
        LabeledDataset::new(feats, labels, 2).unwrap()
    }

    fn singleton_assignment(k: usize) -> ClusterAssignment {
        ClusterAssignment {
            exemplar_of: (0..k).collect(),
            clusters: (0..k)
                .map(|i| Cluster {
                    leader: i,
                    members: vec![i],
                })
                .collect(),
            iterations: 0,
            converged: true,
        }
    }

    #[test]
    fn camu_schedule_threshold_boundary() {
        let s = camu_schedule(&[4000.0, 9000.0], 5000.0, &[3, 3]);
        assert_eq!(s.passes(), vec![1, 4]);
        // theta exactly at the threshold gates on
        let s = camu_schedule(&[5000.0], 5000.0, &[2]);
        assert_eq!(s.passes(), vec![3]);
        // zero capacity means single pass regardless
        let s = camu_schedule(&[9e9, 9e9], 1.0, &[0, 0]);
        assert_eq!(s.passes(), vec![1, 1]);
    }

    #[test]
    fn aggregate_arithmetic() {
        let a = ModelParams { values: vec![0.0; 4] };
        let b = ModelParams { values: vec![2.0; 4] };
        let mid = intra_aggregate(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(mid.values, vec![1.0; 4]);
        let first = intra_aggregate(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
        assert_eq!(first.values, a.values);
        let same = global_aggregate(&[b.clone(), b.clone()], &[0.3, 0.7]).unwrap();
        assert_eq!(same.values, b.values);
    }

    #[test]
    fn aggregate_shape_and_weight_errors() {
        let a = ModelParams::zeros(3);
        let b = ModelParams::zeros(4);
        assert!(intra_aggregate(&[a.clone(), b], &[0.5, 0.5]).is_err());
        let c = ModelParams::zeros(3);
        assert!(intra_aggregate(&[a, c], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn global_aggregate_weighted_value() {
        let ones = ModelParams { values: vec![1.0; 3] };
        let zeros = ModelParams::zeros(3);
        let g = global_aggregate(&[ones, zeros], &[0.7311, 0.2689]).unwrap();
        for v in g.values {
            assert!((v - 0.7311).abs() < 1e-12);
        }
    }

    #[test]
    fn uplink_noise_statistics() {
        let model = ModelParams::zeros(50_000);
        let mut stream = rng::stream(3, &[rng::stage::UPLINK, 0]);
        // std = sigma / (p h) = 0.01 / (0.5 * 0.02) = 1.0
        let noisy = uplink_transmit(&model, 0.5, 0.02, 0.01, &mut stream);
        let n = noisy.values.len() as f64;
        let mean: f64 = noisy.values.iter().sum::<f64>() / n;
        let var: f64 = noisy.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!((std - 1.0).abs() < 0.02, "sample std {std}");
        assert!(mean.abs() < 0.02, "sample mean {mean}");
    }

    #[test]
    fn uplink_noiseless_is_identity() {
        let model = ModelParams { values: vec![1.5, -2.0] };
        let mut stream = rng::stream(3, &[rng::stage::UPLINK, 1]);
        let out = uplink_transmit(&model, 0.5, 0.02, 0.0, &mut stream);
        assert_eq!(out.values, model.values);
    }

    #[test]
    fn uplink_noise_shrinks_with_power() {
        let model = ModelParams::zeros(10_000);
        let spread = |p: f64| {
            let mut stream = rng::stream(3, &[rng::stage::UPLINK, 2]);
            let noisy = uplink_transmit(&model, p, 1.0, 0.01, &mut stream);
            noisy.values.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        assert!(spread(10.0) < spread(0.1));
    }

    #[test]
    fn local_gradient_full_batch_matches_mean() {
        let ds = toy_dataset();
        let spec = ConvexModelSpec::new(2, 2, 0.01);
        let part = DevicePartition::new(0, ds.all_indices()).unwrap();
        let w = ModelParams::zeros(spec.param_count());
        let mut stream = rng::stream(1, &[rng::stage::BATCH, 0]);
        let g = local_gradient(&spec, &w, &ds, &part, 1.0, &mut stream).unwrap();
        let direct = spec.gradient(&w.values, &ds, &part.sample_indices);
        assert_eq!(g, direct);
    }

    #[test]
    fn quadratic_standin_single_step() {
        // F(w) = 1/2 w^2 stand-in: one step of w <- w - lr * w from w0 = 1
        let mut w = ModelParams { values: vec![1.0] };
        let g = w.values.clone();
        w.axpy(-0.1, &g).unwrap();
        assert!((w.values[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn local_update_zero_lr_is_identity() {
        let ds = toy_dataset();
        let spec = ConvexModelSpec::new(2, 2, 0.01);
        let part = DevicePartition::new(0, ds.all_indices()).unwrap();
        let w = ModelParams { values: vec![0.3; spec.param_count()] };
        let mut stream = rng::stream(1, &[rng::stage::BATCH, 1]);
        let out = local_update(&spec, &w, &ds, &part, 0.0, 1, 0.5, &mut stream).unwrap();
        assert_eq!(out.values, w.values);
        let mut stream = rng::stream(1, &[rng::stage::BATCH, 1]);
        assert!(local_update(&spec, &w, &ds, &part, 0.1, 0, 0.5, &mut stream).is_err());
    }

    #[test]
    fn local_update_deterministic() {
        let ds = toy_dataset();
        let spec = ConvexModelSpec::new(2, 2, 0.01);
        let part = DevicePartition::new(0, ds.all_indices()).unwrap();
        let w = ModelParams::zeros(spec.param_count());
        let run = || {
            let mut stream = rng::stream(9, &[rng::stage::BATCH, 2]);
            local_update(&spec, &w, &ds, &part, 0.05, 5, 0.2, &mut stream).unwrap()
        };
        assert_eq!(run().values, run().values);
    }

    fn simple_setup_history(seed: u64, sigma: f64, rounds: usize) -> TrainingHistory {
        let ds = toy_dataset();
        let spec = ConvexModelSpec::new(2, 2, 0.01);
        let partitions = partition_devices(&ds, PartitionScheme::Iid, 1, seed).unwrap();
        let assignment = singleton_assignment(1);
        let mut uplink = UplinkModel::noiseless(1);
        uplink.sigma_n = sigma;
        let setup = TrainingSetup {
            spec: &spec,
            dataset: &ds,
            partitions: &partitions,
            assignment: &assignment,
            inter_weights: vec![1.0],
            intra_weights: vec![vec![1.0]],
            schedule: camu_schedule(&[1.0], 2.0, &[0]),
            uplink,
            lr: 0.1,
            batch_fraction: 1.0,
            rounds,
            aggregation: AggregationMode::PerPass,
            track_dissimilarity: false,
            energy_per_round_j: 2.5,
            master_seed: seed,
            initial: None,
        };
        run_training(&setup).unwrap()
    }

    #[test]
    fn degenerate_hierarchy_is_plain_sgd() {
        // C = 1, K = 1, N = 1, sigma = 0: must equal centralized full-batch SGD
        let ds = toy_dataset();
        let spec = ConvexModelSpec::new(2, 2, 0.01);
        let hist = simple_setup_history(4, 0.0, 10);

        let mut w = ModelParams::zeros(spec.param_count());
        let idx = ds.all_indices();
        for _ in 0..10 {
            let g = spec.gradient(&w.values, &ds, &idx);
            w.axpy(-0.1, &g).unwrap();
        }
        for (a, b) in hist.final_model.values.iter().zip(&w.values) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(hist.records.len(), 11);
        assert!((hist.cumulative_energy_j - 25.0).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let a = simple_setup_history(11, 0.05, 6);
        let b = simple_setup_history(11, 0.05, 6);
        assert_eq!(a.final_model.values, b.final_model.values);
        assert_eq!(a.to_csv(), b.to_csv());
        let c = simple_setup_history(12, 0.05, 6);
        assert_ne!(a.final_model.values, c.final_model.values);
    }

    #[test]
    fn full_batch_noiseless_loss_monotone() {
        let hist = simple_setup_history(5, 0.0, 30);
        for pair in hist.records.windows(2) {
            assert!(
                pair[1].loss <= pair[0].loss + 1e-12,
                "loss rose from {} to {}",
                pair[0].loss,
                pair[1].loss
            );
        }
    }
}
