//! Dual-segment device clustering: affinity propagation on communication
//! quality, refined per primary cluster by data-distribution similarity.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::channel::{Geometry, SnrMatrix};
use crate::data::InfoMatrix;
use crate::error::{Error, Result};

mod ap;

pub use ap::{ap_cluster, ApOptions, ApState};

/// Square similarity matrix; the diagonal carries preference values.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    s: Array2<f64>,
}

impl SimilarityMatrix {
    pub fn new(s: Array2<f64>) -> Result<Self> {
        if s.nrows() != s.ncols() || s.nrows() == 0 {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix must be square and nonempty, got {}x{}",
                s.nrows(),
                s.ncols()
            )));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "similarity matrix has non-finite entries".into(),
            ));
        }
        Ok(Self { s })
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.s
    }

    /// Median of the off-diagonal entries (the standard AP preference
    /// heuristic). Returns 0 for a 1x1 matrix.
    pub fn median_off_diagonal(&self) -> f64 {
        let n = self.n();
        let mut vals: Vec<f64> = (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
            .map(|(i, k)| self.s[(i, k)])
            .collect();
        if vals.is_empty() {
            return 0.0;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = vals.len() / 2;
        if vals.len() % 2 == 1 {
            vals[mid]
        } else {
            0.5 * (vals[mid - 1] + vals[mid])
        }
    }
}

/// Diagonal preference specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Median of off-diagonal similarities.
    #[default]
    Median,
    Value(f64),
    PerPoint(Vec<f64>),
}

impl Preference {
    fn apply(&self, s: &mut Array2<f64>, median: f64) -> Result<()> {
        let n = s.nrows();
        match self {
            Preference::Median => {
                for i in 0..n {
                    s[(i, i)] = median;
                }
            }
            Preference::Value(v) => {
                for i in 0..n {
                    s[(i, i)] = *v;
                }
            }
            Preference::PerPoint(values) => {
                if values.len() != n {
                    return Err(Error::ShapeMismatch(format!(
                        "{} preference values for {n} devices",
                        values.len()
                    )));
                }
                for i in 0..n {
                    s[(i, i)] = values[i];
                }
            }
        }
        Ok(())
    }
}

/// Off-diagonal form of the communication similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CommSimilarityForm {
    /// s(i,k) = -gamma_ik^2 on the pairwise SNR (the stated construction).
    Literal,
    /// s(i,k) = -(gamma_i - gamma_k)^2 on the device-to-BS SNRs, grouping
    /// devices whose uplink quality is alike.
    #[default]
    SnrDifference,
}

/// Sign convention for the data-distribution similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSimilarityForm {
    /// s(i,k) = -(sum_l (Xi_il - Xi_kl)^2)^2; larger similarity = more alike.
    #[default]
    Negated,
    /// The literal nonnegative expression (inverts cluster semantics;
    /// retained for comparison).
    Literal,
}

/// Communication-quality similarity from an SNR matrix.
pub fn comm_similarity(
    gamma: &SnrMatrix,
    preference: &Preference,
    form: CommSimilarityForm,
) -> Result<SimilarityMatrix> {
    let n = gamma.device_count();
    let mut s = Array2::zeros((n, n));
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            s[(i, k)] = match form {
                CommSimilarityForm::Literal => {
                    let g = gamma.gamma[(i, k)];
                    -(g * g)
                }
                CommSimilarityForm::SnrDifference => {
                    let d = gamma.bs_snr(i) - gamma.bs_snr(k);
                    -(d * d)
                }
            };
        }
    }
    let sim = SimilarityMatrix::new(s)?;
    let median = sim.median_off_diagonal();
    let mut s = sim.s;
    preference.apply(&mut s, median)?;
    SimilarityMatrix::new(s)
}

/// Data-distribution similarity over a subset of devices, from rows of the
/// label information matrix.
pub fn data_similarity(
    xi: &InfoMatrix,
    subset: &[usize],
    preference: &Preference,
    form: DataSimilarityForm,
) -> Result<SimilarityMatrix> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("device subset for data similarity"));
    }
    let n = subset.len();
    let mut s = Array2::zeros((n, n));
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (i, k) = (subset[a], subset[b]);
            let dist_sq: f64 = xi
                .row(i)
                .iter()
                .zip(xi.row(k).iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            let v = dist_sq * dist_sq;
            s[(a, b)] = match form {
                DataSimilarityForm::Negated => -v,
                DataSimilarityForm::Literal => v,
            };
        }
    }
    let sim = SimilarityMatrix::new(s)?;
    let median = sim.median_off_diagonal();
    let mut s = sim.s;
    preference.apply(&mut s, median)?;
    SimilarityMatrix::new(s)
}

/// One cluster: a leader (exemplar) and its members, leader included.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Cluster {
    pub leader: usize,
    pub members: Vec<usize>,
}

/// Device-to-cluster assignment produced by the clustering pipeline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct ClusterAssignment {
    /// exemplar_of[i] = leader index of device i's cluster.
    pub exemplar_of: Vec<usize>,
    pub clusters: Vec<Cluster>,
    /// Total message-passing iterations spent (exemplar trace length).
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterAssignment {
    pub fn device_count(&self) -> usize {
        self.exemplar_of.len()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    /// Index into `clusters` for the cluster containing `device`.
    pub fn cluster_of(&self, device: usize) -> usize {
        let leader = self.exemplar_of[device];
        self.clusters
            .iter()
            .position(|c| c.leader == leader)
            .expect("leader present in cluster list")
    }

    /// Every device appears in exactly one cluster and leaders are members
    /// of their own clusters.
    pub fn validate(&self) -> Result<()> {
        let n = self.device_count();
        let mut seen = vec![false; n];
        for c in &self.clusters {
            if !c.members.contains(&c.leader) {
                return Err(Error::InvalidParameter(format!(
                    "leader {} outside its own cluster",
                    c.leader
                )));
            }
            for &m in &c.members {
                if m >= n || seen[m] {
                    return Err(Error::InvalidParameter(format!(
                        "device {m} missing or assigned twice"
                    )));
                }
                seen[m] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidParameter("unassigned device".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Configuration for the dual-segment clustering pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringConfig {
    pub damping: f64,
    pub max_iter: usize,
    pub stable_window: usize,
    pub comm_form: CommSimilarityForm,
    pub comm_preference: Preference,
    pub data_form: DataSimilarityForm,
    pub data_preference: Preference,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 500,
            stable_window: 10,
            comm_form: CommSimilarityForm::default(),
            comm_preference: Preference::Median,
            data_form: DataSimilarityForm::default(),
            data_preference: Preference::Median,
        }
    }
}

impl ClusteringConfig {
    fn ap_options(&self) -> ApOptions {
        ApOptions {
            damping: self.damping,
            max_iter: self.max_iter,
            stable_window: self.stable_window,
        }
    }
}

/// Two-stage clustering: primary AP on communication similarity, then a
/// secondary AP on data similarity inside every primary cluster of size
/// two or more. Secondary exemplars become the final leaders.
pub fn dual_segment_cluster(
    gamma: &SnrMatrix,
    xi: &InfoMatrix,
    cfg: &ClusteringConfig,
) -> Result<ClusterAssignment> {
    if gamma.device_count() != xi.device_count() {
        return Err(Error::ShapeMismatch(format!(
            "snr matrix covers {} devices, info matrix {}",
            gamma.device_count(),
            xi.device_count()
        )));
    }
    let opts = cfg.ap_options();
    let comm = comm_similarity(gamma, &cfg.comm_preference, cfg.comm_form)?;
    let primary = ap_cluster(&comm, &opts)?;

    let n = gamma.device_count();
    let mut exemplar_of = vec![0usize; n];
    let mut iterations = primary.iterations;
    let mut converged = primary.converged;

    for pc in &primary.clusters {
        if pc.members.len() == 1 {
            exemplar_of[pc.members[0]] = pc.members[0];
            continue;
        }
        let sd = data_similarity(xi, &pc.members, &cfg.data_preference, cfg.data_form)?;
        let secondary = ap_cluster(&sd, &opts)?;
        iterations += secondary.iterations;
        converged &= secondary.converged;
        for (local, &global) in pc.members.iter().enumerate() {
            exemplar_of[global] = pc.members[secondary.exemplar_of[local]];
        }
    }

    let assignment = ap::build_assignment(exemplar_of, iterations, converged);
    assignment.validate()?;
    Ok(assignment)
}

/// Attaches each unassigned device to the cluster whose leader is nearest
/// in Euclidean distance; ties break toward the lower leader index.
pub fn assign_stragglers(
    unassigned: &[usize],
    assignment: &ClusterAssignment,
    geometry: &Geometry,
) -> Result<ClusterAssignment> {
    if assignment.clusters.is_empty() {
        return Err(Error::EmptyInput("clusters for straggler assignment"));
    }
    let device_count = geometry.device_count();
    let mut exemplar_of = vec![usize::MAX; device_count];
    for (i, &e) in assignment.exemplar_of.iter().enumerate() {
        exemplar_of[i] = e;
    }
    let mut leaders: Vec<usize> = assignment.clusters.iter().map(|c| c.leader).collect();
    leaders.sort_unstable();

    for &dev in unassigned {
        let mut best = leaders[0];
        let mut best_d = geometry.distance_between(dev, leaders[0]);
        for &l in &leaders[1..] {
            let d = geometry.distance_between(dev, l);
            if d < best_d {
                best_d = d;
                best = l;
            }
        }
        exemplar_of[dev] = best;
    }

    if exemplar_of.iter().any(|&e| e == usize::MAX) {
        return Err(Error::InvalidParameter(
            "device neither clustered nor listed as straggler".into(),
        ));
    }
    let out = ap::build_assignment(exemplar_of, assignment.iterations, assignment.converged);
    out.validate()?;
    Ok(out)
}
