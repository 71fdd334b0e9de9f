//! Affinity propagation message passing.

use ndarray::Array2;

use crate::error::{Error, Result};

use super::{Cluster, ClusterAssignment, SimilarityMatrix};

/// Iteration controls for affinity propagation.
#[derive(Debug, Clone, Copy)]
pub struct ApOptions {
    /// Message damping in [0.5, 1); the raw updates oscillate without it.
    pub damping: f64,
    pub max_iter: usize,
    /// Consecutive iterations with unchanged cluster boundaries required
    /// to declare convergence.
    pub stable_window: usize,
}

impl Default for ApOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 500,
            stable_window: 10,
        }
    }
}

impl ApOptions {
    fn validate(&self) -> Result<()> {
        if !(0.5..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!(
                "damping {} outside [0.5, 1)",
                self.damping
            )));
        }
        if self.stable_window == 0 || self.max_iter < self.stable_window {
            return Err(Error::InvalidParameter(
                "require max_iter >= stable_window >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Responsibility/availability state of a running AP instance.
#[derive(Debug, Clone)]
pub struct ApState {
    pub responsibility: Array2<f64>,
    pub availability: Array2<f64>,
    pub iteration: usize,
    pub stable_rounds: usize,
}

impl ApState {
    fn new(n: usize) -> Self {
        Self {
            responsibility: Array2::zeros((n, n)),
            availability: Array2::zeros((n, n)),
            iteration: 0,
            stable_rounds: 0,
        }
    }

    /// One damped responsibility + availability sweep.
    fn step(&mut self, s: &Array2<f64>, damping: f64) {
        let n = s.nrows();
        let keep = damping;
        let fresh = 1.0 - damping;

        // responsibility: R(i,k) = S(i,k) - max_{k' != k} [S(i,k') + A(i,k')]
        for i in 0..n {
            let mut max1 = f64::NEG_INFINITY;
            let mut max2 = f64::NEG_INFINITY;
            let mut arg1 = 0;
            for k in 0..n {
                let v = s[(i, k)] + self.availability[(i, k)];
                if v > max1 {
                    max2 = max1;
                    max1 = v;
                    arg1 = k;
                } else if v > max2 {
                    max2 = v;
                }
            }
            for k in 0..n {
                let competing = if k == arg1 { max2 } else { max1 };
                let r_new = s[(i, k)] - competing;
                self.responsibility[(i, k)] =
                    keep * self.responsibility[(i, k)] + fresh * r_new;
            }
        }

        // availability: A(i,k) = min(0, R(k,k) + sum_{i' not in {i,k}} max(0, R(i',k)))
        //               A(k,k) = sum_{i' != k} max(0, R(i',k))
        for k in 0..n {
            let mut pos_sum = 0.0;
            for i in 0..n {
                if i != k {
                    pos_sum += self.responsibility[(i, k)].max(0.0);
                }
            }
            for i in 0..n {
                let a_new = if i == k {
                    pos_sum
                } else {
                    let without_i = pos_sum - self.responsibility[(i, k)].max(0.0);
                    (self.responsibility[(k, k)] + without_i).min(0.0)
                };
                self.availability[(i, k)] = keep * self.availability[(i, k)] + fresh * a_new;
            }
        }
        self.iteration += 1;
    }

    /// Exemplar indicator per device: the row maximum of C = R + A lies on
    /// the diagonal.
    fn exemplars(&self) -> Vec<bool> {
        let n = self.responsibility.nrows();
        (0..n)
            .map(|i| {
                let diag = self.responsibility[(i, i)] + self.availability[(i, i)];
                (0..n).all(|k| {
                    k == i || diag >= self.responsibility[(i, k)] + self.availability[(i, k)]
                })
            })
            .collect()
    }
}

/// Runs affinity propagation on a similarity matrix.
///
/// Iterates damped responsibility/availability updates until the cluster
/// boundaries are unchanged for `stable_window` consecutive rounds or
/// `max_iter` is reached. If no exemplar emerges, the device with the
/// highest preference becomes the sole exemplar.
pub fn ap_cluster(s: &SimilarityMatrix, opts: &ApOptions) -> Result<ClusterAssignment> {
    opts.validate()?;
    let n = s.n();
    if n == 1 {
        return Ok(ClusterAssignment {
            exemplar_of: vec![0],
            clusters: vec![Cluster {
                leader: 0,
                members: vec![0],
            }],
            iterations: 0,
            converged: true,
        });
    }

    let mut state = ApState::new(n);
    let mut prev_assignment: Option<Vec<usize>> = None;
    let mut converged = false;

    while state.iteration < opts.max_iter {
        state.step(s.matrix(), opts.damping);
        let assignment = assign(s, &state.exemplars());
        if prev_assignment.as_ref() == Some(&assignment) {
            state.stable_rounds += 1;
            if state.stable_rounds >= opts.stable_window {
                converged = true;
                break;
            }
        } else {
            state.stable_rounds = 0;
        }
        prev_assignment = Some(assignment);
    }

    let exemplar_of = assign(s, &state.exemplars());
    Ok(build_assignment(exemplar_of, state.iteration, converged))
}

/// Maps every device to an exemplar. Non-exemplars attach to the exemplar
/// with the highest similarity; ties break toward the lower index.
fn assign(s: &SimilarityMatrix, is_exemplar: &[bool]) -> Vec<usize> {
    let n = s.n();
    let exemplars: Vec<usize> = (0..n).filter(|&i| is_exemplar[i]).collect();
    if exemplars.is_empty() {
        // degenerate fallback: highest preference wins
        let leader = (0..n)
            .max_by(|&a, &b| {
                s.matrix()[(a, a)]
                    .partial_cmp(&s.matrix()[(b, b)])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.cmp(&a)) // prefer the lower index on ties
            })
            .unwrap();
        return vec![leader; n];
    }
    (0..n)
        .map(|i| {
            if is_exemplar[i] {
                return i;
            }
            *exemplars
                .iter()
                .max_by(|&&a, &&b| {
                    s.matrix()[(i, a)]
                        .partial_cmp(&s.matrix()[(i, b)])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .unwrap()
        })
        .collect()
}

pub(super) fn build_assignment(
    exemplar_of: Vec<usize>,
    iterations: usize,
    converged: bool,
) -> ClusterAssignment {
    let mut leaders: Vec<usize> = exemplar_of.clone();
    leaders.sort_unstable();
    leaders.dedup();
    let clusters = leaders
        .into_iter()
        .map(|leader| Cluster {
            leader,
            members: (0..exemplar_of.len())
                .filter(|&i| exemplar_of[i] == leader)
                .collect(),
        })
        .collect();
    ClusterAssignment {
        exemplar_of,
        clusters,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn single_point_is_its_own_leader() {
        let s = SimilarityMatrix::new(array![[0.0]]).unwrap();
        let a = ap_cluster(&s, &ApOptions::default()).unwrap();
        assert_eq!(a.clusters.len(), 1);
        assert_eq!(a.clusters[0].leader, 0);
        assert_eq!(a.exemplar_of, vec![0]);
    }

    #[test]
    fn identical_points_collapse_to_one_cluster() {
        // two identical points: zero mutual distance, negative preference
        let s = SimilarityMatrix::new(array![[-5.0, 0.0], [0.0, -5.0]]).unwrap();
        let a = ap_cluster(&s, &ApOptions::default()).unwrap();
        assert_eq!(a.clusters.len(), 1);
        assert!(a.converged);
    }

    #[test]
    fn dominant_preferences_make_singletons() {
        let n = 4;
        let mut m = Array2::from_elem((n, n), -1.0);
        for i in 0..n {
            m[(i, i)] = 100.0;
        }
        let s = SimilarityMatrix::new(m).unwrap();
        let a = ap_cluster(&s, &ApOptions::default()).unwrap();
        assert_eq!(a.clusters.len(), n);
        for c in &a.clusters {
            assert_eq!(c.members, vec![c.leader]);
        }
    }

    #[test]
    fn two_obvious_groups() {
        // points 0,1 near each other; 2,3 near each other; groups far apart
        let near = -1.0;
        let far = -100.0;
        let p = -4.0;
        let m = array![
            [p, near, far, far],
            [near, p, far, far],
            [far, far, p, near],
            [far, far, near, p]
        ];
        let s = SimilarityMatrix::new(m).unwrap();
        let a = ap_cluster(&s, &ApOptions::default()).unwrap();
        assert_eq!(a.clusters.len(), 2);
        assert_eq!(a.exemplar_of[0], a.exemplar_of[1]);
        assert_eq!(a.exemplar_of[2], a.exemplar_of[3]);
        assert_ne!(a.exemplar_of[0], a.exemplar_of[2]);
    }

    #[test]
    fn shift_invariance_of_all_similarities() {
        // adding one constant to every entry (preferences included) leaves
        // the message trajectory, and hence the clustering, unchanged
        let base = array![
            [-2.0, -1.0, -9.0, -7.5],
            [-1.0, -2.0, -6.0, -8.0],
            [-9.0, -6.0, -2.0, -0.5],
            [-7.5, -8.0, -0.5, -2.0]
        ];
        let shifted = base.mapv(|v| v + 13.25);
        let a = ap_cluster(&SimilarityMatrix::new(base).unwrap(), &ApOptions::default()).unwrap();
        let b = ap_cluster(
            &SimilarityMatrix::new(shifted).unwrap(),
            &ApOptions::default(),
        )
        .unwrap();
        assert_eq!(a.exemplar_of, b.exemplar_of);
    }

    #[test]
    fn rejects_bad_options() {
        let s = SimilarityMatrix::new(array![[0.0, -1.0], [-1.0, 0.0]]).unwrap();
        let bad = ApOptions {
            damping: 0.2,
            ..Default::default()
        };
        assert!(ap_cluster(&s, &bad).is_err());
        let bad = ApOptions {
            max_iter: 3,
            stable_window: 10,
            ..Default::default()
        };
        assert!(ap_cluster(&s, &bad).is_err());
    }
}
