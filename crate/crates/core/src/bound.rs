//! Numerical form of the convergence analysis: the per-round contraction
//! factor A, the learning-rate condition, the steady-state GAP, per-round
//! bound curves, and plug-in estimation of the constants (mu, L, delta)
//! from data and trajectories.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::ConvexModelSpec;
use crate::rng;

use rand::Rng;

/// Gradient norms below this are treated as stationary points and excluded
/// from dissimilarity estimation.
pub const STATIONARY_TOL: f64 = 1e-12;

/// Every constant the bound needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceParams {
    /// Strong-convexity modulus.
    pub mu: f64,
    /// Smoothness constant.
    pub lipschitz: f64,
    /// Inter-cluster dissimilarity (>= 1).
    pub delta: f64,
    /// Intra-cluster dissimilarity per cluster (>= 1).
    pub delta_c: Vec<f64>,
    /// Learning rate.
    pub lr: f64,
    /// Inter-cluster weights G_c, summing to 1.
    pub gc: Vec<f64>,
    /// Intra-cluster weights G_kc per cluster, each summing to 1.
    pub gkc: Vec<Vec<f64>>,
    /// Local passes N_c per cluster.
    pub n_per_cluster: Vec<u32>,
    /// Leader transmit powers p_c.
    pub powers: Vec<f64>,
    /// Leader channel norms ||h_c||.
    pub h_norms: Vec<f64>,
    /// Uplink noise scale.
    pub sigma_n: f64,
}

impl ConvergenceParams {
    pub fn cluster_count(&self) -> usize {
        self.gc.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.cluster_count();
        if self.delta_c.len() != c
            || self.gkc.len() != c
            || self.n_per_cluster.len() != c
            || self.powers.len() != c
            || self.h_norms.len() != c
        {
            return Err(Error::ShapeMismatch(format!(
                "convergence params inconsistent across {c} clusters"
            )));
        }
        if self.mu <= 0.0 || self.lipschitz <= 0.0 || self.mu > self.lipschitz + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "require 0 < mu <= L, got mu={} L={}",
                self.mu, self.lipschitz
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::InvalidParameter("learning rate must be positive".into()));
        }
        if self.delta < 1.0 || self.delta_c.iter().any(|&d| d < 1.0) {
            return Err(Error::InvalidParameter("dissimilarity must be >= 1".into()));
        }
        let sum_gc: f64 = self.gc.iter().sum();
        if (sum_gc - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("G_c sums to {sum_gc}")));
        }
        for (i, g) in self.gkc.iter().enumerate() {
            let s: f64 = g.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParameter(format!(
                    "G_kc for cluster {i} sums to {s}"
                )));
            }
        }
        if self.sigma_n < 0.0 {
            return Err(Error::InvalidParameter("sigma_n must be >= 0".into()));
        }
        if self.powers.iter().chain(&self.h_norms).any(|&v| v <= 0.0) {
            return Err(Error::InvalidParameter(
                "powers and channel norms must be positive".into(),
            ));
        }
        Ok(())
    }

    fn bracket(&self, c: usize) -> f64 {
        let gk_sq: f64 = self.gkc[c].iter().map(|g| g * g).sum();
        let gk_sum: f64 = self.gkc[c].iter().sum();
        let quad = self.mu
            * self.lipschitz
            * self.lr
            * self.lr
            * self.delta
            * self.delta
            * self.gc[c]
            * self.gc[c]
            * self.delta_c[c]
            * self.delta_c[c]
            * gk_sq;
        let lin = 2.0 * self.mu * self.lr * self.delta * self.gc[c] * self.delta_c[c] * gk_sum;
        quad - lin
    }
}

/// Per-round contraction factor
/// `A = 1 + sum_c N_c (mu L lr^2 d^2 G_c^2 d_c^2 sum G_kc^2
///                     - 2 mu lr d G_c d_c sum G_kc)`.
pub fn a_factor(p: &ConvergenceParams) -> f64 {
    1.0 + (0..p.cluster_count())
        .map(|c| p.n_per_cluster[c] as f64 * p.bracket(c))
        .sum::<f64>()
}

/// The two-part split of A - 1: clusters gated to one pass versus clusters
/// granted multiple passes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AFactorSplit {
    pub single_round_part: f64,
    pub multi_round_part: f64,
}

pub fn a_factor_split(p: &ConvergenceParams, multi_round: &[bool]) -> Result<AFactorSplit> {
    if multi_round.len() != p.cluster_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} gates for {} clusters",
            multi_round.len(),
            p.cluster_count()
        )));
    }
    let mut single = 0.0;
    let mut multi = 0.0;
    for c in 0..p.cluster_count() {
        let term = p.n_per_cluster[c] as f64 * p.bracket(c);
        if multi_round[c] {
            multi += term;
        } else {
            single += term;
        }
    }
    Ok(AFactorSplit {
        single_round_part: single,
        multi_round_part: multi,
    })
}

/// Largest admissible learning rate: the minimum over clusters of
/// `2 sum G_kc / (L delta G_c delta_c sum G_kc^2)`.
pub fn lr_max(p: &ConvergenceParams) -> f64 {
    (0..p.cluster_count())
        .map(|c| {
            let gk_sq: f64 = p.gkc[c].iter().map(|g| g * g).sum();
            let gk_sum: f64 = p.gkc[c].iter().sum();
            2.0 * gk_sum / (p.lipschitz * p.delta * p.gc[c] * p.delta_c[c] * gk_sq)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Uplink noise quotient `sum_c G_c^2 sigma_n^2 / (p_c^2 ||h_c||^2)`.
pub fn noise_sum(p: &ConvergenceParams) -> f64 {
    (0..p.cluster_count())
        .map(|c| {
            let gc = p.gc[c];
            gc * gc * p.sigma_n * p.sigma_n / (p.powers[c] * p.powers[c] * p.h_norms[c] * p.h_norms[c])
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Finite(u32),
    Infinite,
}

/// Residual-error term `GAP(T) = (1 - A^T) / (1 - A) * noise_sum`.
///
/// The infinite horizon requires |A| < 1 and returns
/// `noise_sum / (1 - A)`; otherwise the bound does not converge.
pub fn gap(p: &ConvergenceParams, horizon: Horizon) -> Result<f64> {
    let a = a_factor(p);
    let noise = noise_sum(p);
    match horizon {
        Horizon::Finite(t) => Ok(geometric_sum(a, t) * noise),
        Horizon::Infinite => {
            if a >= 1.0 || a <= -1.0 {
                Err(Error::NonConvergent { a_factor: a })
            } else {
                Ok(noise / (1.0 - a))
            }
        }
    }
}

/// `1 + A + ... + A^(T-1)`, stable at A = 1.
fn geometric_sum(a: f64, t: u32) -> f64 {
    if (1.0 - a).abs() < 1e-12 {
        t as f64
    } else {
        (1.0 - a.powi(t as i32)) / (1.0 - a)
    }
}

/// Bound trajectory `B(t) = A^t F0 + (1 - A^t)/(1 - A) * noise_sum` for
/// t = 0..=T (entry 0 is `f0_gap` itself).
pub fn bound_curve(p: &ConvergenceParams, f0_gap: f64, t_max: u32) -> Vec<f64> {
    let a = a_factor(p);
    let noise = noise_sum(p);
    (0..=t_max)
        .map(|t| a.powi(t as i32) * f0_gap + geometric_sum(a, t) * noise)
        .collect()
}

/// Per-cluster intra-convergence condition:
/// `delta G_c < 1  AND  1 < 2 lr d_c sum G_kc / (L lr^2 d_c^2 sum G_kc^2)`.
pub fn corollary_check(p: &ConvergenceParams) -> Vec<bool> {
    (0..p.cluster_count())
        .map(|c| {
            let gk_sq: f64 = p.gkc[c].iter().map(|g| g * g).sum();
            let gk_sum: f64 = p.gkc[c].iter().sum();
            let lhs = p.delta * p.gc[c] < 1.0;
            let ratio = 2.0 * p.lr * p.delta_c[c] * gk_sum
                / (p.lipschitz * p.lr * p.lr * p.delta_c[c] * p.delta_c[c] * gk_sq);
            lhs && 1.0 < ratio
        })
        .collect()
}

/// Everything a caller needs to judge a configuration at once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub a_factor: f64,
    /// Steady-state gap; present only when the bound converges.
    pub gap_infinite: Option<f64>,
    /// Gap after `horizon` rounds; present only when the bound converges.
    pub gap_at_t: Option<f64>,
    pub horizon: u32,
    pub lr_max: f64,
    /// 0 < A < 1.
    pub converges: bool,
    /// A <= 0: the step size outruns the regime the analysis covers.
    pub over_aggressive: bool,
    pub corollary_ok: bool,
    pub corollary_per_cluster: Vec<bool>,
    pub noise_sum: f64,
    /// The appendix-form gap carrying the extra L/2 factor, for comparison.
    pub gap_infinite_half_l: Option<f64>,
    pub split: Option<AFactorSplit>,
}

pub fn build_report(
    p: &ConvergenceParams,
    horizon: u32,
    multi_round: Option<&[bool]>,
) -> Result<BoundReport> {
    p.validate()?;
    let a = a_factor(p);
    let converges = a > 0.0 && a < 1.0;
    let convergent_series = a.abs() < 1.0;
    let corollary = corollary_check(p);
    let split = match multi_round {
        Some(gates) => Some(a_factor_split(p, gates)?),
        None => None,
    };
    Ok(BoundReport {
        a_factor: a,
        gap_infinite: convergent_series.then(|| gap(p, Horizon::Infinite).expect("|A| < 1")),
        gap_at_t: convergent_series.then(|| gap(p, Horizon::Finite(horizon)).expect("finite gap")),
        horizon,
        lr_max: lr_max(p),
        converges,
        over_aggressive: a <= 0.0,
        corollary_ok: corollary.iter().all(|&b| b),
        corollary_per_cluster: corollary,
        noise_sum: noise_sum(p),
        gap_infinite_half_l: convergent_series
            .then(|| p.lipschitz / 2.0 * noise_sum(p) / (1.0 - a)),
        split,
    })
}

/// Plug-in (mu, L) for the softmax-linear objective: mu = l2_reg and
/// L = l2_reg + lambda_max((1/(2n)) X^T X), the softmax curvature cap of
/// 1/2 folded into the matrix. The eigenvalue comes from matrix-free power
/// iteration to relative tolerance 1e-6.
pub fn estimate_mu_l(spec: &ConvexModelSpec, dataset: &LabeledDataset) -> (f64, f64) {
    let n = dataset.len();
    let d = spec.feature_dim;
    let mut v: Vec<f64> = {
        let mut r = rng::stream(0xC0FFEE, &[rng::stage::INIT]);
        (0..d).map(|_| r.random::<f64>() - 0.5).collect()
    };
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    if nv == 0.0 {
        return (spec.l2_reg, spec.l2_reg);
    }
    for x in &mut v {
        *x /= nv;
    }

    let scale = 1.0 / (2.0 * n as f64);
    let mut eigen = 0.0;
    let mut prev = f64::INFINITY;
    for _ in 0..10_000 {
        // w = (1/(2n)) X^T (X v)
        let mut w = vec![0.0; d];
        for i in 0..n {
            let x = dataset.feature(i);
            let dot: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (wj, &xj) in w.iter_mut().zip(x) {
                *wj += dot * xj;
            }
        }
        for wj in &mut w {
            *wj *= scale;
        }
        let wn = norm(&w);
        if wn < 1e-300 {
            eigen = 0.0;
            break;
        }
        eigen = wn; // Rayleigh quotient of a PSD operator on a unit vector
        for (vj, wj) in v.iter_mut().zip(&w) {
            *vj = wj / wn;
        }
        if (eigen - prev).abs() <= 1e-6 * eigen.max(1e-300) {
            break;
        }
        prev = eigen;
    }
    (spec.l2_reg, spec.l2_reg + eigen)
}

/// One dissimilarity measurement: `sqrt(E_w[||g_unit||^2] / ||g||^2)`,
/// floored at 1. Returns `None` when the reference gradient is numerically
/// stationary.
pub fn dissimilarity_sample<G: AsRef<[f64]>>(
    global_grad: &[f64],
    unit_grads: &[G],
    weights: &[f64],
) -> Option<f64> {
    let global_sq: f64 = global_grad.iter().map(|v| v * v).sum();
    if global_sq <= STATIONARY_TOL * STATIONARY_TOL {
        return None;
    }
    let expected: f64 = unit_grads
        .iter()
        .zip(weights)
        .map(|(g, &w)| w * g.as_ref().iter().map(|v| v * v).sum::<f64>())
        .sum();
    Some((expected / global_sq).sqrt().max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_params(lr: f64) -> ConvergenceParams {
        ConvergenceParams {
            mu: 1.0,
            lipschitz: 1.0,
            delta: 1.0,
            delta_c: vec![1.0],
            lr,
            gc: vec![1.0],
            gkc: vec![vec![1.0]],
            n_per_cluster: vec![1],
            powers: vec![0.5],
            h_norms: vec![0.02],
            sigma_n: 0.01,
        }
    }

    #[test]
    fn a_factor_hand_value() {
        // C = K = 1, all unit constants, lr = 0.5: A = 1 + 0.25 - 1 = 0.25
        let p = unit_params(0.5);
        assert!((a_factor(&p) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn a_factor_zero_lr_is_one() {
        let mut p = unit_params(0.5);
        p.lr = 0.0;
        assert_eq!(a_factor(&p), 1.0);
    }

    #[test]
    fn a_factor_decreases_with_passes_when_bracket_negative() {
        let mut p = unit_params(0.5);
        let a1 = a_factor(&p);
        p.n_per_cluster = vec![2];
        let a2 = a_factor(&p);
        assert!(a2 < a1);
        // exact linearity in N_c
        assert!(((a2 - 1.0) - 2.0 * (a1 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn lr_max_hand_value_and_scaling() {
        let p = unit_params(0.5);
        assert!((lr_max(&p) - 2.0).abs() < 1e-15);
        let mut q = p.clone();
        q.delta = 2.0;
        assert!((lr_max(&q) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lr_condition_matches_contraction() {
        // just below the bound: A < 1; just above: A >= 1
        let mut p = unit_params(0.5);
        let bound = lr_max(&p);
        p.lr = bound * 0.999;
        assert!(a_factor(&p) < 1.0);
        p.lr = bound * 1.001;
        assert!(a_factor(&p) >= 1.0);
    }

    #[test]
    fn gap_hand_values() {
        // noise quotient = 1e-4 / (0.25 * 4e-4) = 1.0 with G_c = 1
        let p = unit_params(0.5);
        assert!((noise_sum(&p) - 1.0).abs() < 1e-12);
        let g_inf = gap(&p, Horizon::Infinite).unwrap();
        assert!((g_inf - 1.0 / 0.75).abs() < 1e-12);
        let g1 = gap(&p, Horizon::Finite(1)).unwrap();
        assert!((g1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gap_noiseless_zero() {
        let mut p = unit_params(0.5);
        p.sigma_n = 0.0;
        assert_eq!(gap(&p, Horizon::Infinite).unwrap(), 0.0);
        assert_eq!(gap(&p, Horizon::Finite(10)).unwrap(), 0.0);
    }

    #[test]
    fn gap_rejects_nonconvergent_horizon() {
        let mut p = unit_params(0.5);
        p.lr = 3.0; // beyond lr_max = 2
        assert!(a_factor(&p) >= 1.0);
        assert!(matches!(
            gap(&p, Horizon::Infinite),
            Err(Error::NonConvergent { .. })
        ));
        // finite horizons stay well defined
        assert!(gap(&p, Horizon::Finite(5)).unwrap().is_finite());
    }

    #[test]
    fn bound_curve_hand_values() {
        let p = unit_params(0.5); // A = 0.25, noise quotient 1.0
        let b = bound_curve(&p, 1.0, 2);
        assert!((b[0] - 1.0).abs() < 1e-15);
        assert!((b[1] - (0.25 + 1.0)).abs() < 1e-12);
        assert!((b[2] - (0.0625 + 0.9375 / 0.75)).abs() < 1e-12);
    }

    #[test]
    fn bound_curve_noiseless_pure_decay() {
        let mut p = unit_params(0.5);
        p.sigma_n = 0.0;
        let b = bound_curve(&p, 2.0, 3);
        for (t, v) in b.iter().enumerate() {
            assert!((v - 2.0 * 0.25f64.powi(t as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn split_sums_to_a_minus_one() {
        let p = ConvergenceParams {
            mu: 0.05,
            lipschitz: 1.2,
            delta: 1.1,
            delta_c: vec![1.0, 1.3, 1.05],
            lr: 0.08,
            gc: vec![0.5, 0.25, 0.25],
            gkc: vec![vec![0.5, 0.5], vec![1.0], vec![0.25, 0.25, 0.5]],
            n_per_cluster: vec![3, 1, 2],
            powers: vec![0.5, 0.4, 0.6],
            h_norms: vec![1.0, 0.8, 1.1],
            sigma_n: 0.01,
        };
        let split = a_factor_split(&p, &[true, false, true]).unwrap();
        let total = split.single_round_part + split.multi_round_part;
        assert!((total - (a_factor(&p) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn gap_monotone_in_power_and_noise() {
        let base = unit_params(0.5);
        let g0 = gap(&base, Horizon::Infinite).unwrap();
        let mut hp = base.clone();
        hp.powers = vec![1.0];
        assert!(gap(&hp, Horizon::Infinite).unwrap() < g0);
        let mut hs = base.clone();
        hs.sigma_n = 0.02;
        assert!(gap(&hs, Horizon::Infinite).unwrap() > g0);
    }

    #[test]
    fn corollary_hand_cases() {
        // delta = 1, G_c = 0.5 (two symmetric clusters), tiny lr: holds
        let p = ConvergenceParams {
            gc: vec![0.5, 0.5],
            delta_c: vec![1.0, 1.0],
            gkc: vec![vec![1.0], vec![1.0]],
            n_per_cluster: vec![1, 1],
            powers: vec![0.5, 0.5],
            h_norms: vec![0.02, 0.02],
            ..unit_params(1e-3)
        };
        assert_eq!(corollary_check(&p), vec![true, true]);

        // delta * G_c = 1 exactly: strict inequality fails
        let mut q = p.clone();
        q.delta = 2.0;
        assert_eq!(corollary_check(&q), vec![false, false]);

        // lr far above the ratio: fails
        let mut r = p.clone();
        r.lr = 3.0;
        assert_eq!(corollary_check(&r), vec![false, false]);
    }

    #[test]
    fn dissimilarity_samples() {
        // identical unit gradients: exactly 1
        let g = vec![1.0, 2.0];
        let d = dissimilarity_sample(&g, &[g.clone(), g.clone()], &[0.5, 0.5]).unwrap();
        assert_eq!(d, 1.0);

        // units [2] and [0] with equal weight against global [1]: sqrt(2)
        let d = dissimilarity_sample(&[1.0], &[vec![2.0], vec![0.0]], &[0.5, 0.5]).unwrap();
        assert!((d - 2.0f64.sqrt()).abs() < 1e-12);

        // scaling everything leaves the ratio unchanged
        let d3 = dissimilarity_sample(&[3.0], &[vec![6.0], vec![0.0]], &[0.5, 0.5]).unwrap();
        assert!((d - d3).abs() < 1e-12);

        // stationary reference point is excluded
        assert!(dissimilarity_sample(&[0.0], &[vec![1.0]], &[1.0]).is_none());
    }

    #[test]
    fn report_flags() {
        let p = unit_params(0.5);
        let rep = build_report(&p, 50, None).unwrap();
        assert!(rep.converges);
        assert!(!rep.over_aggressive);
        assert!(rep.gap_infinite.is_some());
        let mut q = unit_params(0.5);
        q.lr = 3.0;
        let rep = build_report(&q, 50, None).unwrap();
        assert!(!rep.converges);
        assert!(rep.gap_infinite.is_none());
        assert!(rep.gap_at_t.is_none());
    }

    #[test]
    fn estimate_mu_l_degenerate_features() {
        let ds = LabeledDataset::new(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![0, 1], 2).unwrap();
        let spec = ConvexModelSpec::new(2, 2, 0.3);
        let (mu, l) = estimate_mu_l(&spec, &ds);
        assert_eq!(mu, 0.3);
        assert!((l - 0.3).abs() < 1e-9);
    }

    #[test]
    fn estimate_mu_l_identity_features() {
        // X = I_n with n = d: (1/(2n)) X^T X has top eigenvalue 1/(2n)
        let n = 6;
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(i == j)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let ds = LabeledDataset::new(feats, labels, 2).unwrap();
        let spec = ConvexModelSpec::new(n, 2, 0.1);
        let (mu, l) = estimate_mu_l(&spec, &ds);
        assert_eq!(mu, 0.1);
        assert!((l - (0.1 + 0.5 / n as f64)).abs() < 1e-7, "L = {l}");
    }
}
