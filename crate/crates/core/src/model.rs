//! The desk-scale training model: an L2-regularized softmax linear
//! classifier. Strongly convex with modulus `l2_reg` and smooth, so the
//! convergence machinery applies verbatim.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    SoftmaxLinear,
}

/// Model family description. Parameters are laid out per class:
/// `[w_class0 (d), b_class0, w_class1 (d), b_class1, ...]`,
/// so `q = label_count * (feature_dim + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvexModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub label_count: usize,
    /// L2 coefficient; equals the strong-convexity modulus mu. Applied to
    /// weights and biases alike.
    pub l2_reg: f64,
}

impl ConvexModelSpec {
    pub fn new(feature_dim: usize, label_count: usize, l2_reg: f64) -> Self {
        Self {
            kind: ModelKind::SoftmaxLinear,
            feature_dim,
            label_count,
            l2_reg,
        }
    }

    pub fn param_count(&self) -> usize {
        self.label_count * (self.feature_dim + 1)
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.feature_dim + 1;
        for (class, o) in out.iter_mut().enumerate() {
            let row = &w[class * stride..class * stride + self.feature_dim];
            let bias = w[class * stride + self.feature_dim];
            *o = bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Mean cross-entropy over `indices` plus `l2_reg/2 * ||w||^2`.
    pub fn loss(&self, w: &[f64], dataset: &LabeledDataset, indices: &[usize]) -> f64 {
        assert!(!indices.is_empty(), "loss over empty index set");
        let mut logits = vec![0.0; self.label_count];
        let mut total = 0.0;
        for &i in indices {
            self.logits(w, dataset.feature(i), &mut logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            total += lse - logits[dataset.label(i)];
        }
        let reg = 0.5 * self.l2_reg * w.iter().map(|v| v * v).sum::<f64>();
        total / indices.len() as f64 + reg
    }

    /// Accumulates the mean cross-entropy gradient over `indices` plus the
    /// L2 term into `out` (overwritten).
    pub fn grad_into(
        &self,
        w: &[f64],
        dataset: &LabeledDataset,
        indices: &[usize],
        out: &mut [f64],
    ) {
        assert!(!indices.is_empty(), "gradient over empty index set");
        assert_eq!(out.len(), self.param_count());
        out.fill(0.0);
        let stride = self.feature_dim + 1;
        let mut logits = vec![0.0; self.label_count];
        let inv_n = 1.0 / indices.len() as f64;
        for &i in indices {
            let x = dataset.feature(i);
            self.logits(w, x, &mut logits);
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for z in logits.iter_mut() {
                *z = (*z - max).exp();
                denom += *z;
            }
            let y = dataset.label(i);
            for class in 0..self.label_count {
                let p = logits[class] / denom;
                let err = (p - f64::from(class == y)) * inv_n;
                let row = &mut out[class * stride..class * stride + self.feature_dim];
                for (g, &xv) in row.iter_mut().zip(x) {
                    *g += err * xv;
                }
                out[class * stride + self.feature_dim] += err;
            }
        }
        for (g, &wv) in out.iter_mut().zip(w) {
            *g += self.l2_reg * wv;
        }
    }

    pub fn gradient(&self, w: &[f64], dataset: &LabeledDataset, indices: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        self.grad_into(w, dataset, indices, &mut out);
        out
    }

    pub fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let mut logits = vec![0.0; self.label_count];
        self.logits(w, x, &mut logits);
        logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    pub fn accuracy(&self, w: &[f64], dataset: &LabeledDataset, indices: &[usize]) -> f64 {
        if indices.is_empty() {
            return 0.0;
        }
        let hits = indices
            .iter()
            .filter(|&&i| self.predict(w, dataset.feature(i)) == dataset.label(i))
            .count();
        hits as f64 / indices.len() as f64
    }
}

/// Flattened model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(q: usize) -> Self {
        Self {
            values: vec![0.0; q],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// self <- self + scale * other
    pub fn axpy(&mut self, scale: f64, other: &[f64]) -> Result<()> {
        if other.len() != self.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "axpy over {} vs {} parameters",
                self.values.len(),
                other.len()
            )));
        }
        for (v, &o) in self.values.iter_mut().zip(other) {
            *v += scale * o;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ConvexModelSpec {
        ConvexModelSpec::new(2, 2, 0.0)
    }

    fn ds_origin() -> LabeledDataset {
        LabeledDataset::new(vec![vec![0.0, 0.0]], vec![1], 2).unwrap()
    }

    #[test]
    fn zero_model_bias_gradient_is_softmax_minus_onehot() {
        // single sample at the origin with label 1: weight grads vanish,
        // bias grads equal softmax(0) - onehot = [0.5, -0.5]
        let s = spec();
        let ds = ds_origin();
        let w = vec![0.0; s.param_count()];
        let g = s.gradient(&w, &ds, &[0]);
        // layout: [w00, w01, b0, w10, w11, b1]
        assert_eq!(&g[0..2], &[0.0, 0.0]);
        assert!((g[2] - 0.5).abs() < 1e-15);
        assert_eq!(&g[3..5], &[0.0, 0.0]);
        assert!((g[5] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn duplicated_dataset_same_mean_gradient() {
        let s = ConvexModelSpec::new(2, 3, 0.1);
        let ds = LabeledDataset::new(
            vec![vec![1.0, -0.5], vec![0.3, 2.0], vec![1.0, -0.5], vec![0.3, 2.0]],
            vec![0, 2, 0, 2],
            3,
        )
        .unwrap();
        let w: Vec<f64> = (0..s.param_count()).map(|i| 0.01 * i as f64).collect();
        let half = s.gradient(&w, &ds, &[0, 1]);
        let full = s.gradient(&w, &ds, &[0, 1, 2, 3]);
        for (a, b) in half.iter().zip(&full) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let s = ConvexModelSpec::new(3, 4, 0.05);
        let ds = LabeledDataset::new(
            vec![
                vec![0.4, -1.2, 0.7],
                vec![1.5, 0.1, -0.3],
                vec![-0.8, 0.9, 1.1],
            ],
            vec![0, 2, 3],
            4,
        )
        .unwrap();
        let idx = [0, 1, 2];
        let w: Vec<f64> = (0..s.param_count())
            .map(|i| 0.1 * ((i as f64) * 0.37).sin())
            .collect();
        let g = s.gradient(&w, &ds, &idx);
        let h = 1e-6;
        for p in 0..w.len() {
            let mut wp = w.clone();
            wp[p] += h;
            let mut wm = w.clone();
            wm[p] -= h;
            let fd = (s.loss(&wp, &ds, &idx) - s.loss(&wm, &ds, &idx)) / (2.0 * h);
            let denom = fd.abs().max(1e-8);
            assert!(
                ((g[p] - fd) / denom).abs() < 1e-5,
                "param {p}: analytic {} vs fd {fd}",
                g[p]
            );
        }
    }

    #[test]
    fn loss_is_log_label_count_at_zero() {
        let s = ConvexModelSpec::new(2, 5, 0.0);
        let ds = LabeledDataset::new(vec![vec![1.0, 2.0]], vec![3], 5).unwrap();
        let w = vec![0.0; s.param_count()];
        assert!((s.loss(&w, &ds, &[0]) - 5.0f64.ln()).abs() < 1e-12);
    }
}
