//! Shared numeric containers and simplex utilities.
//!
//! Everything downstream consumes a [`LabeledDataset`] and exchanges teacher
//! output as a [`ProbabilityField`] (clipped coordinatewise, never
//! renormalized) and correction coefficients as a [`CorrectionField`].

use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Clip floor used throughout unless overridden.
pub const DEFAULT_CLIP_FLOOR: f64 = 1e-3;

/// Feature matrix plus one-hot labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Array2<f64>,
}

impl LabeledDataset {
    /// Builds a dataset from features and a one-hot label matrix.
    pub fn new(features: Array2<f64>, labels: Array2<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        let (nl, k) = labels.dim();
        if n == 0 {
            return invalid("dataset must contain at least one example");
        }
        if d == 0 {
            return invalid("feature dimension must be at least 1");
        }
        if k < 2 {
            return invalid(format!("class count must be at least 2, got {k}"));
        }
        if nl != n {
            return invalid(format!("{n} feature rows but {nl} label rows"));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            ));
        }
        for (i, row) in labels.outer_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != k {
                return invalid(format!("label row {i} is not one-hot"));
            }
        }
        Ok(Self { features, labels })
    }

    /// Builds a dataset from class indices in `[0, k)`.
    pub fn from_classes(features: Array2<f64>, classes: &[usize], k: usize) -> Result<Self> {
        let labels = one_hot(classes, k)?;
        Self::new(features, labels)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array2<f64> {
        &self.labels
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn k(&self) -> usize {
        self.labels.ncols()
    }

    /// Class index of every example.
    pub fn classes(&self) -> Vec<usize> {
        self.labels
            .outer_iter()
            .map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0))
            .collect()
    }

    /// Empirical label mean ȳ.
    pub fn label_mean(&self) -> Vec<f64> {
        self.labels
            .mean_axis(Axis(0))
            .map(|m| m.to_vec())
            .unwrap_or_default()
    }

    /// Rows selected by `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return invalid("cannot take an empty subset");
        }
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
        })
    }

    /// Same features, labels replaced (used by leakage audits).
    pub fn with_labels(&self, labels: Array2<f64>) -> Result<Self> {
        Self::new(self.features.clone(), labels)
    }
}

/// Teacher class probabilities after coordinatewise clipping at `clip_floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityField {
    probs: Array2<f64>,
    clip_floor: f64,
}

impl ProbabilityField {
    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn clip_floor(&self) -> f64 {
        self.clip_floor
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn k(&self) -> usize {
        self.probs.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    /// Rows selected by `indices`.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(0), indices),
            clip_floor: self.clip_floor,
        }
    }

    /// Assembles a field from per-row pieces (used when pooling folds).
    pub(crate) fn from_clipped(probs: Array2<f64>, clip_floor: f64) -> Self {
        Self { probs, clip_floor }
    }
}

/// Per-example diagonal corrections γ(x_i) = diag(v_i).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionField {
    v: Array2<f64>,
}

impl CorrectionField {
    pub fn new(v: Array2<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return invalid("correction coefficients must be finite and nonnegative");
        }
        Ok(Self { v })
    }

    /// The all-zero correction, which recovers the plug-in loss.
    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            v: Array2::zeros((n, k)),
        }
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.v.row(i)
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|&x| x == 0.0)
    }
}

/// Coordinatewise `max(p, ε)` with no renormalization.
pub fn clip_probabilities(p: &Array2<f64>, eps: f64) -> Result<ProbabilityField> {
    let k = p.ncols();
    if !(eps > 0.0) || (k > 0 && eps >= 1.0 / k as f64) {
        return invalid(format!("clip floor {eps} must lie in (0, 1/k) for k = {k}"));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return invalid("probabilities contain non-finite entries");
    }
    if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return invalid("probabilities must lie in [0, 1]");
    }
    Ok(ProbabilityField {
        probs: p.mapv(|v| v.max(eps)),
        clip_floor: eps,
    })
}

/// One-hot encodes class indices into an `n × k` matrix.
pub fn one_hot(labels: &[usize], k: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), k));
    for (i, &c) in labels.iter().enumerate() {
        if c >= k {
            return invalid(format!(
                "label {c} at position {i} is out of range for k = {k}"
            ));
        }
        out[[i, c]] = 1.0;
    }
    Ok(out)
}

/// Entrywise natural log of a probability field.
pub fn log_scores(p: &ProbabilityField) -> Result<Array2<f64>> {
    log_positive(&p.probs)
}

pub(crate) fn log_positive(p: &Array2<f64>) -> Result<Array2<f64>> {
    if p.iter().any(|&v| !(v > 0.0)) {
        return invalid("log of a nonpositive probability");
    }
    Ok(p.mapv(f64::ln))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clip_examples() {
        let out = clip_probabilities(&array![[0.0, 1.0]], 1e-3).unwrap();
        assert_eq!(out.probs(), &array![[0.001, 1.0]]);
        let out = clip_probabilities(&array![[0.5, 0.5]], 1e-3).unwrap();
        assert_eq!(out.probs(), &array![[0.5, 0.5]]);
        let out = clip_probabilities(&array![[0.0004, 0.9996]], 1e-3).unwrap();
        assert_eq!(out.probs(), &array![[0.001, 0.9996]]);
    }

    #[test]
    fn clip_rejects_bad_input() {
        assert!(clip_probabilities(&array![[f64::NAN, 1.0]], 1e-3).is_err());
        assert!(clip_probabilities(&array![[0.5, 0.5]], 0.5).is_err());
        assert!(clip_probabilities(&array![[0.5, 0.5]], 0.0).is_err());
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(&[0, 1], 2).unwrap(), array![[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(one_hot(&[2], 3).unwrap(), array![[0.0, 0.0, 1.0]]);
        assert_eq!(one_hot(&[], 2).unwrap().dim(), (0, 2));
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn log_score_examples() {
        let p = clip_probabilities(&array![[1.0, 1.0]], 1e-3).unwrap();
        assert_eq!(log_scores(&p).unwrap(), array![[0.0, 0.0]]);
        let p = clip_probabilities(&array![[(-1.0f64).exp(), 1.0]], 1e-3).unwrap();
        let l = log_scores(&p).unwrap();
        assert!((l[[0, 0]] + 1.0).abs() < 1e-15);
        let p = clip_probabilities(&array![[0.5, 0.5]], 1e-3).unwrap();
        let l = log_scores(&p).unwrap();
        // ln 2 to 20 digits: 0.69314718055994530942
        assert!((l[[0, 0]] + std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_positive(&array![[0.0, 1.0]]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let x = array![[1.0], [2.0]];
        assert!(LabeledDataset::new(x.clone(), array![[1.0, 0.0], [0.0, 1.0]]).is_ok());
        assert!(LabeledDataset::new(x.clone(), array![[1.0, 1.0], [0.0, 1.0]]).is_err());
        assert!(LabeledDataset::new(x.clone(), array![[0.5, 0.5], [0.0, 1.0]]).is_err());
        assert!(LabeledDataset::new(
            array![[f64::INFINITY], [0.0]],
            array![[1.0, 0.0], [0.0, 1.0]]
        )
        .is_err());
        assert!(LabeledDataset::new(x, array![[1.0], [1.0]]).is_err());
    }

    #[test]
    fn correction_field_rejects_negative() {
        assert!(CorrectionField::new(array![[-1.0, 0.0]]).is_err());
        assert!(CorrectionField::zeros(2, 3).is_zero());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix() -> impl Strategy<Value = Array2<f64>> {
            (1usize..6, 2usize..5).prop_flat_map(|(n, k)| {
                proptest::collection::vec(0.0f64..=1.0, n * k)
                    .prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap())
            })
        }

        proptest! {
            #[test]
            fn clip_is_idempotent(p in matrix()) {
                let once = clip_probabilities(&p, 1e-3).unwrap();
                let twice = clip_probabilities(once.probs(), 1e-3).unwrap();
                prop_assert_eq!(once, twice);
            }

            #[test]
            fn clip_is_monotone(p in matrix(), shift in 0.0f64..0.5) {
                let q = p.mapv(|v| (v + shift).min(1.0));
                let cp = clip_probabilities(&p, 1e-3).unwrap();
                let cq = clip_probabilities(&q, 1e-3).unwrap();
                prop_assert!(cp.probs().iter().zip(cq.probs().iter()).all(|(a, b)| a <= b));
            }

            #[test]
            fn one_hot_rows_sum_to_one(labels in proptest::collection::vec(0usize..4, 0..20)) {
                let m = one_hot(&labels, 4).unwrap();
                for row in m.outer_iter() {
                    prop_assert_eq!(row.sum(), 1.0);
                }
            }

            #[test]
            fn log_inverts_exp_on_box(v in proptest::collection::vec(1e-3f64.ln()..=0.0, 6)) {
                let m = Array2::from_shape_vec((3, 2), v).unwrap();
                let p = clip_probabilities(&m.mapv(f64::exp), 1e-3).unwrap();
                let back = log_scores(&p).unwrap();
                for (a, b) in m.iter().zip(back.iter()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
