use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simplex::{clip_probabilities, LabeledDataset, ProbabilityField};

/// Constant teacher `max(ȳ / (1 + λ), ε)` with `λ = c · n^{-1/4}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeMeanTeacher {
    pub scale: f64,
    pub lambda: f64,
    pub label_mean: Vec<f64>,
    pub clip_floor: f64,
    pub n_features: usize,
}

pub fn ridge_mean_fit(
    data: &LabeledDataset,
    scale: f64,
    clip_floor: f64,
) -> Result<RidgeMeanTeacher> {
    if !(scale > 0.0) || !scale.is_finite() {
        return invalid(format!("ridge scale must be positive, got {scale}"));
    }
    let lambda = scale * (data.n() as f64).powf(-0.25);
    Ok(RidgeMeanTeacher {
        scale,
        lambda,
        label_mean: data.label_mean(),
        clip_floor,
        n_features: data.d(),
    })
}

impl RidgeMeanTeacher {
    /// The unclipped shrunken mean; clipping happens in [`Self::predict_proba`].
    pub fn shrunken_mean(&self) -> Vec<f64> {
        self.label_mean
            .iter()
            .map(|m| m / (1.0 + self.lambda))
            .collect()
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityField> {
        if x.ncols() != self.n_features {
            return invalid(format!(
                "teacher expects {} features, got {}",
                self.n_features,
                x.ncols()
            ));
        }
        let row = Array1::from(self.shrunken_mean());
        let raw = Array2::from_shape_fn((x.nrows(), row.len()), |(_, j)| row[j]);
        clip_probabilities(&raw, self.clip_floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn all_class_zero_example() {
        let x = Array2::from_shape_fn((16, 2), |(i, j)| (i + j) as f64);
        let data = LabeledDataset::from_classes(x.clone(), &[0; 16], 2).unwrap();
        let t = ridge_mean_fit(&data, 1.0, 1e-3).unwrap();
        assert_eq!(t.lambda, 0.5);
        let p = t.predict_proba(&x).unwrap();
        assert!((p.probs()[[3, 0]] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.probs()[[3, 1]], 0.001);
    }

    #[test]
    fn vanishing_scale_approaches_mean() {
        let x = Array2::zeros((4, 1));
        let data = LabeledDataset::from_classes(x.clone(), &[0, 1, 1, 1], 2).unwrap();
        let t = ridge_mean_fit(&data, 1e-12, 1e-3).unwrap();
        let p = t.predict_proba(&x).unwrap();
        assert!((p.probs()[[0, 0]] - 0.25).abs() < 1e-10);
        assert!((p.probs()[[0, 1]] - 0.75).abs() < 1e-10);
        assert!(ridge_mean_fit(&data, 0.0, 1e-3).is_err());
    }

    #[test]
    fn prediction_ignores_features() {
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * j) as f64);
        let data = LabeledDataset::from_classes(x.clone(), &[0, 1, 2, 0, 0, 1], 3).unwrap();
        let t = ridge_mean_fit(&data, 1.0, 1e-3).unwrap();
        let probe = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 - 2.0) * 1e3 + j as f64);
        let p = t.predict_proba(&probe).unwrap();
        for i in 1..5 {
            assert_eq!(p.row(i), p.row(0));
        }
    }
}
