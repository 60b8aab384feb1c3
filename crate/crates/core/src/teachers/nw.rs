//! Interpolating Nadaraya–Watson smoother with the singular kernel
//! `K(u) = ‖u‖^{-a} 1{‖u‖ ≤ 1}` and bandwidth `h = n^{-1/(4+d)}`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simplex::{clip_probabilities, LabeledDataset, ProbabilityField};

/// Distances below this are treated as hitting a stored training point.
pub const COLLISION_RADIUS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NadarayaWatsonTeacher {
    pub exponent: f64,
    pub bandwidth: f64,
    pub clip_floor: f64,
    pub features: Array2<f64>,
    pub labels: Array2<f64>,
    /// Returned when a query has no training point within the bandwidth.
    pub fallback: Vec<f64>,
}

/// Clipped predictions together with the number of empty-neighborhood queries.
#[derive(Debug, Clone)]
pub struct NwPrediction {
    pub probs: ProbabilityField,
    pub raw: Array2<f64>,
    pub fallback_count: usize,
}

pub fn nw_fit(
    data: &LabeledDataset,
    exponent: f64,
    clip_floor: f64,
) -> Result<NadarayaWatsonTeacher> {
    let d = data.d() as f64;
    if !(exponent > 0.0 && exponent < d / 2.0) {
        return invalid(format!(
            "kernel exponent must lie in (0, d/2) = (0, {}), got {exponent}",
            d / 2.0
        ));
    }
    let n = data.n() as f64;
    Ok(NadarayaWatsonTeacher {
        exponent,
        bandwidth: n.powf(-1.0 / (4.0 + d)),
        clip_floor,
        features: data.features().as_standard_layout().to_owned(),
        labels: data.labels().clone(),
        fallback: data.label_mean(),
    })
}

impl NadarayaWatsonTeacher {
    fn predict_row(&self, q: &[f64]) -> (Vec<f64>, bool) {
        let d = self.features.ncols();
        let k = self.labels.ncols();
        let stored = self.features.as_slice().expect("standard layout");
        let h2 = self.bandwidth * self.bandwidth;
        let half_a = 0.5 * self.exponent;
        let mut acc = vec![0.0; k];
        let mut total = 0.0;
        let mut hits = vec![0.0; k];
        let mut n_hits = 0usize;
        for (i, row) in stored.chunks_exact(d).enumerate() {
            let mut dist2 = 0.0;
            for (a, b) in row.iter().zip(q) {
                let diff = a - b;
                dist2 += diff * diff;
            }
            if dist2 > h2 {
                continue;
            }
            let label = self.labels.row(i);
            if dist2.sqrt() < COLLISION_RADIUS {
                n_hits += 1;
                for (h, l) in hits.iter_mut().zip(label.iter()) {
                    *h += l;
                }
                continue;
            }
            // (dist / h)^{-a}
            let w = (dist2 / h2).powf(-half_a);
            total += w;
            for (a, l) in acc.iter_mut().zip(label.iter()) {
                *a += w * l;
            }
        }
        if n_hits > 0 {
            return (hits.into_iter().map(|h| h / n_hits as f64).collect(), false);
        }
        if total > 0.0 {
            return (acc.into_iter().map(|a| a / total).collect(), false);
        }
        (self.fallback.clone(), true)
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<NwPrediction> {
        if x.ncols() != self.features.ncols() {
            return invalid(format!(
                "teacher expects {} features, got {}",
                self.features.ncols(),
                x.ncols()
            ));
        }
        let rows: Vec<(Vec<f64>, bool)> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.predict_row(&x.row(i).to_vec()))
            .collect();
        let k = self.labels.ncols();
        let mut raw = Array2::zeros((x.nrows(), k));
        let mut fallback_count = 0;
        for (i, (r, fell_back)) in rows.into_iter().enumerate() {
            fallback_count += fell_back as usize;
            for j in 0..k {
                raw[[i, j]] = r[j].min(1.0);
            }
        }
        let probs = clip_probabilities(&raw, self.clip_floor)?;
        Ok(NwPrediction {
            probs,
            raw,
            fallback_count,
        })
    }
}
