//! Nuisance estimators p̂ for the Bayes class probabilities.

mod forest;
mod nw;
mod ridge;

pub use forest::{forest_fit, ForestTeacher};
pub use nw::{nw_fit, NadarayaWatsonTeacher, NwPrediction};
pub use ridge::{ridge_mean_fit, RidgeMeanTeacher};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::forest::ForestParams;
use crate::simplex::{LabeledDataset, ProbabilityField};

/// How to fit a teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherConfig {
    Forest(ForestParams),
    /// Shrunken label mean with λ = scale · n^{-1/4}.
    RidgeMean {
        scale: f64,
    },
    /// Singular-kernel smoother; `exponent` defaults to d/4.
    NadarayaWatson {
        exponent: Option<f64>,
    },
}

impl TeacherConfig {
    pub fn fit(&self, data: &LabeledDataset, clip_floor: f64) -> Result<Teacher> {
        Ok(match self {
            TeacherConfig::Forest(params) => Teacher::Forest(forest_fit(data, params, clip_floor)?),
            TeacherConfig::RidgeMean { scale } => {
                Teacher::RidgeMean(ridge_mean_fit(data, *scale, clip_floor)?)
            }
            TeacherConfig::NadarayaWatson { exponent } => {
                let a = exponent.unwrap_or(data.d() as f64 / 4.0);
                Teacher::NadarayaWatson(nw_fit(data, a, clip_floor)?)
            }
        })
    }

    /// Copy of this config with its random stream replaced (forests only).
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            TeacherConfig::Forest(p) => TeacherConfig::Forest(p.with_seed(seed)),
            other => other.clone(),
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            TeacherConfig::Forest(p) => Some(p.seed),
            _ => None,
        }
    }
}

/// A fitted teacher. Immutable and shareable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Teacher {
    Forest(ForestTeacher),
    RidgeMean(RidgeMeanTeacher),
    NadarayaWatson(NadarayaWatsonTeacher),
}

impl Teacher {
    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityField> {
        match self {
            Teacher::Forest(t) => t.predict_proba(x),
            Teacher::RidgeMean(t) => t.predict_proba(x),
            Teacher::NadarayaWatson(t) => Ok(t.predict(x)?.probs),
        }
    }
}
