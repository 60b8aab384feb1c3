use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::forest::{Forest, ForestParams};
use crate::simplex::{clip_probabilities, LabeledDataset, ProbabilityField};

/// Random-forest classifier teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestTeacher {
    pub params: ForestParams,
    pub n_classes: usize,
    pub clip_floor: f64,
    pub forest: Forest,
}

pub fn forest_fit(
    data: &LabeledDataset,
    params: &ForestParams,
    clip_floor: f64,
) -> Result<ForestTeacher> {
    if data.n() < 2 {
        return invalid("forest teachers need at least two examples");
    }
    let forest = Forest::fit_classifier(data.features(), &data.classes(), data.k(), params)?;
    Ok(ForestTeacher {
        params: params.clone(),
        n_classes: data.k(),
        clip_floor,
        forest,
    })
}

impl ForestTeacher {
    /// Leaf class frequencies averaged over trees, before clipping.
    pub fn predict_raw(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forest.predict(x)
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<ProbabilityField> {
        let raw = self.predict_raw(x)?;
        // averaging can land a hair above 1
        clip_probabilities(&raw.mapv(|v| v.min(1.0)), self.clip_floor)
    }
}
