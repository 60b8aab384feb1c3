//! Student score models and their fitting routines.
//!
//! SEL students are fitted through the corrected-label reduction: the
//! corrected SEL objective equals a square loss against
//! `log p̂ + v ∘ (y − p̂)` up to an f-independent constant. The generic
//! γ-corrected SGD loop in [`sgd_fit`] covers ACE and linear students.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KdError, Result};
use crate::forest::{Forest, ForestParams};
use crate::losses::{gamma_corrected_grad, gamma_corrected_loss, LossSpec};
use crate::seeding::{derive_seed, rng_from};
use crate::simplex::{CorrectionField, ProbabilityField};

/// A student that outputs the same vector everywhere, inside `[log ε, 0]^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantStudent {
    pub value: Vec<f64>,
}

/// `f(x) = W x + b` with `W` of shape `k × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearStudent {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearStudent {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self {
            weights: Array2::zeros((k, d)),
            bias: Array1::zeros(k),
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    pub fn d(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict_row(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        (self.weights.dot(&x) + &self.bias).to_vec()
    }
}

/// One regression forest per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionForestStudent {
    pub params: ForestParams,
    pub forests: Vec<Forest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreModel {
    Constant(ConstantStudent),
    Linear(LinearStudent),
    Forest(RegressionForestStudent),
}

impl ScoreModel {
    pub fn k(&self) -> usize {
        match self {
            ScoreModel::Constant(c) => c.value.len(),
            ScoreModel::Linear(l) => l.k(),
            ScoreModel::Forest(f) => f.forests.len(),
        }
    }

    /// Scores for every row of `x`.
    pub fn predict_scores(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        match self {
            ScoreModel::Constant(c) => {
                let k = c.value.len();
                Ok(Array2::from_shape_fn((x.nrows(), k), |(_, j)| c.value[j]))
            }
            ScoreModel::Linear(l) => {
                if x.ncols() != l.d() {
                    return invalid(format!(
                        "student expects {} features, got {}",
                        l.d(),
                        x.ncols()
                    ));
                }
                Ok(x.dot(&l.weights.t()) + &l.bias)
            }
            ScoreModel::Forest(f) => {
                let mut out = Array2::zeros((x.nrows(), f.forests.len()));
                for (j, forest) in f.forests.iter().enumerate() {
                    let col = forest.predict(x)?;
                    out.column_mut(j).assign(&col.column(0));
                }
                Ok(out)
            }
        }
    }

    /// Argmax class per row.
    pub fn predict_classes(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let s = self.predict_scores(x)?;
        Ok(s.outer_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Step size schedule for SGD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        eta: f64,
    },
    /// η_t = η₀ / (1 + t / T₀); `t0 = None` uses the number of examples.
    InverseDecay {
        eta0: f64,
        t0: Option<f64>,
    },
}

impl StepSchedule {
    fn step(&self, t: usize, n: usize) -> f64 {
        match *self {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::InverseDecay { eta0, t0 } => {
                let t0 = t0.unwrap_or(n as f64);
                eta0 / (1.0 + t as f64 / t0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Constant { eta } => eta >= 0.0 && eta.is_finite(),
            StepSchedule::InverseDecay { eta0, t0 } => {
                eta0 >= 0.0 && eta0.is_finite() && t0.is_none_or(|t| t > 0.0)
            }
        };
        if !ok {
            return invalid("step sizes must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub schedule: StepSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Starting point θ₀; zeros when absent.
    pub initial: Option<LinearStudent>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            schedule: StepSchedule::InverseDecay {
                eta0: 0.1,
                t0: None,
            },
            epochs: 50,
            batch_size: 1,
            seed: 0,
            initial: None,
        }
    }
}

/// Result of an SGD run.
#[derive(Debug, Clone)]
pub struct SgdFit {
    pub student: LinearStudent,
    /// Full-data objective before the first epoch and after each epoch.
    pub trace: Vec<f64>,
}

/// How to fit a student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudentConfig {
    Constant,
    Linear(SgdConfig),
    Forest(ForestParams),
}

impl StudentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            StudentConfig::Constant => "constant",
            StudentConfig::Linear(_) => "linear",
            StudentConfig::Forest(_) => "forest",
        }
    }

    /// Fits the square loss against `labels` (corrected SEL labels).
    pub fn fit_square_loss(
        &self,
        features: &Array2<f64>,
        labels: &Array2<f64>,
        clip_floor: f64,
    ) -> Result<ScoreModel> {
        Ok(match self {
            StudentConfig::Constant => ScoreModel::Constant(fit_constant_sel(labels, clip_floor)?),
            StudentConfig::Linear(cfg) => {
                ScoreModel::Linear(sgd_fit_labels(features, labels, cfg)?.student)
            }
            StudentConfig::Forest(params) => {
                ScoreModel::Forest(forest_student_fit(features, labels, params)?)
            }
        })
    }
}

/// Coordinatewise mean of the labels, clamped to `[log ε, 0]`.
pub fn fit_constant_sel(labels: &Array2<f64>, clip_floor: f64) -> Result<ConstantStudent> {
    if labels.nrows() == 0 {
        return invalid("cannot fit a constant student to zero examples");
    }
    if labels.iter().any(|v| !v.is_finite()) {
        return invalid("labels must be finite");
    }
    let lo = clip_floor.ln();
    let n = labels.nrows() as f64;
    let value = labels
        .columns()
        .into_iter()
        .map(|c| (c.sum() / n).clamp(lo, 0.0))
        .collect();
    Ok(ConstantStudent { value })
}

/// Per-class regression forests on the given labels.
pub fn forest_student_fit(
    features: &Array2<f64>,
    labels: &Array2<f64>,
    params: &ForestParams,
) -> Result<RegressionForestStudent> {
    if features.nrows() != labels.nrows() {
        return invalid("features and labels differ in row count");
    }
    if features.nrows() < 2 {
        return invalid("forest students need at least two examples");
    }
    let forests = (0..labels.ncols())
        .map(|j| {
            let y = labels.column(j).to_vec();
            Forest::fit_regressor(
                features,
                &y,
                &params.with_seed(derive_seed(params.seed, &[j as u64])),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionForestStudent {
        params: params.clone(),
        forests,
    })
}

/// Shared minibatch SGD loop. `grad(i, f)` returns ∇_φ of example `i`'s loss
/// at output `f`; `objective(student)` evaluates the full-data objective.
fn sgd_loop<G, O>(
    features: &Array2<f64>,
    k: usize,
    cfg: &SgdConfig,
    grad: G,
    objective: O,
) -> Result<SgdFit>
where
    G: Fn(usize, &[f64]) -> Result<Vec<f64>>,
    O: Fn(&LinearStudent) -> Result<f64>,
{
    cfg.schedule.validate()?;
    if cfg.batch_size == 0 {
        return invalid("minibatch size must be at least 1");
    }
    let (n, d) = features.dim();
    let mut student = match &cfg.initial {
        Some(init) => {
            if init.k() != k || init.d() != d {
                return invalid("initial student has the wrong shape");
            }
            init.clone()
        }
        None => LinearStudent::zeros(k, d),
    };
    let mut rng = rng_from(cfg.seed, &[0x5_6D]);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = vec![objective(&student)?];
    let mut t = 0usize;
    let mut gw = Array2::<f64>::zeros((k, d));
    let mut gb = Array1::<f64>::zeros(k);
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            gw.fill(0.0);
            gb.fill(0.0);
            for &i in batch {
                let x = features.row(i);
                let f = student.predict_row(x);
                let g = grad(i, &f)?;
                for j in 0..k {
                    gb[j] += g[j];
                    for l in 0..d {
                        gw[[j, l]] += g[j] * x[l];
                    }
                }
            }
            let eta = cfg.schedule.step(t, n) / batch.len() as f64;
            student.weights.scaled_add(-eta, &gw);
            student.bias.scaled_add(-eta, &gb);
            if student
                .weights
                .iter()
                .chain(student.bias.iter())
                .any(|v| !v.is_finite())
            {
                return Err(KdError::Diverged {
                    iteration: t,
                    reason: "non-finite parameters".into(),
                });
            }
            t += 1;
        }
        let obj = objective(&student)?;
        if !obj.is_finite() {
            return Err(KdError::Diverged {
                iteration: t,
                reason: "non-finite objective".into(),
            });
        }
        trace.push(obj);
    }
    Ok(SgdFit { student, trace })
}

/// SGD on the γ-corrected loss: θ ← θ − η ∇_θf(x)ᵀ (∇_φℓ − v ∘ (y − p̂)).
pub fn sgd_fit(
    features: &Array2<f64>,
    labels: &Array2<f64>,
    probs: &ProbabilityField,
    correction: &CorrectionField,
    loss: &LossSpec,
    cfg: &SgdConfig,
) -> Result<SgdFit> {
    let n = features.nrows();
    let k = labels.ncols();
    if labels.nrows() != n || probs.n() != n || correction.v().nrows() != n {
        return invalid("features, labels, teacher field and correction disagree in length");
    }
    if probs.k() != k || correction.v().ncols() != k {
        return invalid("class counts disagree");
    }
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    let grad = |i: usize, f: &[f64]| {
        gamma_corrected_grad(
            loss,
            f,
            &row(probs.probs(), i),
            &row(labels, i),
            &row(correction.v(), i),
        )
    };
    let objective = |s: &LinearStudent| -> Result<f64> {
        let mut total = 0.0;
        for i in 0..n {
            let f = s.predict_row(features.row(i));
            total += gamma_corrected_loss(
                loss,
                &f,
                &row(probs.probs(), i),
                &row(labels, i),
                &row(correction.v(), i),
            )?;
        }
        Ok(total / n as f64)
    };
    sgd_loop(features, k, cfg, grad, objective)
}

/// SGD on the square loss ½‖f(x) − L‖² against fixed labels.
pub fn sgd_fit_labels(
    features: &Array2<f64>,
    labels: &Array2<f64>,
    cfg: &SgdConfig,
) -> Result<SgdFit> {
    let n = features.nrows();
    if labels.nrows() != n || n == 0 {
        return invalid("features and labels disagree in length or are empty");
    }
    let k = labels.ncols();
    let grad = |i: usize, f: &[f64]| -> Result<Vec<f64>> {
        Ok(f.iter()
            .zip(labels.row(i).iter())
            .map(|(a, b)| a - b)
            .collect())
    };
    let objective = |s: &LinearStudent| -> Result<f64> {
        let scores = ScoreModel::Linear(s.clone()).predict_scores(features)?;
        crate::metrics::square_loss(&scores, labels)
    };
    sgd_loop(features, k, cfg, grad, objective)
}
