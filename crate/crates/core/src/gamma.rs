//! Selection of the diagonal correction γ̂(x) = diag(v(x)).
//!
//! The balanced policy minimizes, per training example,
//!
//! ```text
//! ‖v ∘ (y − p̂)‖² + α ‖1/p̂ − v‖²
//! ```
//!
//! whose coordinatewise minimizer is `v_j = (α/p̂_j) / ((y_j − p̂_j)² + α)`.
//! The plug-in variant replaces `(y_j − p̂_j)²` by `p̂_j²(1 − p̂_j)²`.
//! α absorbs the unspecified constant of the bias bound.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crossfit::{DistillConfig, NuisanceBundle};
use crate::error::{invalid, Result};
use crate::metrics::ValidationMetric;
use crate::simplex::{CorrectionField, LabeledDataset, ProbabilityField};

/// Which estimate of the conditional variance term enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VarianceEstimate {
    #[default]
    Sample,
    Plugin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum GammaMode {
    Zero,
    Orthogonal,
    Balanced { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPolicy {
    pub mode: GammaMode,
    pub variance: VarianceEstimate,
}

impl GammaPolicy {
    pub const ZERO: Self = Self {
        mode: GammaMode::Zero,
        variance: VarianceEstimate::Sample,
    };
    pub const ORTHOGONAL: Self = Self {
        mode: GammaMode::Orthogonal,
        variance: VarianceEstimate::Sample,
    };

    pub fn balanced(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return invalid(format!("alpha must be positive and finite, got {alpha}"));
        }
        Ok(Self {
            mode: GammaMode::Balanced { alpha },
            variance: VarianceEstimate::Sample,
        })
    }

    /// Maps α = 0 to the zero policy and α = ∞ to the orthogonal policy.
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha == 0.0 {
            Ok(Self::ZERO)
        } else if alpha == f64::INFINITY {
            Ok(Self::ORTHOGONAL)
        } else {
            Self::balanced(alpha)
        }
    }

    pub fn with_variance(self, variance: VarianceEstimate) -> Self {
        Self { variance, ..self }
    }

    /// α as a number, with the sentinels 0 and ∞.
    pub fn alpha(&self) -> f64 {
        match self.mode {
            GammaMode::Zero => 0.0,
            GammaMode::Orthogonal => f64::INFINITY,
            GammaMode::Balanced { alpha } => alpha,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.mode {
            GammaMode::Zero => "zero",
            GammaMode::Orthogonal => "orthogonal",
            GammaMode::Balanced { .. } => "balanced",
        }
    }

    /// Coefficients for one example with label `y` and teacher output `p`.
    pub fn coefficients(&self, y: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            GammaMode::Zero => Ok(vec![0.0; p.len()]),
            GammaMode::Orthogonal => {
                check_probs(p)?;
                Ok(p.iter().map(|pj| 1.0 / pj).collect())
            }
            GammaMode::Balanced { alpha } => match self.variance {
                VarianceEstimate::Sample => closed_form_v(y, p, alpha),
                VarianceEstimate::Plugin => closed_form_v_plugin(p, alpha),
            },
        }
    }

    /// Correction field for every row of `labels` against `probs`.
    pub fn field(&self, labels: &Array2<f64>, probs: &ProbabilityField) -> Result<CorrectionField> {
        if labels.dim() != probs.probs().dim() {
            return invalid("labels and teacher probabilities have different shapes");
        }
        if self.mode == GammaMode::Zero {
            return Ok(CorrectionField::zeros(labels.nrows(), labels.ncols()));
        }
        let mut v = Array2::zeros(labels.dim());
        for i in 0..labels.nrows() {
            let y = labels.row(i).to_vec();
            let p = probs.row(i).to_vec();
            for (j, c) in self.coefficients(&y, &p)?.into_iter().enumerate() {
                v[[i, j]] = c;
            }
        }
        CorrectionField::new(v)
    }
}

fn check_probs(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return invalid("teacher probabilities must be positive");
    }
    Ok(())
}

/// Closed-form minimizer with the sample variance estimate `(y − p̂)²`.
pub fn closed_form_v(y: &[f64], p: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return invalid(format!("alpha must be positive, got {alpha}"));
    }
    if y.len() != p.len() {
        return invalid("label and probability vectors differ in length");
    }
    check_probs(p)?;
    Ok(y.iter()
        .zip(p)
        .map(|(yj, pj)| {
            let r = yj - pj;
            (alpha / pj) / (r * r + alpha)
        })
        .collect())
}

/// Closed-form minimizer with the plug-in variance `p̂²(1 − p̂)²`.
pub fn closed_form_v_plugin(p: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return invalid(format!("alpha must be positive, got {alpha}"));
    }
    check_probs(p)?;
    Ok(p.iter()
        .map(|pj| {
            let s = pj * (1.0 - pj);
            (alpha / pj) / (s * s + alpha)
        })
        .collect())
}

/// Default α grid including the zero (0) and orthogonal (∞) endpoints.
pub fn default_alpha_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    grid.extend([1e-3, 1e-2, 1e-1, 1.0, 10.0, 1e2, 1e3]);
    grid.push(f64::INFINITY);
    grid
}

/// Outcome of cross-validated α selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSelection {
    pub chosen: f64,
    /// `(alpha, mean validation score)` in candidate order; higher is better.
    pub scores: Vec<(f64, f64)>,
}

/// Picks α by `folds`-fold cross-validation of the whole distillation
/// pipeline in `config`. Teachers are fitted once per CV split and reused
/// across candidates. Ties resolve toward the smaller α, then the earlier
/// candidate.
pub fn select_alpha_cv(
    data: &LabeledDataset,
    candidates: &[f64],
    folds: usize,
    config: &DistillConfig,
    metric: ValidationMetric,
    seed: u64,
) -> Result<AlphaSelection> {
    if candidates.is_empty() {
        return invalid("alpha candidate list is empty");
    }
    if let Some(bad) = candidates.iter().find(|a| !(**a >= 0.0) || a.is_nan()) {
        return invalid(format!("alpha candidates must be nonnegative, got {bad}"));
    }
    if folds < 2 {
        return invalid("alpha selection needs at least two folds");
    }
    if data.n() < folds {
        return invalid(format!("{} examples cannot fill {folds} folds", data.n()));
    }
    let policies = candidates
        .iter()
        .map(|&a| GammaPolicy::from_alpha(a).map(|p| p.with_variance(config.policy.variance)))
        .collect::<Result<Vec<_>>>()?;

    let plan = crate::crossfit::make_folds(data.n(), folds, seed)?;
    let mut totals = vec![0.0; candidates.len()];
    for c in 0..folds {
        let train = data.subset(&plan.complement(c))?;
        let val = data.subset(&plan.fold(c))?;
        let inner = crate::crossfit::make_folds(
            train.n(),
            config.folds,
            crate::seeding::derive_seed(seed, &[c as u64]),
        )?;
        let fold_probs =
            crate::crossfit::fit_fold_teachers(&train, &inner, &config.teacher, config.clip_floor)?;
        let evaluator = metric.evaluator(&train, &val, config)?;
        for (slot, policy) in totals.iter_mut().zip(&policies) {
            let bundle = NuisanceBundle::from_fold_probs(fold_probs.clone(), &train, policy)?;
            let student =
                crate::crossfit::enhanced_kd_fit(&train, &bundle, &config.student, &config.loss)?;
            *slot += evaluator.score(&student)?;
        }
    }
    let scores: Vec<(f64, f64)> = candidates
        .iter()
        .zip(&totals)
        .map(|(&a, &t)| (a, t / folds as f64))
        .collect();
    let mut best = scores[0];
    for &(a, s) in &scores[1..] {
        if s > best.1 || (s == best.1 && a < best.0) {
            best = (a, s);
        }
    }
    Ok(AlphaSelection {
        chosen: best.0,
        scores,
    })
}
