//! Evaluation metrics: AUC, accuracy, oracle errors and rate slopes.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::crossfit::DistillConfig;
use crate::error::{invalid, KdError, Result};
use crate::gamma::GammaPolicy;
use crate::losses::corrected_sel_labels;
use crate::simplex::{LabeledDataset, ProbabilityField};
use crate::students::ScoreModel;

/// Area under the ROC curve via midranks; ties between a positive and a
/// negative count one half.
pub fn auc_binary(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return invalid("scores and labels differ in length");
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return invalid(format!("binary AUC got label {bad}"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return invalid("scores contain NaN");
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(KdError::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1..=end) share their mean
        let mid = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        rank_sum_pos += mid * pos_in_group as f64;
        start = end;
    }
    let np = n_pos as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Fraction of rows whose argmax score matches the class.
pub fn accuracy(scores: &Array2<f64>, classes: &[usize]) -> Result<f64> {
    if scores.nrows() != classes.len() || classes.is_empty() {
        return invalid("scores and classes differ in length or are empty");
    }
    let hits = scores
        .outer_iter()
        .zip(classes)
        .filter(|(row, &c)| argmax(row.iter().copied()) == c)
        .count();
    Ok(hits as f64 / classes.len() as f64)
}

fn argmax(xs: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in xs.enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best.0
}

/// Binary score margin f₁ − f₀ used for AUC.
pub fn score_margin(scores: &Array2<f64>) -> Vec<f64> {
    scores.outer_iter().map(|r| r[1] - r[0]).collect()
}

/// Mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 || xs.iter().all(|&x| x == xs[0]) {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Mean squared distance ‖p̂ − p₀‖² over rows, with its standard error.
pub fn teacher_mse(probs: &ProbabilityField, p0: &Array2<f64>) -> Result<(f64, f64)> {
    if probs.probs().dim() != p0.dim() {
        return invalid("teacher and Bayes probabilities differ in shape");
    }
    let per_row: Vec<f64> = probs
        .probs()
        .outer_iter()
        .zip(p0.outer_iter())
        .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum())
        .collect();
    Ok(mean_and_se(&per_row))
}

/// Least-squares fit of log(error) against log(n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl RateFit {
    pub fn contains(&self, slope: f64) -> bool {
        self.ci_low <= slope && slope <= self.ci_high
    }
}

pub fn fit_rate_slope(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 4 {
        return invalid(format!(
            "rate fits need at least 4 points, got {}",
            points.len()
        ));
    }
    if let Some((n, e)) = points.iter().find(|(n, e)| !(*n > 0.0) || !(*e > 0.0)) {
        return invalid(format!(
            "rate fits need positive n and error, got ({n}, {e})"
        ));
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return invalid("rate fits need at least two distinct n");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = m - 2.0;
    let slope_se = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .map_err(|e| KdError::InvalidInput(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        slope_se,
        ci_low: slope - t * slope_se,
        ci_high: slope + t * slope_se,
    })
}

/// Validation criterion used when selecting α.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Held-out square loss against orthogonally corrected labels built from
    /// a teacher fitted on the training split (lower loss scores higher).
    #[default]
    CorrectedLoss,
    Auc,
    Accuracy,
    /// AUC for binary problems, accuracy otherwise.
    Auto,
}

/// A prepared held-out split that scores students (higher is better).
pub struct Evaluator {
    metric: ValidationMetric,
    features: Array2<f64>,
    classes: Vec<usize>,
    targets: Option<Array2<f64>>,
}

impl ValidationMetric {
    pub fn evaluator(
        &self,
        train: &LabeledDataset,
        val: &LabeledDataset,
        config: &DistillConfig,
    ) -> Result<Evaluator> {
        let metric = match self {
            ValidationMetric::Auto if val.k() == 2 => ValidationMetric::Auc,
            ValidationMetric::Auto => ValidationMetric::Accuracy,
            m => *m,
        };
        let targets = if metric == ValidationMetric::CorrectedLoss {
            let teacher = config.teacher.fit(train, config.clip_floor)?;
            let probs = teacher.predict_proba(val.features())?;
            Some(orthogonal_labels(val.labels(), &probs)?)
        } else {
            None
        };
        Ok(Evaluator {
            metric,
            features: val.features().clone(),
            classes: val.classes(),
            targets,
        })
    }
}

/// Corrected SEL labels with the orthogonal choice v = 1/p̂.
pub fn orthogonal_labels(labels: &Array2<f64>, probs: &ProbabilityField) -> Result<Array2<f64>> {
    let v = GammaPolicy::ORTHOGONAL.field(labels, probs)?;
    let mut out = Array2::zeros(labels.dim());
    for i in 0..labels.nrows() {
        let l = corrected_sel_labels(
            &probs.row(i).to_vec(),
            &labels.row(i).to_vec(),
            &v.row(i).to_vec(),
        )?;
        for (j, x) in l.into_iter().enumerate() {
            out[[i, j]] = x;
        }
    }
    Ok(out)
}

/// Mean over rows of ½‖f(x_i) − L_i‖².
pub fn square_loss(scores: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
    if scores.dim() != targets.dim() {
        return invalid("scores and targets differ in shape");
    }
    let total: f64 = scores
        .iter()
        .zip(targets.iter())
        .map(|(s, t)| 0.5 * (s - t).powi(2))
        .sum();
    Ok(total / scores.nrows() as f64)
}

impl Evaluator {
    pub fn metric(&self) -> ValidationMetric {
        self.metric
    }

    pub fn score(&self, student: &ScoreModel) -> Result<f64> {
        let scores = student.predict_scores(&self.features)?;
        match self.metric {
            ValidationMetric::CorrectedLoss => {
                let targets = self
                    .targets
                    .as_ref()
                    .expect("targets prepared for corrected loss");
                Ok(-square_loss(&scores, targets)?)
            }
            ValidationMetric::Auc => auc_binary(&score_margin(&scores), &self.classes),
            ValidationMetric::Accuracy | ValidationMetric::Auto => accuracy(&scores, &self.classes),
        }
    }
}
