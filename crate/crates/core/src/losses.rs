//! Pointwise distillation losses and their loss-corrected variants.
//!
//! All functions act on a single example: `f` is the student output, `p` the
//! (clipped) teacher probabilities, `y` the one-hot label and `v` the diagonal
//! of the correction matrix γ(x). The corrected loss is
//!
//! ```text
//! ℓ_γ(f) = ℓ(f, p) − (y − p)ᵀ γ f
//! ```
//!
//! which is mean-zero in the correction term when `p` equals the Bayes
//! probabilities. With this orientation the Neyman-orthogonal choice is
//! γ = −∇_φπ ℓ, which is `diag(1/p)` for SEL (see [`correction_matrix`]),
//! and the SEL minimizer is the corrected label `log p + γ(y − p)`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simplex::CorrectionField;

/// Base distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossSpec {
    /// Squared error between student scores and teacher log-probabilities.
    Sel,
    /// Annealed cross-entropy with inverse temperature `beta`.
    Ace { beta: f64 },
}

impl LossSpec {
    pub fn ace(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return invalid(format!(
                "ACE inverse temperature must be positive, got {beta}"
            ));
        }
        Ok(Self::Ace { beta })
    }

    pub fn value(&self, f: &[f64], p: &[f64]) -> Result<f64> {
        match *self {
            LossSpec::Sel => sel_loss(f, p),
            LossSpec::Ace { beta } => ace_loss(f, p, beta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::Sel => "sel",
            LossSpec::Ace { .. } => "ace",
        }
    }
}

fn check_dims(f: &[f64], p: &[f64]) -> Result<()> {
    if f.len() != p.len() {
        return invalid(format!(
            "student output has {} entries, teacher {}",
            f.len(),
            p.len()
        ));
    }
    if f.is_empty() {
        return invalid("empty score vector");
    }
    Ok(())
}

fn check_positive(p: &[f64]) -> Result<()> {
    if p.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return invalid("teacher probabilities must be positive and finite");
    }
    Ok(())
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Σ_j ½ (f_j − log p_j)².
pub fn sel_loss(f: &[f64], p: &[f64]) -> Result<f64> {
    check_dims(f, p)?;
    check_positive(p)?;
    Ok(f.iter()
        .zip(p)
        .map(|(fj, pj)| 0.5 * (fj - pj.ln()).powi(2))
        .sum())
}

/// Annealed weights p_j^β / Σ_l p_l^β, computed in log space.
pub fn ace_weights(p: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_positive(p)?;
    let logs: Vec<f64> = p.iter().map(|pj| beta * pj.ln()).collect();
    let norm = log_sum_exp(logs.iter().copied());
    Ok(logs.iter().map(|l| (l - norm).exp()).collect())
}

fn softmax_scaled(f: &[f64], beta: f64) -> Vec<f64> {
    let norm = log_sum_exp(f.iter().map(|x| beta * x));
    f.iter().map(|x| (beta * x - norm).exp()).collect()
}

/// −Σ_j w_j(p, β) log softmax(βf)_j.
pub fn ace_loss(f: &[f64], p: &[f64], beta: f64) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return invalid(format!(
            "ACE inverse temperature must be positive, got {beta}"
        ));
    }
    check_dims(f, p)?;
    let w = ace_weights(p, beta)?;
    let norm = log_sum_exp(f.iter().map(|x| beta * x));
    Ok(-w
        .iter()
        .zip(f)
        .map(|(wj, fj)| wj * (beta * fj - norm))
        .sum::<f64>())
}

/// Gradient of the base loss with respect to the student output.
pub fn grad_phi(loss: &LossSpec, f: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    check_dims(f, p)?;
    match *loss {
        LossSpec::Sel => {
            check_positive(p)?;
            Ok(f.iter().zip(p).map(|(fj, pj)| fj - pj.ln()).collect())
        }
        LossSpec::Ace { beta } => {
            if !(beta > 0.0) {
                return invalid("ACE inverse temperature must be positive");
            }
            let w = ace_weights(p, beta)?;
            let s = softmax_scaled(f, beta);
            Ok(s.iter().zip(&w).map(|(sj, wj)| beta * (sj - wj)).collect())
        }
    }
}

/// Correction matrix C = −∇_φπ ℓ, independent of `f` for both losses.
///
/// Entry `[i, j]` multiplies `(y − p)_i f_j` in the orthogonal loss.
/// SEL: `diag(1/p)`. ACE: `β² (w_i / p_i)(δ_ij − w_j)`.
pub fn correction_matrix(loss: &LossSpec, p: &[f64]) -> Result<Array2<f64>> {
    check_positive(p)?;
    let k = p.len();
    match *loss {
        LossSpec::Sel => Ok(Array2::from_diag(&ndarray::Array1::from_iter(
            p.iter().map(|pj| 1.0 / pj),
        ))),
        LossSpec::Ace { beta } => {
            let w = ace_weights(p, beta)?;
            let b2 = beta * beta;
            Ok(Array2::from_shape_fn((k, k), |(i, j)| {
                let delta = if i == j { 1.0 } else { 0.0 };
                b2 * w[i] / p[i] * (delta - w[j])
            }))
        }
    }
}

/// Central-difference estimate of `[∂²ℓ/∂φ_j ∂π_i]` at `(f, p)` with step `h`.
pub fn numerical_cross_partial(
    loss: &LossSpec,
    f: &[f64],
    p: &[f64],
    h: f64,
) -> Result<Array2<f64>> {
    numerical_cross_partial_of(|f, p| loss.value(f, p), f, p, h)
}

/// Same finite-difference scheme for an arbitrary pointwise loss.
pub fn numerical_cross_partial_of<L>(loss: L, f: &[f64], p: &[f64], h: f64) -> Result<Array2<f64>>
where
    L: Fn(&[f64], &[f64]) -> Result<f64>,
{
    check_dims(f, p)?;
    if !(h > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    if p.iter().any(|&pi| pi - h <= 0.0) {
        return invalid(format!("step {h} pushes a probability to or below zero"));
    }
    let k = p.len();
    let mut out = Array2::zeros((k, k));
    let mut fb = f.to_vec();
    let mut pb = p.to_vec();
    for i in 0..k {
        for j in 0..k {
            let mut eval = |df: f64, dp: f64| -> Result<f64> {
                fb[j] = f[j] + df;
                pb[i] = p[i] + dp;
                let v = loss(&fb, &pb);
                fb[j] = f[j];
                pb[i] = p[i];
                v
            };
            let pp = eval(h, h)?;
            let pm = eval(h, -h)?;
            let mp = eval(-h, h)?;
            let mm = eval(-h, -h)?;
            out[[i, j]] = (pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    Ok(out)
}

/// Σ_j (y_j − p_j) v_j f_j, the bilinear correction for a diagonal γ.
pub fn correction_term(f: &[f64], p: &[f64], y: &[f64], v: &[f64]) -> f64 {
    f.iter()
        .zip(p)
        .zip(y)
        .zip(v)
        .map(|(((fj, pj), yj), vj)| (yj - pj) * vj * fj)
        .sum()
}

fn check_corrected(f: &[f64], p: &[f64], y: &[f64], v: &[f64]) -> Result<()> {
    check_dims(f, p)?;
    if y.len() != f.len() || v.len() != f.len() {
        return invalid("label or correction vector has the wrong length");
    }
    Ok(())
}

/// Base loss minus the diagonal γ-correction.
pub fn gamma_corrected_loss(
    base: &LossSpec,
    f: &[f64],
    p: &[f64],
    y: &[f64],
    v: &[f64],
) -> Result<f64> {
    check_corrected(f, p, y, v)?;
    let l = base.value(f, p)?;
    if v.iter().all(|&x| x == 0.0) {
        return Ok(l);
    }
    Ok(l - correction_term(f, p, y, v))
}

/// Base loss minus `(y − p)ᵀ γ f` for a full `k × k` matrix γ.
pub fn matrix_corrected_loss(
    base: &LossSpec,
    f: &[f64],
    p: &[f64],
    y: &[f64],
    gamma: &Array2<f64>,
) -> Result<f64> {
    check_dims(f, p)?;
    let k = f.len();
    if y.len() != k || gamma.dim() != (k, k) {
        return invalid("label vector or correction matrix has the wrong shape");
    }
    let mut bilinear = 0.0;
    for i in 0..k {
        let r = y[i] - p[i];
        for j in 0..k {
            bilinear += r * gamma[[i, j]] * f[j];
        }
    }
    Ok(base.value(f, p)? - bilinear)
}

/// Orthogonal loss: γ set to the full correction matrix of `base` at `p`.
pub fn orthogonal_loss(base: &LossSpec, f: &[f64], p: &[f64], y: &[f64]) -> Result<f64> {
    let gamma = correction_matrix(base, p)?;
    matrix_corrected_loss(base, f, p, y, &gamma)
}

/// Gradient in φ of the γ-corrected loss: ∇_φ ℓ − v ∘ (y − p).
pub fn gamma_corrected_grad(
    base: &LossSpec,
    f: &[f64],
    p: &[f64],
    y: &[f64],
    v: &[f64],
) -> Result<Vec<f64>> {
    check_corrected(f, p, y, v)?;
    let mut g = grad_phi(base, f, p)?;
    for j in 0..g.len() {
        g[j] -= v[j] * (y[j] - p[j]);
    }
    Ok(g)
}

/// Square-loss labels that make corrected SEL equivalent to plain SEL:
/// `log p + v ∘ (y − p)`.
pub fn corrected_sel_labels(p: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if y.len() != p.len() || v.len() != p.len() {
        return invalid("label or correction vector has the wrong length");
    }
    check_positive(p)?;
    Ok(p.iter()
        .zip(y)
        .zip(v)
        .map(|((pj, yj), vj)| pj.ln() + vj * (yj - pj))
        .collect())
}

/// A base loss bound to a per-example correction field.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedLossSpec<'a> {
    pub base: LossSpec,
    pub correction: &'a CorrectionField,
}

impl CorrectedLossSpec<'_> {
    /// Corrected loss of example `i`.
    pub fn value(&self, i: usize, f: &[f64], p: &[f64], y: &[f64]) -> Result<f64> {
        let v = self.correction.row(i);
        let v = v
            .as_slice()
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| v.to_vec());
        gamma_corrected_loss(&self.base, f, p, y, &v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sel_examples() {
        let p = [0.3, 0.7];
        let f: Vec<f64> = p.iter().map(|v: &f64| v.ln()).collect();
        assert_eq!(sel_loss(&f, &p).unwrap(), 0.0);
        assert_eq!(sel_loss(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        // two coordinates of ½ (ln 2)² each
        assert!(close(
            sel_loss(&[0.0, 0.0], &[0.5, 0.5]).unwrap(),
            LN2 * LN2,
            1e-15
        ));
        assert!(close(LN2 * LN2, 0.4805, 1e-4));
        assert!(sel_loss(&[0.0, 0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn ace_examples() {
        // β = 1 on the simplex is plain cross-entropy with soft labels.
        let p = [0.2, 0.5, 0.3];
        let f = [0.4, -1.0, 2.0];
        let z: f64 = f.iter().map(|x: &f64| x.exp()).sum();
        let ce: f64 = -p
            .iter()
            .zip(&f)
            .map(|(pj, fj)| pj * (fj.exp() / z).ln())
            .sum::<f64>();
        assert!(close(ace_loss(&f, &p, 1.0).unwrap(), ce, 1e-12));

        // uniform logits give log k
        for beta in [0.5, 1.0, 3.0] {
            let v = ace_loss(&[1.5, 1.5, 1.5], &p, beta).unwrap();
            assert!(close(v, 3f64.ln(), 1e-12));
        }

        // β = 2, p = [0.8, 0.2], f = [1, 0]: weights [0.64, 0.04]/0.68,
        // log-softmax(2f) = [2 − ln(e² + 1), −ln(e² + 1)]
        let e2 = 2f64.exp();
        let lse = (e2 + 1.0).ln();
        let w0 = 0.64 / 0.68;
        let w1 = 0.04 / 0.68;
        let expected = -(w0 * (2.0 - lse) + w1 * (-lse));
        assert!(close(
            ace_loss(&[1.0, 0.0], &[0.8, 0.2], 2.0).unwrap(),
            expected,
            1e-12
        ));

        assert!(ace_loss(&[0.0, 0.0], &p[..2], 0.0).is_err());
        assert!(LossSpec::ace(-1.0).is_err());
    }

    #[test]
    fn ace_is_stable_for_large_logits() {
        let v = ace_loss(&[800.0, -800.0], &[0.5, 0.5], 1.0).unwrap();
        assert!(v.is_finite());
        assert!(close(v, 800.0, 1e-9));
    }

    #[test]
    fn grad_examples() {
        let p = [0.25, 0.75];
        let f: Vec<f64> = p.iter().map(|v: &f64| v.ln()).collect();
        assert!(grad_phi(&LossSpec::Sel, &f, &p)
            .unwrap()
            .iter()
            .all(|g| g.abs() < 1e-15));

        let beta = 2.0;
        let w = ace_weights(&p, beta).unwrap();
        let f: Vec<f64> = w.iter().map(|x| x.ln() / beta).collect();
        let g = grad_phi(&LossSpec::Ace { beta }, &f, &p).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));

        let g = grad_phi(&LossSpec::Sel, &[0.0, 0.0], &[0.5, 0.5]).unwrap();
        let h = 1e-6;
        for j in 0..2 {
            let mut fp = [0.0, 0.0];
            let mut fm = [0.0, 0.0];
            fp[j] += h;
            fm[j] -= h;
            let fd = (sel_loss(&fp, &[0.5, 0.5]).unwrap() - sel_loss(&fm, &[0.5, 0.5]).unwrap())
                / (2.0 * h);
            assert!(close(fd, LN2, 1e-8));
            assert!(close(g[j], LN2, 1e-15));
        }
    }

    #[test]
    fn correction_matrix_examples() {
        let c = correction_matrix(&LossSpec::Sel, &[0.5, 0.5]).unwrap();
        assert_eq!(c, ndarray::array![[2.0, 0.0], [0.0, 2.0]]);
        let c = correction_matrix(&LossSpec::Sel, &[1.0, 1.0]).unwrap();
        assert_eq!(c, Array2::<f64>::eye(2));

        let ace = LossSpec::Ace { beta: 1.0 };
        let p = [0.7, 0.3];
        let c = correction_matrix(&ace, &p).unwrap();
        let num = numerical_cross_partial(&ace, &[0.3, -0.2], &p, 1e-5).unwrap();
        for (a, b) in c.iter().zip(num.iter()) {
            assert!(close(*a, -b, 1e-5), "{a} vs {b}");
        }
    }

    #[test]
    fn cross_partial_examples() {
        let num =
            numerical_cross_partial(&LossSpec::Sel, &[0.1, -0.4], &[0.25, 0.75], 1e-5).unwrap();
        assert!(close(num[[0, 0]], -4.0, 1e-5));
        assert!(close(num[[1, 1]], -4.0 / 3.0, 1e-5));
        assert!(num[[0, 1]].abs() < 1e-8 && num[[1, 0]].abs() < 1e-8);

        // a loss constant in p has zero cross partial
        let flat = |f: &[f64], _p: &[f64]| -> Result<f64> { Ok(f.iter().map(|x| x * x).sum()) };
        let z = numerical_cross_partial_of(flat, &[0.3, 0.1], &[0.4, 0.6], 1e-5).unwrap();
        assert!(z.iter().all(|x| x.abs() < 1e-8));

        assert!(numerical_cross_partial(&LossSpec::Sel, &[0.0, 0.0], &[0.5, 0.5], 0.6).is_err());
    }

    #[test]
    fn gamma_corrected_examples() {
        let f = [-1.0, 0.0];
        let p = [0.5, 0.5];
        let y = [1.0, 0.0];
        let base = sel_loss(&f, &p).unwrap();
        assert_eq!(
            gamma_corrected_loss(&LossSpec::Sel, &f, &p, &y, &[0.0, 0.0]).unwrap(),
            base
        );
        assert_eq!(
            gamma_corrected_loss(&LossSpec::Sel, &f, &p, &p, &[3.0, 1.0]).unwrap(),
            base
        );
        // correction term (0.5·2·(−1) + (−0.5)·2·0) = −1 is subtracted
        let v = gamma_corrected_loss(&LossSpec::Sel, &f, &p, &y, &[2.0, 2.0]).unwrap();
        assert!(close(v, base + 1.0, 1e-15));
        assert!(gamma_corrected_loss(&LossSpec::Sel, &f, &p, &y, &[2.0]).is_err());
    }

    #[test]
    fn orthogonal_examples() {
        let p = [0.5, 0.5];
        let y = [1.0, 0.0];
        let (a, b) = (0.3, -1.2);
        let base = sel_loss(&[a, b], &p).unwrap();
        let v = orthogonal_loss(&LossSpec::Sel, &[a, b], &p, &y).unwrap();
        assert!(close(v, base - a + b, 1e-14));
        assert!(close(
            orthogonal_loss(&LossSpec::Sel, &[a, b], &p, &p).unwrap(),
            base,
            1e-15
        ));

        let c = correction_matrix(&LossSpec::Sel, &[1e-3, 0.999]).unwrap();
        assert!(c.iter().all(|&x| x <= 1000.0 + 1e-9));
    }

    #[test]
    fn corrected_label_examples() {
        let p = [0.2, 0.3, 0.5];
        let y = [0.0, 1.0, 0.0];
        let l = corrected_sel_labels(&p, &y, &[0.0; 3]).unwrap();
        for (lj, pj) in l.iter().zip(&p) {
            assert_eq!(*lj, pj.ln());
        }
        let v: Vec<f64> = p.iter().map(|x| 1.0 / x).collect();
        let l = corrected_sel_labels(&p, &y, &v).unwrap();
        assert!(close(l[1], 0.3f64.ln() + 0.7 / 0.3, 1e-14));
        assert!(close(l[0], 0.2f64.ln() - 1.0, 1e-14));
        assert!(close(l[2], 0.5f64.ln() - 1.0, 1e-14));
    }

    #[test]
    fn corrected_label_is_pointwise_minimizer() {
        let p = [0.35, 0.65];
        let y = [1.0, 0.0];
        let v = [1.7, 0.4];
        let labels = corrected_sel_labels(&p, &y, &v).unwrap();
        // grid search each coordinate while holding the other at its label
        for j in 0..2 {
            let mut best = (f64::INFINITY, 0.0);
            let mut t = -6.0;
            while t <= 4.0 {
                let mut f = labels.clone();
                f[j] = t;
                let val = gamma_corrected_loss(&LossSpec::Sel, &f, &p, &y, &v).unwrap();
                if val < best.0 {
                    best = (val, t);
                }
                t += 1e-4;
            }
            assert!(
                close(best.1, labels[j], 1e-4),
                "coordinate {j}: {} vs {}",
                best.1,
                labels[j]
            );
        }
    }

    #[test]
    fn corrected_grad_matches_finite_difference() {
        let base = LossSpec::Ace { beta: 1.5 };
        let f = [0.2, -0.7, 1.1];
        let p = [0.3, 0.2, 0.5];
        let y = [0.0, 0.0, 1.0];
        let v = [0.5, 2.0, 1.0];
        let g = gamma_corrected_grad(&base, &f, &p, &y, &v).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut fp = f;
            let mut fm = f;
            fp[j] += h;
            fm[j] -= h;
            let fd = (gamma_corrected_loss(&base, &fp, &p, &y, &v).unwrap()
                - gamma_corrected_loss(&base, &fm, &p, &y, &v).unwrap())
                / (2.0 * h);
            assert!(close(fd, g[j], 1e-7));
        }
    }
}
