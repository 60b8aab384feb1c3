//! Synthetic families with known Bayes probabilities, CSV ingestion and
//! oracle error measurements.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, KdError, Result};
use crate::seeding::rng_from;
use crate::simplex::{one_hot, LabeledDataset};
use crate::students::ScoreModel;

/// Softmax of an affine-plus-sine score on `Uniform[0,1]^d`.
///
/// Class 0 has score 0; class `j ≥ 1` has
/// `slope · Σ_l c_jl (x_l − ½)/√d + amplitude · sin(2π · frequency · x_{(j−1) mod d} + j)`
/// with `c_jl = (−1)^{(j−1)l}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFamily {
    pub d: usize,
    pub k: usize,
    pub slope: f64,
    pub amplitude: f64,
    pub frequency: f64,
}

impl SmoothFamily {
    pub fn new(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            slope: 1.5,
            amplitude: 0.5,
            frequency: 1.0,
        }
    }

    /// Upper bound on |score| over the unit cube.
    fn score_bound(&self) -> f64 {
        self.slope.abs() * (self.d as f64).sqrt() / 2.0 + self.amplitude.abs()
    }

    fn p0_into(&self, x: &[f64], out: &mut [f64]) {
        let sqrt_d = (self.d as f64).sqrt();
        let mut scores = vec![0.0; self.k];
        for (j, s) in scores.iter_mut().enumerate().skip(1) {
            let lin: f64 = x
                .iter()
                .enumerate()
                .map(|(l, xl)| {
                    let sign = if ((j - 1) * l) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (xl - 0.5)
                })
                .sum();
            let wave = (2.0 * std::f64::consts::PI * self.frequency * x[(j - 1) % self.d]
                + j as f64)
                .sin();
            *s = self.slope * lin / sqrt_d + self.amplitude * wave;
        }
        softmax_into(&scores, out);
    }
}

/// Gaussian class-conditional mixtures with equal class priors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFamily {
    /// Informative dimensions.
    pub d: usize,
    pub k: usize,
    pub components: usize,
    /// Component means are uniform on `[−spread, spread]^d`.
    pub spread: f64,
    pub sigma: f64,
    /// Extra pure-noise standard normal dimensions.
    pub noise_dims: usize,
    /// Seed for the component means (the family itself, not the sample).
    pub family_seed: u64,
}

impl MixtureFamily {
    pub fn new(d: usize, k: usize) -> Self {
        Self {
            d,
            k,
            components: 3,
            spread: 1.5,
            sigma: 1.0,
            noise_dims: 2,
            family_seed: 7,
        }
    }

    /// `means[c][m]` is the mean of component `m` of class `c`.
    fn means(&self) -> Vec<Vec<Vec<f64>>> {
        let mut rng = rng_from(self.family_seed, &[0x313C]);
        (0..self.k)
            .map(|_| {
                (0..self.components)
                    .map(|_| {
                        (0..self.d)
                            .map(|_| rng.random_range(-self.spread..=self.spread))
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    fn p0_with(&self, means: &[Vec<Vec<f64>>], x: &[f64], out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let mut log_lik = vec![0.0; self.k];
        for (c, comps) in means.iter().enumerate() {
            let terms: Vec<f64> = comps
                .iter()
                .map(|mu| {
                    -inv * mu
                        .iter()
                        .zip(x)
                        .map(|(m, xi)| (xi - m).powi(2))
                        .sum::<f64>()
                })
                .collect();
            log_lik[c] = log_sum_exp(&terms);
        }
        softmax_into(&log_lik, out);
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax_into(s: &[f64], out: &mut [f64]) {
    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, v) in out.iter_mut().zip(s) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// A data-generating process with known p₀.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BayesOracle {
    /// p₀ does not depend on x; features are uniform noise of dimension `d`.
    Constant {
        p0: Vec<f64>,
        d: usize,
    },
    LogisticSmooth(SmoothFamily),
    TabularMixture(MixtureFamily),
}

impl BayesOracle {
    pub fn constant(p0: Vec<f64>) -> Self {
        BayesOracle::Constant { p0, d: 1 }
    }

    pub fn k(&self) -> usize {
        match self {
            BayesOracle::Constant { p0, .. } => p0.len(),
            BayesOracle::LogisticSmooth(f) => f.k,
            BayesOracle::TabularMixture(f) => f.k,
        }
    }

    /// Feature dimension of generated samples.
    pub fn d(&self) -> usize {
        match self {
            BayesOracle::Constant { d, .. } => *d,
            BayesOracle::LogisticSmooth(f) => f.d,
            BayesOracle::TabularMixture(f) => f.d + f.noise_dims,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BayesOracle::Constant { .. } => "constant",
            BayesOracle::LogisticSmooth(_) => "smooth",
            BayesOracle::TabularMixture(_) => "mixture",
        }
    }

    /// Checks parameters and, where p₀ is bounded analytically, that every
    /// class probability is at least `2 · clip_floor`.
    pub fn validate(&self, clip_floor: f64) -> Result<()> {
        let floor = 2.0 * clip_floor;
        match self {
            BayesOracle::Constant { p0, d } => {
                if p0.len() < 2 || *d == 0 {
                    return invalid("constant family needs k ≥ 2 and d ≥ 1");
                }
                if p0.iter().any(|v| !v.is_finite()) || (p0.iter().sum::<f64>() - 1.0).abs() > 1e-12
                {
                    return invalid("p0 must be a finite probability vector");
                }
                if let Some(v) = p0.iter().find(|&&v| v < floor) {
                    return invalid(format!("p0 entry {v} is below 2ε = {floor}"));
                }
            }
            BayesOracle::LogisticSmooth(f) => {
                if f.d == 0 || f.k < 2 {
                    return invalid("smooth family needs k ≥ 2 and d ≥ 1");
                }
                if ![f.slope, f.amplitude, f.frequency]
                    .iter()
                    .all(|v| v.is_finite())
                {
                    return invalid("smooth family parameters must be finite");
                }
                let lower = 1.0 / (1.0 + (f.k as f64 - 1.0) * (2.0 * f.score_bound()).exp());
                if lower < floor {
                    return invalid(format!(
                        "smooth family can reach probability {lower:.3e}, below 2ε = {floor}"
                    ));
                }
            }
            BayesOracle::TabularMixture(f) => {
                if f.d == 0 || f.k < 2 || f.components == 0 {
                    return invalid("mixture family needs k ≥ 2, d ≥ 1 and at least one component");
                }
                if !(f.sigma > 0.0) || !(f.spread >= 0.0) || !f.spread.is_finite() {
                    return invalid("mixture family needs sigma > 0 and finite spread ≥ 0");
                }
            }
        }
        Ok(())
    }

    /// p₀ at every row of `x`.
    pub fn p0(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d() {
            return invalid(format!(
                "oracle expects {} features, got {}",
                self.d(),
                x.ncols()
            ));
        }
        let k = self.k();
        let mut out = Array2::zeros((x.nrows(), k));
        let means = match self {
            BayesOracle::TabularMixture(f) => Some(f.means()),
            _ => None,
        };
        for (i, row) in x.outer_iter().enumerate() {
            let xr = row.to_vec();
            let mut p = vec![0.0; k];
            match self {
                BayesOracle::Constant { p0, .. } => p.copy_from_slice(p0),
                BayesOracle::LogisticSmooth(f) => f.p0_into(&xr, &mut p),
                BayesOracle::TabularMixture(f) => {
                    f.p0_with(means.as_ref().unwrap(), &xr[..f.d], &mut p)
                }
            }
            out.row_mut(i).assign(&Array1::from(p));
        }
        Ok(out)
    }

    /// Draws `n` covariate vectors from the family's marginal law.
    pub fn sample_features(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        match self {
            BayesOracle::Constant { .. } | BayesOracle::LogisticSmooth(_) => {
                Array2::from_shape_simple_fn((n, self.d()), || rng.random::<f64>())
            }
            BayesOracle::TabularMixture(f) => {
                let means = f.means();
                let mut x = Array2::zeros((n, self.d()));
                for i in 0..n {
                    let c = rng.random_range(0..f.k);
                    let m = rng.random_range(0..f.components);
                    for l in 0..f.d {
                        let z: f64 = rng.sample(StandardNormal);
                        x[[i, l]] = means[c][m][l] + f.sigma * z;
                    }
                    for l in f.d..self.d() {
                        x[[i, l]] = rng.sample(StandardNormal);
                    }
                }
                x
            }
        }
    }
}

/// A generated dataset with its p₀ values.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub dataset: LabeledDataset,
    pub p0: Array2<f64>,
}

/// Draws X from the family and Y ~ Multinomial(p₀(X)).
pub fn generate(oracle: &BayesOracle, n: usize, seed: u64) -> Result<SyntheticSample> {
    if n == 0 {
        return invalid("cannot generate an empty sample");
    }
    oracle.validate(0.0)?;
    let mut rng = rng_from(seed, &[0xDA7A]);
    let x = oracle.sample_features(n, &mut rng);
    let p0 = oracle.p0(&x)?;
    let classes: Vec<usize> = p0
        .outer_iter()
        .map(|p| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    return j;
                }
            }
            p.len() - 1
        })
        .collect();
    let dataset = LabeledDataset::from_classes(x, &classes, oracle.k())?;
    Ok(SyntheticSample { dataset, p0 })
}

/// A Monte-Carlo or exact constant target with its standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantTarget {
    pub value: Vec<f64>,
    pub se: Vec<f64>,
}

/// `f₀ = E[log p₀(X)]`, exact for the constant family and by `m`-sample
/// Monte Carlo otherwise.
pub fn constant_f0(oracle: &BayesOracle, m: usize, seed: u64) -> Result<ConstantTarget> {
    if let BayesOracle::Constant { p0, .. } = oracle {
        return Ok(ConstantTarget {
            value: p0.iter().map(|p| p.ln()).collect(),
            se: vec![0.0; p0.len()],
        });
    }
    if m < 2 {
        return invalid("Monte Carlo needs at least two draws");
    }
    let mut rng = rng_from(seed, &[0xF0]);
    let k = oracle.k();
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let chunk = 65_536;
    let mut done = 0;
    while done < m {
        let take = chunk.min(m - done);
        let x = oracle.sample_features(take, &mut rng);
        let p = oracle.p0(&x)?;
        for row in p.outer_iter() {
            for j in 0..k {
                let l = row[j].ln();
                sum[j] += l;
                sum_sq[j] += l * l;
            }
        }
        done += take;
    }
    let mf = m as f64;
    let value: Vec<f64> = sum.iter().map(|s| s / mf).collect();
    let se = (0..k)
        .map(|j| {
            let var = (sum_sq[j] - mf * value[j] * value[j]) / (mf - 1.0);
            (var.max(0.0) / mf).sqrt()
        })
        .collect();
    Ok(ConstantTarget { value, se })
}

/// Per-class check of `ε < ¼ · E[p₀(1−p₀)²] / E[(1−p₀)/p₀]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCondition {
    pub thresholds: Vec<f64>,
    pub satisfied: bool,
}

pub fn clip_condition(
    oracle: &BayesOracle,
    clip_floor: f64,
    m: usize,
    seed: u64,
) -> Result<ClipCondition> {
    let mut rng = rng_from(seed, &[0xC1]);
    let x = oracle.sample_features(m.max(1), &mut rng);
    let p = oracle.p0(&x)?;
    let thresholds: Vec<f64> = p
        .columns()
        .into_iter()
        .map(|c| {
            let num = c.iter().map(|q| q * (1.0 - q).powi(2)).sum::<f64>();
            let den = c.iter().map(|q| (1.0 - q) / q).sum::<f64>();
            if den == 0.0 {
                f64::INFINITY
            } else {
                0.25 * num / den
            }
        })
        .collect();
    let satisfied = thresholds.iter().all(|&t| clip_floor < t);
    Ok(ClipCondition {
        thresholds,
        satisfied,
    })
}

/// What a student's error is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum F0Target {
    /// The unconstrained target log p₀(x).
    LogBayes,
    /// A fixed vector, e.g. the constant-class optimum.
    Constant { value: Vec<f64> },
}

/// Monte-Carlo estimate of `E‖f̂(X) − f₀(X)‖²` over `m` fresh draws, with its
/// standard error.
pub fn student_mse_to_f0(
    student: &ScoreModel,
    oracle: &BayesOracle,
    target: &F0Target,
    m: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if m == 0 {
        return invalid("need at least one probe point");
    }
    let mut rng = rng_from(seed, &[0x5E]);
    let x = oracle.sample_features(m, &mut rng);
    let scores = student.predict_scores(&x)?;
    let f0 = match target {
        F0Target::LogBayes => oracle.p0(&x)?.mapv(f64::ln),
        F0Target::Constant { value } => {
            if value.len() != scores.ncols() {
                return invalid("target length differs from the student's output dimension");
            }
            Array2::from_shape_fn(scores.dim(), |(_, j)| value[j])
        }
    };
    let errs: Vec<f64> = scores
        .outer_iter()
        .zip(f0.outer_iter())
        .map(|(s, t)| s.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    Ok(crate::metrics::mean_and_se(&errs))
}

/// Number of test rows for a split with the given fraction (at least one
/// row on each side).
pub fn split_test_size(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded random train/test split.
pub fn train_test_split(
    data: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if data.n() < 2 || !(test_fraction > 0.0 && test_fraction < 1.0) {
        return invalid("a split needs at least two rows and a test fraction in (0, 1)");
    }
    let mut idx: Vec<usize> = (0..data.n()).collect();
    idx.shuffle(&mut rng_from(seed, &[0x5911]));
    let n_test = split_test_size(data.n(), test_fraction);
    let (test, train) = idx.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train)?, data.subset(&test)?))
}

/// Which columns to read and how.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Columns one-hot encoded in sorted-category order.
    pub categorical: Vec<String>,
}

/// A loaded CSV with the names behind each feature column and class.
#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: LabeledDataset,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

fn parse_error(line: u64, message: impl Into<String>) -> KdError {
    KdError::Parse {
        line: line as usize,
        message: message.into(),
    }
}

/// Reads a headered CSV. Labels map to class indices in sorted order
/// (numeric order when every label parses as a number).
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(parse_error(1, "missing header row"));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == &schema.label_column)
        .ok_or_else(|| {
            parse_error(
                1,
                format!("label column '{}' not found", schema.label_column),
            )
        })?;
    for c in &schema.categorical {
        if !headers.contains(c) {
            return Err(parse_error(
                1,
                format!("categorical column '{c}' not found"),
            ));
        }
    }

    let mut rows: Vec<(u64, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
    }
    if rows.is_empty() {
        return Err(parse_error(1, "file has no data rows"));
    }

    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != label_idx).collect();
    let mut categories: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for &c in &feature_cols {
        if schema.categorical.contains(&headers[c]) {
            let set: BTreeSet<String> = rows.iter().map(|(_, r)| r[c].clone()).collect();
            categories.insert(c, set.into_iter().collect());
        }
    }
    let mut feature_names = Vec::new();
    for &c in &feature_cols {
        match categories.get(&c) {
            Some(levels) => {
                feature_names.extend(levels.iter().map(|l| format!("{}={l}", headers[c])))
            }
            None => feature_names.push(headers[c].clone()),
        }
    }

    let raw_labels: Vec<&str> = rows.iter().map(|(_, r)| r[label_idx].as_str()).collect();
    let mut class_names: Vec<String> = raw_labels
        .iter()
        .map(|s| s.to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if class_names.iter().all(|s| s.parse::<f64>().is_ok()) {
        class_names.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    if class_names.len() < 2 {
        return invalid(format!(
            "label column '{}' has fewer than two classes",
            schema.label_column
        ));
    }

    let n = rows.len();
    let mut features = Array2::zeros((n, feature_names.len()));
    let mut classes = Vec::with_capacity(n);
    for (i, (line, r)) in rows.iter().enumerate() {
        let mut col = 0;
        for &c in &feature_cols {
            if let Some(levels) = categories.get(&c) {
                let pos = levels.binary_search(&r[c]).expect("level collected above");
                features[[i, col + pos]] = 1.0;
                col += levels.len();
            } else {
                let v: f64 = r[c].parse().map_err(|_| {
                    parse_error(
                        *line,
                        format!(
                            "column '{}': cannot parse '{}' as a number",
                            headers[c], r[c]
                        ),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_error(
                        *line,
                        format!("column '{}': non-finite value", headers[c]),
                    ));
                }
                features[[i, col]] = v;
                col += 1;
            }
        }
        classes.push(class_names.iter().position(|s| s == &r[label_idx]).unwrap());
    }
    let dataset = LabeledDataset::new(features, one_hot(&classes, class_names.len())?)?;
    Ok(LoadedCsv {
        dataset,
        feature_names,
        class_names,
    })
}

/// Writes features as `x0, x1, …` (or the given names) plus a `label` column
/// holding class indices.
pub fn write_csv(
    path: impl AsRef<Path>,
    data: &LabeledDataset,
    feature_names: Option<&[String]>,
) -> Result<()> {
    let names: Vec<String> = match feature_names {
        Some(n) if n.len() == data.d() => n.to_vec(),
        Some(_) => return invalid("feature name count differs from the feature dimension"),
        None => (0..data.d()).map(|j| format!("x{j}")).collect(),
    };
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = names;
    header.push("label".into());
    w.write_record(&header)?;
    for (row, c) in data.features().outer_iter().zip(data.classes()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(c.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_family_frequency() {
        let oracle = BayesOracle::constant(vec![0.7, 0.3]);
        let n = 100_000;
        let s = generate(&oracle, n, 4).unwrap();
        let freq = s.dataset.label_mean()[0];
        assert!((freq - 0.7).abs() < 3.0 * (0.21 / n as f64).sqrt());
    }

    #[test]
    fn degenerate_p0_rejected() {
        assert!(BayesOracle::constant(vec![1.0, 0.0])
            .validate(1e-3)
            .is_err());
        assert!(BayesOracle::constant(vec![0.7, 0.3]).validate(1e-3).is_ok());
        let mut steep = SmoothFamily::new(2, 2);
        steep.slope = 20.0;
        assert!(BayesOracle::LogisticSmooth(steep).validate(1e-3).is_err());
        assert!(BayesOracle::LogisticSmooth(SmoothFamily::new(2, 2))
            .validate(1e-3)
            .is_ok());
    }

    #[test]
    fn generation_is_reproducible() {
        let oracle = BayesOracle::TabularMixture(MixtureFamily::new(3, 2));
        let a = generate(&oracle, 50, 1).unwrap();
        let b = generate(&oracle, 50, 1).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.p0, b.p0);
        let rows: Vec<f64> = a.p0.rows().into_iter().map(|r| r.sum()).collect();
        assert!(rows.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn constant_student_error_has_no_variance() {
        let oracle = BayesOracle::constant(vec![0.6, 0.4]);
        let student = ScoreModel::Constant(crate::students::ConstantStudent {
            value: vec![-0.5, -1.0],
        });
        let f0 = constant_f0(&oracle, 0, 0).unwrap();
        let (mse, se) = student_mse_to_f0(
            &student,
            &oracle,
            &F0Target::Constant {
                value: f0.value.clone(),
            },
            100,
            3,
        )
        .unwrap();
        let exact = (-0.5 - 0.6f64.ln()).powi(2) + (-1.0 - 0.4f64.ln()).powi(2);
        assert!((mse - exact).abs() < 1e-12);
        assert_eq!(se, 0.0);
    }
}
