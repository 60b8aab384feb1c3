//! Experiment runners behind the command-line tool.
//!
//! Every runner is deterministic given its config: cells `(n, seed)` run in
//! parallel with seeds derived from the base seed, and results are collected
//! in a fixed order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crossfit::{
    enhanced_kd_fit, fit_fold_teachers, fit_student, make_folds, vanilla_kd_fit, DistillConfig,
    NuisanceBundle,
};
use crate::data::{
    constant_f0, generate, split_test_size, student_mse_to_f0, train_test_split, BayesOracle,
    F0Target, MixtureFamily, SmoothFamily,
};
use crate::error::{invalid, Result};
use crate::forest::ForestParams;
use crate::gamma::{select_alpha_cv, GammaPolicy};
use crate::losses::LossSpec;
use crate::metrics::{
    accuracy, auc_binary, fit_rate_slope, mean_and_se, orthogonal_labels, score_margin,
    square_loss, RateFit, ValidationMetric,
};
use crate::report::ResultRecord;
use crate::seeding::derive_seed;
use crate::simplex::{CorrectionField, LabeledDataset, DEFAULT_CLIP_FLOOR};
use crate::students::{ScoreModel, StudentConfig};
use crate::teachers::TeacherConfig;

/// Powers of two `2^lo ..= 2^hi`.
pub fn pow2_grid(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|e| 1usize << e).collect()
}

/// Mean error per grid point for one method, plus its rate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSeries {
    pub method: String,
    /// `(n, mean error, standard error)`.
    pub points: Vec<(usize, f64, f64)>,
    /// Log-log slope fit; absent for grids with fewer than four sizes.
    pub fit: Option<RateFit>,
}

impl RateSeries {
    fn from_cells(method: &str, grid: &[usize], errors: &[Vec<f64>]) -> Result<Self> {
        let points: Vec<(usize, f64, f64)> = grid
            .iter()
            .zip(errors)
            .map(|(&n, e)| {
                let (m, se) = mean_and_se(e);
                (n, m, se)
            })
            .collect();
        let fit = if points.len() >= 4 {
            Some(fit_rate_slope(
                &points
                    .iter()
                    .map(|&(n, m, _)| (n as f64, m))
                    .collect::<Vec<_>>(),
            )?)
        } else {
            None
        };
        Ok(Self {
            method: method.into(),
            points,
            fit,
        })
    }

    pub fn mean_at(&self, n: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == n).map(|p| p.1)
    }

    fn records(&self, experiment: &str, folds: Option<usize>) -> Vec<ResultRecord> {
        let mut out: Vec<ResultRecord> = self
            .points
            .iter()
            .map(|&(n, m, se)| ResultRecord {
                n: Some(n),
                folds,
                ..ResultRecord::new(experiment, &self.method, "mse_to_f0", m, se)
            })
            .collect();
        if let Some(fit) = &self.fit {
            out.push(ResultRecord {
                folds,
                ..ResultRecord::new(
                    experiment,
                    &self.method,
                    "rate_slope",
                    fit.slope,
                    fit.slope_se,
                )
            });
        }
        out
    }
}

fn check_grid(grid: &[usize], seeds: usize) -> Result<()> {
    if grid.is_empty() || seeds == 0 {
        return invalid("need a non-empty n grid and at least one seed");
    }
    Ok(())
}

/// Per-seed error rows for every `(n, seed)` cell, computed in parallel.
fn run_cells<F>(
    grid: &[usize],
    seeds: usize,
    base_seed: u64,
    cell: F,
) -> Result<Vec<Vec<(f64, f64)>>>
where
    F: Fn(usize, u64) -> Result<(f64, f64)> + Sync,
{
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..seeds).map(move |s| (g, s)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(g, s)| cell(grid[g], derive_seed(base_seed, &[grid[g] as u64, s as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(results.chunks(seeds).map(|c| c.to_vec()).collect())
}

fn split_pairs(cells: &[Vec<(f64, f64)>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let a = cells
        .iter()
        .map(|c| c.iter().map(|p| p.0).collect())
        .collect();
    let b = cells
        .iter()
        .map(|c| c.iter().map(|p| p.1).collect())
        .collect();
    (a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Config {
    pub p0: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub ridge_scale: f64,
    pub folds: usize,
    pub clip_floor: f64,
    pub seed: u64,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Self {
            p0: vec![0.7, 0.3],
            n_grid: pow2_grid(8, 14),
            seeds: 20,
            ridge_scale: 1.0,
            folds: 10,
            clip_floor: DEFAULT_CLIP_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub vanilla: RateSeries,
    pub enhanced: RateSeries,
    pub records: Vec<ResultRecord>,
}

/// Ridge-mean teacher, constant student: plug-in vs cross-fitted with the
/// orthogonal correction.
pub fn run_prop1(cfg: &Prop1Config) -> Result<RateReport> {
    check_grid(&cfg.n_grid, cfg.seeds)?;
    let oracle = BayesOracle::constant(cfg.p0.clone());
    oracle.validate(cfg.clip_floor)?;
    let target = F0Target::Constant {
        value: constant_f0(&oracle, 0, 0)?.value,
    };
    let teacher = TeacherConfig::RidgeMean {
        scale: cfg.ridge_scale,
    };
    let cells = run_cells(&cfg.n_grid, cfg.seeds, cfg.seed, |n, seed| {
        if n < cfg.folds {
            return invalid(format!(
                "n = {n} is smaller than the fold count {}",
                cfg.folds
            ));
        }
        let data = generate(&oracle, n, seed)?.dataset;
        let (_, vanilla) = vanilla_kd_fit(
            &data,
            &teacher,
            &StudentConfig::Constant,
            &LossSpec::Sel,
            cfg.clip_floor,
        )?;
        let plan = make_folds(n, cfg.folds, derive_seed(seed, &[1]))?;
        let fold = fit_fold_teachers(&data, &plan, &teacher, cfg.clip_floor)?;
        let bundle = NuisanceBundle::from_fold_probs(fold, &data, &GammaPolicy::ORTHOGONAL)?;
        let enhanced = enhanced_kd_fit(&data, &bundle, &StudentConfig::Constant, &LossSpec::Sel)?;
        let ev = student_mse_to_f0(&vanilla, &oracle, &target, 1, 0)?.0;
        let ee = student_mse_to_f0(&enhanced, &oracle, &target, 1, 0)?.0;
        Ok((ev, ee))
    })?;
    let (v, e) = split_pairs(&cells);
    finish_rate_report(
        "prop1",
        &cfg.n_grid,
        &v,
        &e,
        "vanilla",
        "enhanced_orthogonal",
        cfg.folds,
    )
}

fn finish_rate_report(
    experiment: &str,
    grid: &[usize],
    vanilla: &[Vec<f64>],
    enhanced: &[Vec<f64>],
    vanilla_name: &str,
    enhanced_name: &str,
    folds: usize,
) -> Result<RateReport> {
    let vanilla = RateSeries::from_cells(vanilla_name, grid, vanilla)?;
    let enhanced = RateSeries::from_cells(enhanced_name, grid, enhanced)?;
    let mut records = vanilla.records(experiment, None);
    records.extend(enhanced.records(experiment, Some(folds)));
    Ok(RateReport {
        vanilla,
        enhanced,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Config {
    pub family: SmoothFamily,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub folds: usize,
    /// Kernel singularity exponent; `None` uses d/4.
    pub exponent: Option<f64>,
    pub clip_floor: f64,
    /// Monte-Carlo draws for f₀.
    pub f0_draws: usize,
    pub seed: u64,
}

impl Default for Prop2Config {
    fn default() -> Self {
        Self {
            family: SmoothFamily::new(2, 2),
            n_grid: pow2_grid(8, 13),
            seeds: 20,
            folds: 10,
            exponent: None,
            clip_floor: DEFAULT_CLIP_FLOOR,
            f0_draws: 1_000_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub rates: RateReport,
    pub f0: Vec<f64>,
    pub f0_se: Vec<f64>,
    /// Target slope −4/(4+d).
    pub target_slope: f64,
}

/// Interpolating smoother teacher, constant student: plug-in vs cross-fitted
/// without correction.
pub fn run_prop2(cfg: &Prop2Config) -> Result<Prop2Report> {
    check_grid(&cfg.n_grid, cfg.seeds)?;
    let oracle = BayesOracle::LogisticSmooth(cfg.family.clone());
    oracle.validate(cfg.clip_floor)?;
    if let Some(&n) = cfg.n_grid.iter().find(|&&n| n < 2 * cfg.folds) {
        return invalid(format!(
            "n = {n} is smaller than twice the fold count {}",
            cfg.folds
        ));
    }
    let f0 = constant_f0(&oracle, cfg.f0_draws, derive_seed(cfg.seed, &[0xF0]))?;
    let target = F0Target::Constant {
        value: f0.value.clone(),
    };
    let teacher = TeacherConfig::NadarayaWatson {
        exponent: cfg.exponent,
    };
    let cells = run_cells(&cfg.n_grid, cfg.seeds, cfg.seed, |n, seed| {
        let data = generate(&oracle, n, seed)?.dataset;
        let (_, vanilla) = vanilla_kd_fit(
            &data,
            &teacher,
            &StudentConfig::Constant,
            &LossSpec::Sel,
            cfg.clip_floor,
        )?;
        let plan = make_folds(n, cfg.folds, derive_seed(seed, &[1]))?;
        let fold = fit_fold_teachers(&data, &plan, &teacher, cfg.clip_floor)?;
        let bundle = NuisanceBundle::from_fold_probs(fold, &data, &GammaPolicy::ZERO)?;
        let crossfit = enhanced_kd_fit(&data, &bundle, &StudentConfig::Constant, &LossSpec::Sel)?;
        let ev = student_mse_to_f0(&vanilla, &oracle, &target, 1, 0)?.0;
        let ec = student_mse_to_f0(&crossfit, &oracle, &target, 1, 0)?.0;
        Ok((ev, ec))
    })?;
    let (v, c) = split_pairs(&cells);
    let rates = finish_rate_report(
        "prop2",
        &cfg.n_grid,
        &v,
        &c,
        "vanilla",
        "crossfit",
        cfg.folds,
    )?;
    Ok(Prop2Report {
        rates,
        f0: f0.value,
        f0_se: f0.se,
        target_slope: -4.0 / (4.0 + cfg.family.d as f64),
    })
}

/// Pipelines compared by the capacity sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Teacher,
    /// Student fitted on labels log max(y, ε).
    Scratch,
    Vanilla,
    Crossfit,
    CrossfitCorrected,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Teacher,
        Method::Scratch,
        Method::Vanilla,
        Method::Crossfit,
        Method::CrossfitCorrected,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Teacher => "teacher",
            Method::Scratch => "scratch",
            Method::Vanilla => "vanilla",
            Method::Crossfit => "crossfit",
            Method::CrossfitCorrected => "crossfit_corrected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    StudentTrees,
    TeacherDepth,
}

/// How the corrected pipeline picks α.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlphaChoice {
    Fixed {
        alpha: f64,
    },
    /// Cross-validation over the default grid with this many folds.
    CrossValidated {
        folds: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    /// Student tree counts or teacher depths (0 means unlimited).
    pub values: Vec<usize>,
    pub family: MixtureFamily,
    /// Real data to sweep instead of the synthetic family; each seed draws
    /// its own train/test split.
    #[serde(skip)]
    pub dataset: Option<LabeledDataset>,
    pub test_fraction: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seeds: usize,
    pub teacher_trees: usize,
    /// Teacher depth for the student-size sweep.
    pub teacher_depth: Option<usize>,
    /// Student size for the teacher-depth sweep.
    pub student_trees: usize,
    pub student_depth: Option<usize>,
    pub folds: usize,
    pub clip_floor: f64,
    pub alpha: AlphaChoice,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl SweepConfig {
    /// Overfitting teacher (500 unlimited-depth trees), growing student.
    pub fn overfit() -> Self {
        Self {
            axis: SweepAxis::StudentTrees,
            values: vec![1, 5, 10, 20],
            family: MixtureFamily::new(4, 2),
            dataset: None,
            test_fraction: 0.25,
            n_train: 1000,
            n_test: 4000,
            seeds: 5,
            teacher_trees: 500,
            teacher_depth: None,
            student_trees: 10,
            student_depth: None,
            folds: 10,
            clip_floor: DEFAULT_CLIP_FLOOR,
            alpha: AlphaChoice::CrossValidated { folds: 5 },
            methods: Method::ALL.to_vec(),
            seed: 0,
        }
    }

    /// 100-tree teacher with limited depth, 10-tree student.
    pub fn underfit() -> Self {
        Self {
            axis: SweepAxis::TeacherDepth,
            values: vec![1, 2, 3, 4, 6],
            teacher_trees: 100,
            ..Self::overfit()
        }
    }
}

/// One (method, axis value) cell summarized over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: Method,
    pub axis_value: usize,
    pub auc_mean: f64,
    pub auc_se: f64,
    pub aucs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
    /// α chosen per (axis value, seed) for the corrected pipeline.
    pub chosen_alphas: Vec<(usize, u64, f64)>,
    pub records: Vec<ResultRecord>,
}

impl SweepReport {
    pub fn cell(&self, method: Method, axis_value: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.axis_value == axis_value)
    }
}

fn depth_value(v: usize) -> Option<usize> {
    (v > 0).then_some(v)
}

/// Test-set AUC of a student's score margin.
fn student_auc(model: &ScoreModel, test: &LabeledDataset) -> Result<f64> {
    let scores = model.predict_scores(test.features())?;
    auc_binary(&score_margin(&scores), &test.classes())
}

/// Capacity sweep on the tabular-mixture family, scored by held-out AUC.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    let k = cfg.dataset.as_ref().map_or(cfg.family.k, |d| d.k());
    if k != 2 {
        return invalid("sweeps score binary AUC and need k = 2");
    }
    if cfg.values.is_empty() || cfg.seeds == 0 {
        return invalid("sweep needs axis values and at least one seed");
    }
    let n_train = match &cfg.dataset {
        Some(d) => {
            if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
                return invalid("test fraction must lie in (0, 1)");
            }
            d.n() - split_test_size(d.n(), cfg.test_fraction)
        }
        None => cfg.n_train,
    };
    if n_train < 2 * cfg.folds {
        return invalid("training set is smaller than twice the fold count");
    }
    let oracle = BayesOracle::TabularMixture(cfg.family.clone());
    oracle.validate(cfg.clip_floor)?;
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();

    // student-size sweeps share one teacher per seed; depth sweeps need one per value
    let groups: Vec<Vec<usize>> = match cfg.axis {
        SweepAxis::StudentTrees => vec![(0..cfg.values.len()).collect()],
        SweepAxis::TeacherDepth => (0..cfg.values.len()).map(|v| vec![v]).collect(),
    };
    let jobs: Vec<(usize, usize)> = (0..groups.len())
        .flat_map(|g| (0..cfg.seeds).map(move |s| (g, s)))
        .collect();
    let grouped = jobs
        .par_iter()
        .map(|&(g, s)| {
            let values: Vec<usize> = groups[g].iter().map(|&v| cfg.values[v]).collect();
            sweep_group(cfg, &oracle, &methods, &values, s as u64).map(|r| (g, s, r))
        })
        .collect::<Result<Vec<_>>>()?;
    // reorder into value-major, seed-minor
    let mut results: Vec<Option<(Vec<f64>, Option<f64>)>> =
        vec![None; cfg.values.len() * cfg.seeds];
    for (g, s, per_value) in grouped {
        for (&vi, r) in groups[g].iter().zip(per_value) {
            results[vi * cfg.seeds + s] = Some(r);
        }
    }
    let results: Vec<(Vec<f64>, Option<f64>)> = results
        .into_iter()
        .map(|r| r.expect("every cell computed"))
        .collect();

    let mut cells = Vec::new();
    let mut records = Vec::new();
    let mut chosen_alphas = Vec::new();
    for (vi, &value) in cfg.values.iter().enumerate() {
        let group = &results[vi * cfg.seeds..(vi + 1) * cfg.seeds];
        for (mi, &method) in methods.iter().enumerate() {
            let aucs: Vec<f64> = group.iter().map(|r| r.0[mi]).collect();
            let (m, se) = mean_and_se(&aucs);
            for (s, &a) in aucs.iter().enumerate() {
                records.push(ResultRecord {
                    n: Some(n_train),
                    folds: Some(cfg.folds),
                    seed: Some(s as u64),
                    axis: Some(value as f64),
                    alpha: if method == Method::CrossfitCorrected {
                        group[s].1
                    } else {
                        None
                    },
                    ..ResultRecord::new("sweep", method.name(), "auc", a, 0.0)
                });
            }
            records.push(ResultRecord {
                n: Some(n_train),
                folds: Some(cfg.folds),
                axis: Some(value as f64),
                ..ResultRecord::new("sweep", method.name(), "auc_mean", m, se)
            });
            cells.push(SweepCell {
                method,
                axis_value: value,
                auc_mean: m,
                auc_se: se,
                aucs,
            });
        }
        for (s, r) in group.iter().enumerate() {
            if let Some(a) = r.1 {
                chosen_alphas.push((value, s as u64, a));
            }
        }
    }
    Ok(SweepReport {
        cells,
        chosen_alphas,
        records,
    })
}

/// For each axis value in `values` (all sharing one teacher config): AUC
/// per method in `methods` order and the chosen α, if any.
fn sweep_group(
    cfg: &SweepConfig,
    oracle: &BayesOracle,
    methods: &[Method],
    values: &[usize],
    s: u64,
) -> Result<Vec<(Vec<f64>, Option<f64>)>> {
    let seed = derive_seed(cfg.seed, &[s]);
    let (train, test) = match &cfg.dataset {
        Some(d) => train_test_split(d, cfg.test_fraction, derive_seed(seed, &[1]))?,
        None => (
            generate(oracle, cfg.n_train, derive_seed(seed, &[1]))?.dataset,
            generate(oracle, cfg.n_test, derive_seed(seed, &[2]))?.dataset,
        ),
    };
    let teacher_depth = match cfg.axis {
        SweepAxis::StudentTrees => cfg.teacher_depth,
        SweepAxis::TeacherDepth => depth_value(values[0]),
    };
    let student_for = |value: usize| {
        let trees = match cfg.axis {
            SweepAxis::StudentTrees => value,
            SweepAxis::TeacherDepth => cfg.student_trees,
        };
        StudentConfig::Forest(
            ForestParams::regressor(trees, derive_seed(seed, &[4]))
                .with_max_depth(cfg.student_depth),
        )
    };
    let teacher = TeacherConfig::Forest(
        ForestParams::classifier(cfg.teacher_trees, derive_seed(seed, &[3]))
            .with_max_depth(teacher_depth),
    );
    let eps = cfg.clip_floor;

    let wants = |m: Method| methods.contains(&m);
    let (full_teacher, train_probs) = if wants(Method::Teacher) || wants(Method::Vanilla) {
        let t = teacher.fit(&train, eps)?;
        let p = t.predict_proba(train.features())?;
        (Some(t), Some(p))
    } else {
        (None, None)
    };
    let teacher_auc = match &full_teacher {
        Some(t) if wants(Method::Teacher) => Some(auc_binary(
            &score_margin(t.predict_proba(test.features())?.probs()),
            &test.classes(),
        )?),
        _ => None,
    };
    let fold = if wants(Method::Crossfit) || wants(Method::CrossfitCorrected) {
        let plan = make_folds(train.n(), cfg.folds, derive_seed(seed, &[5]))?;
        Some(fit_fold_teachers(&train, &plan, &teacher, eps)?)
    } else {
        None
    };
    let alpha = if wants(Method::CrossfitCorrected) {
        Some(match cfg.alpha {
            AlphaChoice::Fixed { alpha } => alpha,
            AlphaChoice::CrossValidated { folds } => {
                // one α per teacher, selected with the group's first student
                let dcfg = DistillConfig {
                    teacher: teacher.clone(),
                    student: student_for(values[0]),
                    loss: LossSpec::Sel,
                    policy: GammaPolicy::ORTHOGONAL,
                    folds: cfg.folds,
                    clip_floor: eps,
                    seed,
                    stratified: false,
                };
                let grid = crate::gamma::default_alpha_grid();
                select_alpha_cv(
                    &train,
                    &grid,
                    folds,
                    &dcfg,
                    ValidationMetric::Auc,
                    derive_seed(seed, &[6]),
                )?
                .chosen
            }
        })
    } else {
        None
    };

    let zero = CorrectionField::zeros(train.n(), train.k());
    values
        .iter()
        .map(|&value| {
            let student = student_for(value);
            let aucs = methods
                .iter()
                .map(|&method| match method {
                    Method::Teacher => Ok(teacher_auc.expect("teacher fitted")),
                    Method::Scratch => {
                        let labels = train.labels().mapv(|y| y.max(eps).ln());
                        student_auc(
                            &student.fit_square_loss(train.features(), &labels, eps)?,
                            &test,
                        )
                    }
                    Method::Vanilla => {
                        let m = fit_student(
                            &train,
                            train_probs.as_ref().unwrap(),
                            &zero,
                            &student,
                            &LossSpec::Sel,
                        )?;
                        student_auc(&m, &test)
                    }
                    Method::Crossfit | Method::CrossfitCorrected => {
                        let policy = match method {
                            Method::Crossfit => GammaPolicy::ZERO,
                            _ => GammaPolicy::from_alpha(alpha.unwrap())?,
                        };
                        let bundle = NuisanceBundle::from_fold_probs(
                            fold.clone().unwrap(),
                            &train,
                            &policy,
                        )?;
                        student_auc(
                            &enhanced_kd_fit(&train, &bundle, &student, &LossSpec::Sel)?,
                            &test,
                        )
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((aucs, alpha))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepConfig {
    pub p0: Vec<f64>,
    pub n: usize,
    pub n_validation: usize,
    pub alphas: Vec<f64>,
    pub seeds: usize,
    pub folds: usize,
    pub ridge_scale: f64,
    pub clip_floor: f64,
    pub seed: u64,
}

impl Default for AlphaSweepConfig {
    fn default() -> Self {
        Self {
            p0: vec![0.7, 0.3],
            n: 1 << 12,
            n_validation: 1 << 12,
            alphas: crate::gamma::default_alpha_grid(),
            seeds: 5,
            folds: 10,
            ridge_scale: 1.0,
            clip_floor: DEFAULT_CLIP_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub policy: String,
    pub loss_mean: f64,
    pub loss_se: f64,
    pub accuracy_mean: f64,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweepReport {
    pub points: Vec<AlphaPoint>,
    pub records: Vec<ResultRecord>,
}

impl AlphaSweepReport {
    pub fn point(&self, alpha: f64) -> Option<&AlphaPoint> {
        self.points
            .iter()
            .find(|p| p.alpha == alpha || (p.alpha.is_infinite() && alpha.is_infinite()))
    }
}

/// Held-out corrected loss and accuracy across α for the cross-fitted
/// ridge-mean teacher and constant student.
pub fn run_alpha_sweep(cfg: &AlphaSweepConfig) -> Result<AlphaSweepReport> {
    if cfg.alphas.is_empty() || cfg.seeds == 0 {
        return invalid("alpha sweep needs candidates and at least one seed");
    }
    let oracle = BayesOracle::constant(cfg.p0.clone());
    oracle.validate(cfg.clip_floor)?;
    let policies = cfg
        .alphas
        .iter()
        .map(|&a| GammaPolicy::from_alpha(a))
        .collect::<Result<Vec<_>>>()?;
    let teacher = TeacherConfig::RidgeMean {
        scale: cfg.ridge_scale,
    };
    let per_seed = (0..cfg.seeds)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(cfg.seed, &[s as u64]);
            let train = generate(&oracle, cfg.n, derive_seed(seed, &[1]))?.dataset;
            let val = generate(&oracle, cfg.n_validation, derive_seed(seed, &[2]))?.dataset;
            let plan = make_folds(train.n(), cfg.folds, derive_seed(seed, &[3]))?;
            let fold = fit_fold_teachers(&train, &plan, &teacher, cfg.clip_floor)?;
            let val_probs = teacher
                .fit(&train, cfg.clip_floor)?
                .predict_proba(val.features())?;
            let targets = orthogonal_labels(val.labels(), &val_probs)?;
            policies
                .iter()
                .map(|policy| {
                    let bundle = NuisanceBundle::from_fold_probs(fold.clone(), &train, policy)?;
                    let student =
                        enhanced_kd_fit(&train, &bundle, &StudentConfig::Constant, &LossSpec::Sel)?;
                    let scores = student.predict_scores(val.features())?;
                    Ok((
                        square_loss(&scores, &targets)?,
                        accuracy(&scores, &val.classes())?,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    let mut records = Vec::new();
    for (i, (&alpha, policy)) in cfg.alphas.iter().zip(&policies).enumerate() {
        let losses: Vec<f64> = per_seed.iter().map(|r| r[i].0).collect();
        let accs: Vec<f64> = per_seed.iter().map(|r| r[i].1).collect();
        let (lm, lse) = mean_and_se(&losses);
        let (am, ase) = mean_and_se(&accs);
        let base = ResultRecord {
            n: Some(cfg.n),
            folds: Some(cfg.folds),
            alpha: Some(alpha),
            ..ResultRecord::new("alpha_sweep", policy.name(), "", 0.0, 0.0)
        };
        records.push(ResultRecord {
            metric: "heldout_corrected_loss".into(),
            value: lm,
            std_error: lse,
            ..base.clone()
        });
        records.push(ResultRecord {
            metric: "accuracy".into(),
            value: am,
            std_error: ase,
            ..base
        });
        points.push(AlphaPoint {
            alpha,
            policy: policy.name().into(),
            loss_mean: lm,
            loss_se: lse,
            accuracy_mean: am,
            losses,
        });
    }
    Ok(AlphaSweepReport { points, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prop1_smoke_is_deterministic() {
        let cfg = Prop1Config {
            n_grid: vec![64, 128, 256, 512],
            seeds: 2,
            ..Prop1Config::default()
        };
        let a = run_prop1(&cfg).unwrap();
        let b = run_prop1(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 2 * (4 + 1));
    }

    #[test]
    fn prop2_rejects_tiny_n() {
        let cfg = Prop2Config {
            n_grid: vec![15, 64, 128, 256],
            seeds: 1,
            f0_draws: 1000,
            ..Prop2Config::default()
        };
        assert!(run_prop2(&cfg).is_err());
    }

    #[test]
    fn alpha_endpoints_match_named_policies() {
        let cfg = AlphaSweepConfig {
            n: 200,
            n_validation: 200,
            seeds: 2,
            alphas: vec![0.0, 1.0, f64::INFINITY],
            ..AlphaSweepConfig::default()
        };
        let r = run_alpha_sweep(&cfg).unwrap();
        assert_eq!(r.point(0.0).unwrap().policy, "zero");
        assert_eq!(r.point(f64::INFINITY).unwrap().policy, "orthogonal");
        assert_eq!(r.points.len(), 3);
    }
}
