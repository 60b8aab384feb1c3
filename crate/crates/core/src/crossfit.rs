//! Fold planning, out-of-fold nuisance estimation and the cross-fitted
//! ("Enhanced KD") and plug-in ("vanilla") distillation pipelines.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::forest::ForestParams;
use crate::gamma::GammaPolicy;
use crate::losses::{corrected_sel_labels, gamma_corrected_loss, LossSpec};
use crate::seeding::{derive_seed, rng_from};
use crate::simplex::{CorrectionField, LabeledDataset, ProbabilityField, DEFAULT_CLIP_FLOOR};
use crate::students::{sgd_fit, ScoreModel, SgdConfig, StudentConfig};
use crate::teachers::{Teacher, TeacherConfig};

/// Assignment of every example to one of `n_folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    assignments: Vec<usize>,
    n_folds: usize,
    seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Indices in fold `t`, ascending.
    pub fn fold(&self, t: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] == t)
            .collect()
    }

    /// Indices outside fold `t`, ascending.
    pub fn complement(&self, t: usize) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.assignments[i] != t)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

fn check_fold_count(n: usize, n_folds: usize) -> Result<()> {
    if n_folds < 2 {
        return invalid(format!("need at least 2 folds, got {n_folds}"));
    }
    if n_folds > n {
        return invalid(format!("{n} examples cannot fill {n_folds} folds"));
    }
    Ok(())
}

/// Seeded permutation of `0..n` chunked into `n_folds` near-equal folds.
/// When `n` is not divisible, the earlier folds receive one extra example.
pub fn make_folds(n: usize, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    check_fold_count(n, n_folds)?;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed, &[0xF0_1D]));
    let base = n / n_folds;
    let extra = n % n_folds;
    let mut assignments = vec![0; n];
    let mut pos = 0;
    for t in 0..n_folds {
        let size = base + usize::from(t < extra);
        for &i in &perm[pos..pos + size] {
            assignments[i] = t;
        }
        pos += size;
    }
    Ok(FoldPlan {
        assignments,
        n_folds,
        seed,
    })
}

/// Like [`make_folds`] but deals each class round-robin so class counts per
/// fold differ by at most one. Fold sizes still differ by at most one.
pub fn make_folds_stratified(classes: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    let n = classes.len();
    check_fold_count(n, n_folds)?;
    let k = classes.iter().max().map_or(0, |m| m + 1);
    let mut rng = rng_from(seed, &[0x57_A7]);
    let mut assignments = vec![0; n];
    let mut next = 0;
    for c in 0..k {
        let mut members: Vec<usize> = (0..n).filter(|&i| classes[i] == c).collect();
        members.shuffle(&mut rng);
        for i in members {
            assignments[i] = next % n_folds;
            next += 1;
        }
    }
    Ok(FoldPlan {
        assignments,
        n_folds,
        seed,
    })
}

/// Audit record for one fold's teacher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldProvenance {
    pub fold: usize,
    pub teacher_seed: Option<u64>,
    pub excluded: usize,
    /// SHA-256 of the excluded (fold-t) indices as little-endian u64s.
    pub excluded_hash: String,
    /// Number of fold rows where the smoother fell back to the label mean.
    pub fallback_count: usize,
    /// Whether the training complement contained only one class.
    pub single_class: bool,
}

pub fn hash_indices(indices: &[usize]) -> String {
    let mut h = Sha256::new();
    for &i in indices {
        h.update((i as u64).to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Out-of-fold teacher predictions for every example, in the original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPredictions {
    pub plan: FoldPlan,
    pub probs: ProbabilityField,
    pub provenance: Vec<FoldProvenance>,
}

/// Fits fold `t`'s teacher on the complement of fold `t` and predicts the
/// fold's rows (in ascending index order).
pub fn fit_fold_teacher(
    data: &LabeledDataset,
    plan: &FoldPlan,
    teacher: &TeacherConfig,
    clip_floor: f64,
    t: usize,
) -> Result<(ProbabilityField, FoldProvenance)> {
    if plan.n() != data.n() {
        return invalid(format!(
            "fold plan covers {} examples, dataset has {}",
            plan.n(),
            data.n()
        ));
    }
    if t >= plan.n_folds() {
        return invalid(format!(
            "fold {t} out of range for {} folds",
            plan.n_folds()
        ));
    }
    let held = plan.fold(t);
    let train = data.subset(&plan.complement(t))?;
    let seed = derive_seed(teacher.seed().unwrap_or(plan.seed), &[t as u64]);
    let config = teacher.reseeded(seed);
    let fitted = config.fit(&train, clip_floor)?;
    let x = data.subset(&held)?;
    let (probs, fallback_count) = match &fitted {
        Teacher::NadarayaWatson(nw) => {
            let pred = nw.predict(x.features())?;
            (pred.probs, pred.fallback_count)
        }
        other => (other.predict_proba(x.features())?, 0),
    };
    let single_class = train.label_mean().iter().filter(|&&m| m > 0.0).count() <= 1;
    let prov = FoldProvenance {
        fold: t,
        teacher_seed: config.seed(),
        excluded: held.len(),
        excluded_hash: hash_indices(&held),
        fallback_count,
        single_class,
    };
    Ok((probs, prov))
}

/// Fits one teacher per fold on the fold's complement and predicts the fold.
pub fn fit_fold_teachers(
    data: &LabeledDataset,
    plan: &FoldPlan,
    teacher: &TeacherConfig,
    clip_floor: f64,
) -> Result<FoldPredictions> {
    if plan.n() != data.n() {
        return invalid(format!(
            "fold plan covers {} examples, dataset has {}",
            plan.n(),
            data.n()
        ));
    }
    let per_fold = (0..plan.n_folds())
        .into_par_iter()
        .map(|t| fit_fold_teacher(data, plan, teacher, clip_floor, t))
        .collect::<Result<Vec<_>>>()?;

    let mut pooled = Array2::zeros((data.n(), data.k()));
    let mut provenance = Vec::with_capacity(per_fold.len());
    for (t, (probs, prov)) in per_fold.into_iter().enumerate() {
        for (r, i) in plan.fold(t).into_iter().enumerate() {
            pooled.row_mut(i).assign(&probs.row(r));
        }
        provenance.push(prov);
    }
    Ok(FoldPredictions {
        plan: plan.clone(),
        probs: ProbabilityField::from_clipped(pooled, clip_floor),
        provenance,
    })
}

/// Outcome of permuting one fold's labels and refitting its teacher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageCheck {
    pub fold: usize,
    pub unchanged: bool,
}

/// For every fold, shuffles the fold's labels, refits that fold's teacher
/// and checks its predictions on the fold are bit-identical.
pub fn audit_leakage(
    data: &LabeledDataset,
    plan: &FoldPlan,
    teacher: &TeacherConfig,
    clip_floor: f64,
    seed: u64,
) -> Result<Vec<LeakageCheck>> {
    (0..plan.n_folds())
        .map(|t| {
            let (before, _) = fit_fold_teacher(data, plan, teacher, clip_floor, t)?;
            let idx = plan.fold(t);
            let mut src = idx.clone();
            src.shuffle(&mut rng_from(seed, &[t as u64]));
            let mut labels = data.labels().clone();
            for (&dst, &from) in idx.iter().zip(&src) {
                labels.row_mut(dst).assign(&data.labels().row(from));
            }
            let permuted = data.with_labels(labels)?;
            let (after, _) = fit_fold_teacher(&permuted, plan, teacher, clip_floor, t)?;
            Ok(LeakageCheck {
                fold: t,
                unchanged: before == after,
            })
        })
        .collect()
}

/// Out-of-fold teacher outputs together with their corrections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceBundle {
    pub plan: FoldPlan,
    pub probs: ProbabilityField,
    pub correction: CorrectionField,
    pub provenance: Vec<FoldProvenance>,
}

impl NuisanceBundle {
    /// Applies `policy` to each example's own label and out-of-fold p̂.
    pub fn from_fold_probs(
        fold: FoldPredictions,
        data: &LabeledDataset,
        policy: &GammaPolicy,
    ) -> Result<Self> {
        if fold.probs.n() != data.n() {
            return invalid("fold predictions do not cover the dataset");
        }
        let correction = policy.field(data.labels(), &fold.probs)?;
        Ok(Self {
            plan: fold.plan,
            probs: fold.probs,
            correction,
            provenance: fold.provenance,
        })
    }

    /// Teacher predictions restricted to fold `t`.
    pub fn fold_probs(&self, t: usize) -> ProbabilityField {
        self.probs.subset(&self.plan.fold(t))
    }

    pub fn n(&self) -> usize {
        self.probs.n()
    }
}

/// Fits fold teachers and corrections for `plan`.
pub fn fit_nuisances(
    data: &LabeledDataset,
    plan: &FoldPlan,
    teacher: &TeacherConfig,
    policy: &GammaPolicy,
    clip_floor: f64,
) -> Result<NuisanceBundle> {
    let fold = fit_fold_teachers(data, plan, teacher, clip_floor)?;
    NuisanceBundle::from_fold_probs(fold, data, policy)
}

/// Corrected SEL labels `log p̂ + v ∘ (y − p̂)` for every row.
pub fn corrected_label_matrix(
    labels: &Array2<f64>,
    probs: &ProbabilityField,
    correction: &CorrectionField,
) -> Result<Array2<f64>> {
    if labels.dim() != probs.probs().dim() || labels.dim() != correction.v().dim() {
        return invalid("labels, teacher field and correction differ in shape");
    }
    let mut out = Array2::zeros(labels.dim());
    for i in 0..labels.nrows() {
        let l = corrected_sel_labels(
            &probs.row(i).to_vec(),
            &labels.row(i).to_vec(),
            &correction.row(i).to_vec(),
        )?;
        for (j, x) in l.into_iter().enumerate() {
            out[[i, j]] = x;
        }
    }
    Ok(out)
}

/// Fits a student on the pooled γ-corrected objective given per-example
/// teacher outputs and corrections.
pub fn fit_student(
    data: &LabeledDataset,
    probs: &ProbabilityField,
    correction: &CorrectionField,
    student: &StudentConfig,
    loss: &LossSpec,
) -> Result<ScoreModel> {
    match loss {
        LossSpec::Sel => {
            let labels = corrected_label_matrix(data.labels(), probs, correction)?;
            student.fit_square_loss(data.features(), &labels, probs.clip_floor())
        }
        LossSpec::Ace { .. } => match student {
            StudentConfig::Linear(cfg) => {
                let fit = sgd_fit(data.features(), data.labels(), probs, correction, loss, cfg)?;
                Ok(ScoreModel::Linear(fit.student))
            }
            other => invalid(format!(
                "the ACE loss is only supported for linear students, not {}",
                other.name()
            )),
        },
    }
}

/// Student minimizing the pooled out-of-fold corrected objective.
pub fn enhanced_kd_fit(
    data: &LabeledDataset,
    bundle: &NuisanceBundle,
    student: &StudentConfig,
    loss: &LossSpec,
) -> Result<ScoreModel> {
    if bundle.n() != data.n() {
        return invalid("nuisance bundle does not cover the dataset");
    }
    fit_student(data, &bundle.probs, &bundle.correction, student, loss)
}

/// Plug-in distillation: the teacher is fitted and evaluated on the same data.
pub fn vanilla_kd_fit(
    data: &LabeledDataset,
    teacher: &TeacherConfig,
    student: &StudentConfig,
    loss: &LossSpec,
    clip_floor: f64,
) -> Result<(Teacher, ScoreModel)> {
    let fitted = teacher.fit(data, clip_floor)?;
    let probs = fitted.predict_proba(data.features())?;
    let zero = CorrectionField::zeros(data.n(), data.k());
    let model = fit_student(data, &probs, &zero, student, loss)?;
    Ok((fitted, model))
}

fn mean_corrected_loss(
    data: &LabeledDataset,
    rows: &[usize],
    scores: &Array2<f64>,
    bundle: &NuisanceBundle,
    loss: &LossSpec,
) -> Result<f64> {
    let mut total = 0.0;
    for &i in rows {
        total += gamma_corrected_loss(
            loss,
            &scores.row(i).to_vec(),
            &bundle.probs.row(i).to_vec(),
            &data.labels().row(i).to_vec(),
            &bundle.correction.row(i).to_vec(),
        )?;
    }
    Ok(total / rows.len() as f64)
}

/// The pooled Enhanced KD objective at `student`.
pub fn enhanced_objective(
    data: &LabeledDataset,
    bundle: &NuisanceBundle,
    student: &ScoreModel,
    loss: &LossSpec,
) -> Result<f64> {
    let scores = student.predict_scores(data.features())?;
    let rows: Vec<usize> = (0..data.n()).collect();
    mean_corrected_loss(data, &rows, &scores, bundle, loss)
}

/// `(fold, mean corrected loss on the fold, fold size)` for every fold.
pub fn per_fold_objectives(
    data: &LabeledDataset,
    bundle: &NuisanceBundle,
    student: &ScoreModel,
    loss: &LossSpec,
) -> Result<Vec<(usize, f64, usize)>> {
    let scores = student.predict_scores(data.features())?;
    (0..bundle.plan.n_folds())
        .map(|t| {
            let rows = bundle.plan.fold(t);
            Ok((
                t,
                mean_corrected_loss(data, &rows, &scores, bundle, loss)?,
                rows.len(),
            ))
        })
        .collect()
}

/// Everything needed to run the cross-fitted pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub teacher: TeacherConfig,
    pub student: StudentConfig,
    pub loss: LossSpec,
    pub policy: GammaPolicy,
    pub folds: usize,
    pub clip_floor: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            teacher: TeacherConfig::Forest(ForestParams::classifier(100, 0)),
            student: StudentConfig::Forest(ForestParams::regressor(10, 1)),
            loss: LossSpec::Sel,
            policy: GammaPolicy::ORTHOGONAL,
            folds: 10,
            clip_floor: DEFAULT_CLIP_FLOOR,
            seed: 0,
            stratified: false,
        }
    }
}

impl DistillConfig {
    pub fn plan(&self, data: &LabeledDataset) -> Result<FoldPlan> {
        if self.stratified {
            make_folds_stratified(&data.classes(), self.folds, self.seed)
        } else {
            make_folds(data.n(), self.folds, self.seed)
        }
    }

    /// Student config with a linear SGD student whose seed follows `seed`.
    pub fn with_student_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.student = match &self.student {
            StudentConfig::Linear(cfg) => StudentConfig::Linear(SgdConfig {
                seed,
                ..cfg.clone()
            }),
            StudentConfig::Forest(p) => StudentConfig::Forest(p.with_seed(seed)),
            StudentConfig::Constant => StudentConfig::Constant,
        };
        out
    }
}

/// Result of [`distill`].
#[derive(Debug, Clone)]
pub struct Distilled {
    pub student: ScoreModel,
    pub bundle: NuisanceBundle,
}

/// Runs the full cross-fitted pipeline described by `config`.
pub fn distill(data: &LabeledDataset, config: &DistillConfig) -> Result<Distilled> {
    let plan = config.plan(data)?;
    let bundle = fit_nuisances(
        data,
        &plan,
        &config.teacher,
        &config.policy,
        config.clip_floor,
    )?;
    let student = enhanced_kd_fit(data, &bundle, &config.student, &config.loss)?;
    Ok(Distilled { student, bundle })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn fold_examples() {
        let singletons = make_folds(10, 10, 3).unwrap();
        assert!(singletons.fold_sizes().iter().all(|&s| s == 1));
        let halves = make_folds(10, 2, 3).unwrap();
        assert_eq!(halves.fold_sizes(), vec![5, 5]);
        assert_eq!(make_folds(10, 2, 3).unwrap(), halves);
        assert_eq!(make_folds(11, 3, 0).unwrap().fold_sizes(), vec![4, 4, 3]);
        assert!(make_folds(3, 4, 0).is_err());
        assert!(make_folds(3, 1, 0).is_err());
    }

    #[test]
    fn stratified_balances_classes() {
        let classes: Vec<usize> = (0..30).map(|i| usize::from(i % 3 == 0)).collect();
        let plan = make_folds_stratified(&classes, 5, 1).unwrap();
        assert!(plan.fold_sizes().iter().all(|&s| s == 6));
        for t in 0..5 {
            let ones = plan.fold(t).iter().filter(|&&i| classes[i] == 1).count();
            assert_eq!(ones, 2);
        }
    }

    #[test]
    fn fold_and_complement_partition() {
        let plan = make_folds(17, 4, 9).unwrap();
        for t in 0..4 {
            let mut all = plan.fold(t);
            all.extend(plan.complement(t));
            all.sort_unstable();
            assert_eq!(all, (0..17).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_policy_bundle_matches_vanilla_labels() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let data = LabeledDataset::from_classes(x, &[0, 1, 0, 0], 2).unwrap();
        let plan = make_folds(4, 2, 0).unwrap();
        let teacher = TeacherConfig::RidgeMean { scale: 1.0 };
        let b = fit_nuisances(&data, &plan, &teacher, &GammaPolicy::ZERO, 1e-3).unwrap();
        assert!(b.correction.is_zero());
        assert_eq!(b.provenance.len(), 2);
        assert_eq!(b.provenance[0].excluded + b.provenance[1].excluded, 4);
        assert_eq!(b.provenance[0].excluded_hash, hash_indices(&plan.fold(0)));
    }
}
