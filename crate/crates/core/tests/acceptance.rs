//! Acceptance suite: one pass/fail line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test -p orthokd --test acceptance`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orthokd::crossfit::{fit_fold_teachers, make_folds, vanilla_kd_fit};
use orthokd::data::generate;
use orthokd::experiments::{
    run_alpha_sweep, run_prop1, run_prop2, run_sweep, AlphaSweepConfig, Method, Prop1Config,
    Prop2Config, SweepConfig,
};
use orthokd::gamma::{closed_form_v, closed_form_v_plugin};
use orthokd::losses::{
    corrected_sel_labels, correction_matrix, correction_term, gamma_corrected_loss,
    numerical_cross_partial, LossSpec,
};
use orthokd::metrics::auc_binary;
use orthokd::prelude::*;
use orthokd::students::{sgd_fit_labels, LinearStudent, StepSchedule};

type Outcome = (bool, String);

fn random_simplex(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn ac1() -> Outcome {
    let t = Instant::now();
    let r = run_prop1(&Prop1Config::default()).expect("prop1 runs");
    let secs = t.elapsed().as_secs_f64();
    let vs = r.vanilla.fit.expect("rate fit").slope;
    let es = r.enhanced.fit.expect("rate fit").slope;
    let dominated = r
        .vanilla
        .points
        .iter()
        .zip(&r.enhanced.points)
        .filter(|(v, _)| v.0 >= 1 << 10)
        .all(|(v, e)| e.1 < v.1);
    let ok =
        (-0.65..=-0.35).contains(&vs) && (-1.25..=-0.75).contains(&es) && dominated && secs < 120.0;
    (ok, format!("vanilla slope {vs:.3}, enhanced slope {es:.3}, enhanced below vanilla for n>=2^10: {dominated}, {secs:.1}s"))
}

fn ac2() -> Outcome {
    let t = Instant::now();
    let r = run_prop2(&Prop2Config::default()).expect("prop2 runs");
    let secs = t.elapsed().as_secs_f64();
    let vs = r.rates.vanilla.fit.expect("rate fit").slope;
    let cs = r.rates.enhanced.fit.expect("rate fit").slope;
    let last = *r.rates.vanilla.points.last().unwrap();
    let floor = last.1 - 3.0 * last.2;
    let ok = vs.abs() <= 0.1 && floor > 0.0 && (-0.87..=-0.47).contains(&cs) && secs < 300.0;
    (ok, format!(
        "vanilla slope {vs:.3}, vanilla error at n={} is {:.4} (lower 3se bound {floor:.4}), cross-fit slope {cs:.3} (target {:.3}), {secs:.1}s",
        last.0, last.1, r.target_slope
    ))
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let k = rng.random_range(2..=5);
        let p0 = random_simplex(&mut rng, k, 0.05);
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..5.0)).collect();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut y = vec![0.0; k];
        for _ in 0..draws {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut cls = k - 1;
            for (j, pj) in p0.iter().enumerate() {
                acc += pj;
                if u < acc {
                    cls = j;
                    break;
                }
            }
            y.iter_mut().for_each(|x| *x = 0.0);
            y[cls] = 1.0;
            let term = correction_term(&f, &p0, &y, &v);
            sum += term;
            sum_sq += term * term;
        }
        let n = draws as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
        worst = worst.max(mean.abs() / se);
    }
    (
        worst < 5.0,
        format!("largest |mean| / se over 10 pairs = {worst:.2}"),
    )
}

fn ac4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-4;
    let mut worst_sel = 0.0f64;
    let mut worst_ace = 0.0f64;
    for kind in 0..2 {
        for _ in 0..100 {
            let k = rng.random_range(2..=5);
            let p: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let f: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..2.0)).collect();
            let loss = if kind == 0 {
                LossSpec::Sel
            } else {
                LossSpec::ace(rng.random_range(0.5..3.0)).unwrap()
            };
            let c = correction_matrix(&loss, &p).unwrap();
            let num = numerical_cross_partial(&loss, &f, &p, h).unwrap();
            let err = (&c + &num).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if kind == 0 {
                worst_sel = worst_sel.max(err);
            } else {
                worst_ace = worst_ace.max(err);
            }
        }
    }
    let ok = worst_sel < 1e-5 && worst_ace < 1e-5;
    (
        ok,
        format!("max deviation SEL {worst_sel:.2e}, ACE {worst_ace:.2e}"),
    )
}

/// Minimizes a convex 1-d quadratic by bisection on the sign of a centered
/// difference (exact for quadratics at any step).
fn minimize_quadratic(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let h = (hi - lo).max(1.0);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid + h) - f(mid - h) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.random_range(2..=6);
        let p: Vec<f64> = random_simplex(&mut rng, k, 0.0)
            .iter()
            .map(|v| v.max(eps))
            .collect();
        let mut y = vec![0.0; k];
        y[rng.random_range(0..k)] = 1.0;
        let alpha = 10f64.powf(rng.random_range(-3.0..3.0));
        let sample = closed_form_v(&y, &p, alpha).unwrap();
        let plugin = closed_form_v_plugin(&p, alpha).unwrap();
        for j in 0..k {
            let target = 1.0 / p[j];
            let r2 = (y[j] - p[j]).powi(2);
            let s2 = (p[j] * (1.0 - p[j])).powi(2);
            let vs = minimize_quadratic(
                |v| r2 * v * v + alpha * (target - v).powi(2),
                0.0,
                2.0 * target,
            );
            let vp = minimize_quadratic(
                |v| s2 * v * v + alpha * (target - v).powi(2),
                0.0,
                2.0 * target,
            );
            worst = worst
                .max((vs - sample[j]).abs())
                .max((vp - plugin[j]).abs());
        }
    }
    (
        worst < 1e-8,
        format!("max |closed form − numerical minimizer| = {worst:.2e}"),
    )
}

fn ac6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (n, k, d) = (60, 3, 2);
    let eps = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let data = LabeledDataset::from_classes(x, &classes, k).unwrap();
        let raw = Array2::from_shape_fn((n, k), |_| rng.random::<f64>());
        let probs = clip_probabilities(&raw, eps).unwrap();
        let v = Array2::from_shape_fn((n, k), |(i, j)| rng.random::<f64>() / probs.probs()[[i, j]]);
        let students: Vec<ScoreModel> = (0..2)
            .map(|_| {
                ScoreModel::Linear(LinearStudent {
                    weights: Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0)),
                    bias: ndarray::Array1::from_shape_fn(k, |_| rng.random_range(-4.0..0.0)),
                })
            })
            .collect();
        let mut corrected = [0.0; 2];
        let mut square = [0.0; 2];
        for (s, student) in students.iter().enumerate() {
            let scores = student.predict_scores(data.features()).unwrap();
            for i in 0..n {
                let f = scores.row(i).to_vec();
                let p = probs.row(i).to_vec();
                let y = data.labels().row(i).to_vec();
                let vi = v.row(i).to_vec();
                corrected[s] +=
                    gamma_corrected_loss(&LossSpec::Sel, &f, &p, &y, &vi).unwrap() / n as f64;
                let l = corrected_sel_labels(&p, &y, &vi).unwrap();
                square[s] += f
                    .iter()
                    .zip(&l)
                    .map(|(a, b)| 0.5 * (a - b).powi(2))
                    .sum::<f64>()
                    / n as f64;
            }
        }
        let diff = ((corrected[0] - corrected[1]) - (square[0] - square[1])).abs();
        worst = worst.max(diff);
    }
    (
        worst < 1e-9,
        format!("max objective-difference gap = {worst:.2e}"),
    )
}

fn ac7() -> Outcome {
    let r = run_alpha_sweep(&AlphaSweepConfig::default()).expect("alpha sweep runs");
    let zero = r.point(0.0).unwrap().loss_mean;
    let orth = r.point(f64::INFINITY).unwrap().loss_mean;
    let best = r
        .points
        .iter()
        .filter(|p| p.alpha > 0.0 && p.alpha.is_finite())
        .min_by(|a, b| a.loss_mean.total_cmp(&b.loss_mean))
        .unwrap();
    let ok = best.loss_mean <= zero && best.loss_mean <= orth;
    (
        ok,
        format!(
            "best finite alpha {} loss {:.6}; alpha=0 loss {zero:.6}; orthogonal loss {orth:.6}",
            best.alpha, best.loss_mean
        ),
    )
}

fn ac8() -> Outcome {
    let t = Instant::now();
    let cfg = SweepConfig {
        methods: vec![Method::Vanilla, Method::Crossfit],
        ..SweepConfig::overfit()
    };
    let r = run_sweep(&cfg).expect("sweep runs");
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &size) in cfg.values.iter().enumerate() {
        let v = r.cell(Method::Vanilla, size).unwrap().auc_mean;
        let c = r.cell(Method::Crossfit, size).unwrap().auc_mean;
        ok &= c >= v - 0.002;
        if i == 0 {
            ok &= c > v;
        }
        parts.push(format!("{size} trees: crossfit {c:.4} vs vanilla {v:.4}"));
    }
    (
        ok,
        format!("{}; {:.1}s", parts.join(", "), t.elapsed().as_secs_f64()),
    )
}

fn ac9() -> Outcome {
    let eps = DEFAULT_CLIP_FLOOR;
    let data = generate(&BayesOracle::constant(vec![0.7, 0.3]), 500, 9)
        .unwrap()
        .dataset;
    let (teacher, student) = vanilla_kd_fit(
        &data,
        &TeacherConfig::RidgeMean { scale: 1.0 },
        &StudentConfig::Constant,
        &LossSpec::Sel,
        eps,
    )
    .unwrap();
    let p_hat = teacher
        .predict_proba(data.features())
        .unwrap()
        .row(0)
        .to_vec();
    let f = student
        .predict_scores(data.features())
        .unwrap()
        .row(0)
        .to_vec();
    let ridge_err = f
        .iter()
        .zip(&p_hat)
        .map(|(a, p)| (a - p.ln()).abs())
        .fold(0.0, f64::max);

    let smooth = generate(
        &BayesOracle::LogisticSmooth(SmoothFamily::new(2, 2)),
        500,
        9,
    )
    .unwrap()
    .dataset;
    let (_, student) = vanilla_kd_fit(
        &smooth,
        &TeacherConfig::NadarayaWatson { exponent: None },
        &StudentConfig::Constant,
        &LossSpec::Sel,
        eps,
    )
    .unwrap();
    let f = student
        .predict_scores(smooth.features())
        .unwrap()
        .row(0)
        .to_vec();
    let n = smooth.n() as f64;
    let closed: Vec<f64> = smooth
        .labels()
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|y| y.max(eps).ln()).sum::<f64>() / n)
        .collect();
    let nw_err = f
        .iter()
        .zip(&closed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let ok = ridge_err <= 1e-12 && nw_err <= 1e-12;
    (
        ok,
        format!("constant teacher gap {ridge_err:.1e}, interpolating teacher gap {nw_err:.1e}"),
    )
}

fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn ac10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    let mut checked = 0;
    while checked < 500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..=12);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if checked % 2 == 0 {
                    rng.random_range(0..levels) as f64 / 4.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        if labels.iter().all(|&l| l == labels[0]) {
            continue;
        }
        if auc_binary(&scores, &labels).unwrap() != brute_auc(&scores, &labels) {
            mismatches += 1;
        }
        checked += 1;
    }
    (
        mismatches == 0,
        format!("{mismatches} mismatches over {checked} datasets"),
    )
}

fn ac11() -> Outcome {
    let eps = DEFAULT_CLIP_FLOOR;
    let oracle = BayesOracle::LogisticSmooth(SmoothFamily::new(2, 2));
    let data = generate(&oracle, 200, 11).unwrap().dataset;
    let teachers = [
        (
            "forest",
            TeacherConfig::Forest(ForestParams::classifier(20, 5)),
        ),
        ("nw", TeacherConfig::NadarayaWatson { exponent: None }),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = Vec::new();
    for (name, teacher) in &teachers {
        for folds in [2, 10] {
            let plan = make_folds(data.n(), folds, 3).unwrap();
            let base = fit_fold_teachers(&data, &plan, teacher, eps).unwrap();
            for t in 0..folds {
                let idx = plan.fold(t);
                let mut shuffled = idx.clone();
                shuffled.shuffle(&mut rng);
                let mut labels = data.labels().clone();
                for (&dst, &src) in idx.iter().zip(&shuffled) {
                    labels.row_mut(dst).assign(&data.labels().row(src));
                }
                // flip one fold label outright so the perturbation is never a no-op
                let first = idx[0];
                let row = labels.row(first).to_vec();
                labels
                    .row_mut(first)
                    .assign(&ndarray::Array1::from(vec![row[1], row[0]]));
                let permuted = data.with_labels(labels).unwrap();
                let again = fit_fold_teachers(&permuted, &plan, teacher, eps).unwrap();
                for &i in &idx {
                    if base.probs.row(i) != again.probs.row(i) {
                        failures.push(format!("{name} B={folds} fold {t}"));
                        break;
                    }
                }
            }
        }
    }
    failures.dedup();
    (
        failures.is_empty(),
        if failures.is_empty() {
            "fold predictions unchanged for forest and NW, B in {2, 10}".into()
        } else {
            failures.join("; ")
        },
    )
}

fn ac12() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (n, d, k) = (500, 5, 2);
    let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let raw = Array2::from_shape_fn((n, k), |(i, j)| {
        let s: f64 = (0..d)
            .map(|l| x[[i, l]] * (0.3 * (l as f64 + 1.0) * if j == 0 { 1.0 } else { -1.0 }))
            .sum();
        1.0 / (1.0 + (-s).exp())
    });
    let probs = clip_probabilities(&raw, DEFAULT_CLIP_FLOOR).unwrap();
    let labels = probs.probs().mapv(f64::ln);

    // normal equations with an intercept column
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[[i, j]] } else { 1.0 });
    let gram = design.transpose() * &design;
    let mut oracle = 0.0;
    for j in 0..k {
        let target = DVector::from_fn(n, |i, _| labels[[i, j]]);
        let beta = gram
            .clone()
            .cholesky()
            .unwrap()
            .solve(&(design.transpose() * &target));
        let resid = &design * beta - target;
        oracle += 0.5 * resid.norm_squared() / n as f64;
    }
    let cfg = SgdConfig {
        schedule: StepSchedule::InverseDecay {
            eta0: 0.1,
            t0: None,
        },
        epochs: 200,
        ..SgdConfig::default()
    };
    let fit = sgd_fit_labels(&x, &labels, &cfg).unwrap();
    let gap = fit.trace.last().unwrap() - oracle;
    let secs = t.elapsed().as_secs_f64();
    (
        gap.abs() < 1e-3 && secs < 10.0,
        format!(
            "objective gap {gap:.2e} after {} epochs, {secs:.2}s",
            cfg.epochs
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("rate reproduction, underfitting teacher", ac1),
        ("rate reproduction, overfitting teacher", ac2),
        ("mean-zero correction", ac3),
        ("correction-matrix oracle", ac4),
        ("closed-form gamma oracle", ac5),
        ("reduction identity", ac6),
        ("alpha-sweep ordering", ac7),
        ("overfit-sweep ordering", ac8),
        ("vanilla closed forms", ac9),
        ("AUC oracle", ac10),
        ("leakage audit", ac11),
        ("SGD oracle", ac12),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != i + 1) {
            continue;
        }
        let (ok, detail) = run();
        println!(
            "AC{:<2} {} {name}: {detail}",
            i + 1,
            if ok { "PASS" } else { "FAIL" }
        );
        failed += usize::from(!ok);
    }
    println!("acceptance: {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
