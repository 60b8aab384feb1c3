use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use orthokd::artifact::Artifact;
use orthokd::crossfit::{audit_leakage, distill, enhanced_objective, DistillConfig};
use orthokd::data::{
    clip_condition, generate, load_csv, train_test_split, BayesOracle, CsvSchema, LoadedCsv,
};
use orthokd::experiments::{
    run_alpha_sweep, run_prop1, run_prop2, run_sweep, RateReport, SweepConfig,
};
use orthokd::forest::ForestParams;
use orthokd::gamma::{default_alpha_grid, select_alpha_cv, GammaPolicy};
use orthokd::losses::LossSpec;
use orthokd::metrics::{accuracy, auc_binary, score_margin, ValidationMetric};
use orthokd::report::{write_records, ResultRecord};
use orthokd::seeding::derive_seed;
use orthokd::simplex::LabeledDataset;
use orthokd::students::{SgdConfig, StepSchedule, StudentConfig};
use orthokd::teachers::TeacherConfig;

use crate::args::{
    AlphaArg, AlphaSweepArgs, Cli, Command, CsvArgs, DistillArgs, LossKind, Prop1Args, Prop2Args,
    StudentKind, SweepArgs, TeacherKind, VERSION,
};
use crate::plot::{line_chart, Series};

struct Output<'a> {
    dir: &'a Path,
    plot: bool,
}

impl Output<'_> {
    fn records(&self, records: &[ResultRecord]) -> Result<()> {
        let path = self.dir.join("results.csv");
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        write_records(BufWriter::new(file), records)
            .with_context(|| format!("writing {}", path.display()))
    }

    fn json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let path = self.dir.join(name);
        let text = serde_json::to_string_pretty(value)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn chart(&self, name: &str, svg: impl FnOnce() -> String) -> Result<()> {
        if !self.plot {
            return Ok(());
        }
        let path = self.dir.join(format!("plot_{name}.svg"));
        fs::write(&path, svg()).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.output_dir)
        .with_context(|| format!("creating output directory {}", cli.output_dir.display()))?;
    let out = Output {
        dir: &cli.output_dir,
        plot: cli.plot,
    };
    let start = Instant::now();
    let (config, report) = match &cli.command {
        Command::Prop1(a) => prop1(a, &out)?,
        Command::Prop2(a) => prop2(a, &out)?,
        Command::Sweep(a) => sweep(a, &out)?,
        Command::AlphaSweep(a) => alpha_sweep(a, &out)?,
        Command::Distill(a) => distill_cmd(a, &out)?,
    };
    let summary = json!({
        "command": cli.command.name(),
        "version": VERSION,
        "options": cli,
        "config": config,
        "report": report,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    out.json("summary.json", &summary)?;
    eprintln!("wrote results to {}", cli.output_dir.display());
    Ok(())
}

fn rate_chart(title: &str, report: &RateReport) -> String {
    let series: Vec<Series> = [&report.vanilla, &report.enhanced]
        .iter()
        .map(|s| Series {
            name: match &s.fit {
                Some(f) => format!("{} (slope {:.2})", s.method, f.slope),
                None => s.method.clone(),
            },
            points: s.points.iter().map(|&(n, m, _)| (n as f64, m)).collect(),
        })
        .collect();
    line_chart(title, "n", "error", &series, true, true)
}

fn rate_summary(report: &RateReport) -> Value {
    json!({
        "vanilla": { "slope": report.vanilla.fit, "points": report.vanilla.points },
        "enhanced": { "slope": report.enhanced.fit, "points": report.enhanced.points },
    })
}

fn prop1(a: &Prop1Args, out: &Output) -> Result<(Value, Value)> {
    let cfg = a.to_config();
    let report = run_prop1(&cfg).context("running prop1")?;
    out.records(&report.records)?;
    out.chart("prop1", || rate_chart("Constant student error", &report))?;
    if let (Some(v), Some(e)) = (report.vanilla.fit, report.enhanced.fit) {
        eprintln!(
            "vanilla slope {:.3}, enhanced slope {:.3}",
            v.slope, e.slope
        );
    }
    Ok((serde_json::to_value(&cfg)?, rate_summary(&report)))
}

fn prop2(a: &Prop2Args, out: &Output) -> Result<(Value, Value)> {
    let cfg = a.to_config();
    let oracle = BayesOracle::LogisticSmooth(cfg.family.clone());
    let clip = clip_condition(
        &oracle,
        cfg.clip_floor,
        100_000,
        derive_seed(cfg.seed, &[0xC1]),
    )?;
    if !clip.satisfied {
        eprintln!(
            "warning: clip floor {} is not below every class threshold {:?}; the constant-student bound may not apply",
            cfg.clip_floor, clip.thresholds
        );
    }
    let report = run_prop2(&cfg).context("running prop2")?;
    out.records(&report.rates.records)?;
    out.chart("prop2", || {
        rate_chart("Constant student error", &report.rates)
    })?;
    if let (Some(v), Some(e)) = (report.rates.vanilla.fit, report.rates.enhanced.fit) {
        eprintln!(
            "vanilla slope {:.3}, cross-fit slope {:.3} (target {:.3})",
            v.slope, e.slope, report.target_slope
        );
    }
    let mut summary = rate_summary(&report.rates);
    summary["f0"] = json!(report.f0);
    summary["f0_se"] = json!(report.f0_se);
    summary["target_slope"] = json!(report.target_slope);
    summary["clip_condition"] = json!(clip);
    Ok((serde_json::to_value(&cfg)?, summary))
}

fn load(csv: &CsvArgs, path: &Path) -> Result<LoadedCsv> {
    let schema = CsvSchema {
        label_column: csv.label_column.clone(),
        categorical: csv.categorical.clone(),
    };
    load_csv(path, &schema).with_context(|| format!("loading {}", path.display()))
}

fn sweep(a: &SweepArgs, out: &Output) -> Result<(Value, Value)> {
    let mut cfg: SweepConfig = a.to_config()?;
    let mut source = json!("synthetic");
    if let Some(path) = &a.csv.data {
        let loaded = load(&a.csv, path)?;
        source = json!({ "csv": path, "rows": loaded.dataset.n(), "features": loaded.feature_names, "classes": loaded.class_names });
        cfg.dataset = Some(loaded.dataset);
    }
    let report = run_sweep(&cfg).context("running sweep")?;
    out.records(&report.records)?;
    let axis_label = match a.axis {
        crate::args::AxisArg::StudentTrees => "student trees",
        crate::args::AxisArg::TeacherDepth => "teacher depth",
    };
    out.chart("sweep", || {
        let series: Vec<Series> = cfg
            .methods
            .iter()
            .map(|&m| Series {
                name: m.name().into(),
                points: cfg
                    .values
                    .iter()
                    .filter_map(|&v| report.cell(m, v).map(|c| (v as f64, c.auc_mean)))
                    .collect(),
            })
            .collect();
        line_chart("Held-out AUC", axis_label, "AUC", &series, false, false)
    })?;
    for &v in &cfg.values {
        let line: Vec<String> = cfg
            .methods
            .iter()
            .filter_map(|&m| {
                report
                    .cell(m, v)
                    .map(|c| format!("{} {:.4}", m.name(), c.auc_mean))
            })
            .collect();
        eprintln!("{axis_label} {v}: {}", line.join(", "));
    }
    let mut config = serde_json::to_value(&cfg)?;
    config["data_source"] = source;
    Ok((
        config,
        json!({ "cells": report.cells, "chosen_alphas": report.chosen_alphas }),
    ))
}

fn alpha_sweep(a: &AlphaSweepArgs, out: &Output) -> Result<(Value, Value)> {
    let cfg = a.to_config();
    let report = run_alpha_sweep(&cfg).context("running alpha sweep")?;
    out.records(&report.records)?;
    out.chart("alpha_sweep", || {
        let series = vec![Series {
            name: "held-out corrected loss (finite α > 0)".into(),
            points: report
                .points
                .iter()
                .map(|p| (p.alpha, p.loss_mean))
                .collect(),
        }];
        line_chart("Loss across α", "α", "loss", &series, true, false)
    })?;
    for p in &report.points {
        eprintln!(
            "alpha {:>8}: loss {:.9} ± {:.2e}, accuracy {:.4}",
            p.alpha, p.loss_mean, p.loss_se, p.accuracy_mean
        );
    }
    Ok((
        serde_json::to_value(&cfg)?,
        json!({ "points": report.points }),
    ))
}

fn teacher_config(a: &DistillArgs) -> TeacherConfig {
    match a.teacher {
        TeacherKind::Forest => TeacherConfig::Forest(
            ForestParams::classifier(a.teacher_trees, a.teacher_seed())
                .with_max_depth(a.teacher_depth()),
        ),
        TeacherKind::Ridge => TeacherConfig::RidgeMean {
            scale: a.ridge_scale,
        },
        TeacherKind::Nw => TeacherConfig::NadarayaWatson {
            exponent: a.nw_exponent,
        },
    }
}

fn student_config(a: &DistillArgs) -> StudentConfig {
    match a.student {
        StudentKind::Forest => StudentConfig::Forest(
            ForestParams::regressor(a.student_trees, a.student_seed())
                .with_max_depth(a.student_depth()),
        ),
        StudentKind::Linear => StudentConfig::Linear(SgdConfig {
            schedule: StepSchedule::InverseDecay {
                eta0: a.eta0,
                t0: None,
            },
            epochs: a.epochs,
            batch_size: a.batch_size,
            seed: a.student_seed(),
            initial: None,
        }),
        StudentKind::Constant => StudentConfig::Constant,
    }
}

fn distill_cmd(a: &DistillArgs, out: &Output) -> Result<(Value, Value)> {
    let (data, source) = match &a.csv.data {
        Some(path) => {
            let loaded = load(&a.csv, path)?;
            let source = json!({ "csv": path, "rows": loaded.dataset.n(), "features": loaded.feature_names, "classes": loaded.class_names });
            (loaded.dataset, source)
        }
        None => {
            let family = a.family.family();
            let sample = generate(
                &BayesOracle::TabularMixture(family.clone()),
                a.synthetic_n,
                derive_seed(a.seed, &[0xDA7A]),
            )?;
            (
                sample.dataset,
                json!({ "synthetic": family, "rows": a.synthetic_n }),
            )
        }
    };
    if !(0.0..1.0).contains(&a.test_fraction) {
        bail!(
            "--test-fraction must lie in [0, 1), got {}",
            a.test_fraction
        );
    }
    let (train, test) = if a.test_fraction > 0.0 {
        let (tr, te) = train_test_split(&data, a.test_fraction, derive_seed(a.seed, &[0x5B1]))?;
        (tr, Some(te))
    } else {
        (data, None)
    };

    let loss = match a.loss {
        LossKind::Sel => LossSpec::Sel,
        LossKind::Ace => LossSpec::ace(a.beta)?,
    };
    let mut config = DistillConfig {
        teacher: teacher_config(a),
        student: student_config(a),
        loss,
        policy: GammaPolicy::ORTHOGONAL.with_variance(a.variance.into()),
        folds: a.folds,
        clip_floor: a.clip_floor,
        seed: a.seed,
        stratified: a.stratified,
    };
    let mut alpha_selection = Value::Null;
    let alpha = match a.alpha {
        AlphaArg::Fixed(alpha) => alpha,
        AlphaArg::Cv => {
            let sel = select_alpha_cv(
                &train,
                &default_alpha_grid(),
                a.cv_folds,
                &config,
                ValidationMetric::CorrectedLoss,
                derive_seed(a.seed, &[0xA1FA]),
            )
            .context("selecting alpha")?;
            alpha_selection = json!(sel);
            sel.chosen
        }
    };
    config.policy = GammaPolicy::from_alpha(alpha)?.with_variance(a.variance.into());

    let fit = distill(&train, &config).context("distilling")?;
    let objective = enhanced_objective(&train, &fit.bundle, &fit.student, &config.loss)?;

    let audit = if a.audit {
        let checks = audit_leakage(
            &train,
            &fit.bundle.plan,
            &config.teacher,
            config.clip_floor,
            derive_seed(a.seed, &[0xAD17]),
        )?;
        if let Some(bad) = checks.iter().find(|c| !c.unchanged) {
            bail!(
                "leakage audit failed: fold {} predictions changed after permuting its labels",
                bad.fold
            );
        }
        eprintln!("leakage audit passed on {} folds", checks.len());
        json!(checks)
    } else {
        Value::Null
    };

    let policy = config.policy.name();
    let record = |metric: &str, value: f64, n: usize| {
        let mut r = ResultRecord::new("distill", policy, metric, value, 0.0);
        r.n = Some(n);
        r.folds = Some(config.folds);
        r.alpha = Some(alpha);
        r.seed = Some(a.seed);
        r
    };
    let mut records = vec![record("train_corrected_objective", objective, train.n())];
    let mut test_metrics = serde_json::Map::new();
    if let Some(test) = &test {
        let classes = test.classes();
        let scores = fit.student.predict_scores(test.features())?;
        let acc = accuracy(&scores, &classes)?;
        records.push(record("test_accuracy", acc, test.n()));
        test_metrics.insert("accuracy".into(), json!(acc));
        if test.k() == 2 {
            match auc_binary(&score_margin(&scores), &classes) {
                Ok(auc) => {
                    records.push(record("test_auc", auc, test.n()));
                    test_metrics.insert("auc".into(), json!(auc));
                }
                Err(e) => eprintln!("warning: test AUC skipped: {e}"),
            }
        }
    }

    let artifact = Artifact::distillation(
        fit.student.clone(),
        fit.bundle.provenance.clone(),
        config.clone(),
    );
    artifact
        .save(out.dir.join("student.json"))
        .context("saving student artifact")?;
    out.json(
        "provenance.json",
        &json!({ "fold_sizes": fit.bundle.plan.fold_sizes(), "folds": fit.bundle.provenance, "leakage_audit": audit }),
    )?;
    out.records(&records)?;
    out.chart("fold_objective", || {
        let per_fold =
            orthokd::crossfit::per_fold_objectives(&train, &fit.bundle, &fit.student, &config.loss)
                .unwrap_or_default();
        let series = vec![Series {
            name: "mean corrected loss".into(),
            points: per_fold.iter().map(|&(t, l, _)| (t as f64, l)).collect(),
        }];
        line_chart("Per-fold objective", "fold", "loss", &series, false, false)
    })?;
    eprintln!("train objective {objective:.6}; policy {policy} (alpha {alpha})");

    let mut resolved = serde_json::to_value(&config)?;
    resolved["data_source"] = source;
    resolved["test_fraction"] = json!(a.test_fraction);
    Ok((
        resolved,
        json!({
            "train_rows": train.n(),
            "test_rows": test.as_ref().map(LabeledDataset::n),
            "alpha": alpha,
            "alpha_selection": alpha_selection,
            "train_corrected_objective": objective,
            "test": test_metrics,
        }),
    ))
}
