//! Command-line surface. Every experiment config field has a flag; the
//! `to_config` methods turn parsed flags into library configs.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use orthokd::data::{MixtureFamily, SmoothFamily};
use orthokd::experiments::{
    AlphaChoice, AlphaSweepConfig, Method, Prop1Config, Prop2Config, SweepAxis, SweepConfig,
};
use orthokd::gamma::VarianceEstimate;
use orthokd::seeding::derive_seed;

pub const VERSION: &str = env!("ORTHOKD_VERSION");

#[derive(Debug, Parser, Serialize)]
#[command(name = "orthokd", version = VERSION, about = "Cross-fitted knowledge distillation experiments")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Directory receiving results.csv, summary.json and any artifacts.
    #[arg(
        long,
        global = true,
        env = "ORTHOKD_OUTPUT_DIR",
        default_value = "orthokd-out"
    )]
    pub output_dir: PathBuf,
    /// Also write plot_*.svg charts.
    #[arg(long, global = true)]
    pub plot: bool,
    /// Flat `key = value` file of flags (read before parsing; explicit flags win).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Ridge-mean teacher and constant student: plug-in vs cross-fitted rates.
    Prop1(Prop1Args),
    /// Interpolating smoother teacher and constant student: rates.
    Prop2(Prop2Args),
    /// Capacity sweep scored by held-out AUC.
    Sweep(SweepArgs),
    /// Held-out corrected loss across α.
    AlphaSweep(AlphaSweepArgs),
    /// Cross-fitted distillation on a CSV or a synthetic sample.
    Distill(DistillArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Prop1(_) => "prop1",
            Command::Prop2(_) => "prop2",
            Command::Sweep(_) => "sweep",
            Command::AlphaSweep(_) => "alpha-sweep",
            Command::Distill(_) => "distill",
        }
    }
}

const DEFAULT_GRID_14: &str = "256,512,1024,2048,4096,8192,16384";
const DEFAULT_GRID_13: &str = "256,512,1024,2048,4096,8192";

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct Prop1Args {
    /// Class probabilities of the constant family.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.7,0.3")]
    pub p0: Vec<f64>,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = DEFAULT_GRID_14)]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// λ = scale · n^{-1/4}.
    #[arg(long, default_value_t = 1.0)]
    pub ridge_scale: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub clip_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Prop1Args {
    pub fn to_config(&self) -> Prop1Config {
        Prop1Config {
            p0: self.p0.clone(),
            n_grid: self.n_grid.clone(),
            seeds: self.seeds,
            ridge_scale: self.ridge_scale,
            folds: self.folds,
            clip_floor: self.clip_floor,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct Prop2Args {
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1.5)]
    pub slope: f64,
    #[arg(long, default_value_t = 0.5)]
    pub amplitude: f64,
    #[arg(long, default_value_t = 1.0)]
    pub frequency: f64,
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = DEFAULT_GRID_13)]
    pub n_grid: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Kernel singularity exponent (default d/4).
    #[arg(long)]
    pub exponent: Option<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub clip_floor: f64,
    /// Monte-Carlo draws for the constant target.
    #[arg(long, default_value_t = 1_000_000)]
    pub f0_draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Prop2Args {
    pub fn to_config(&self) -> Prop2Config {
        Prop2Config {
            family: SmoothFamily {
                d: self.d,
                k: self.k,
                slope: self.slope,
                amplitude: self.amplitude,
                frequency: self.frequency,
            },
            n_grid: self.n_grid.clone(),
            seeds: self.seeds,
            folds: self.folds,
            exponent: self.exponent,
            clip_floor: self.clip_floor,
            f0_draws: self.f0_draws,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisArg {
    StudentTrees,
    TeacherDepth,
}

/// Options for reading a CSV dataset.
#[derive(Debug, Args, Serialize)]
pub struct CsvArgs {
    /// Headered CSV to use instead of a synthetic sample.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Columns to one-hot encode.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub categorical: Vec<String>,
}

/// Tabular-mixture family parameters.
#[derive(Debug, Args, Serialize)]
pub struct MixtureArgs {
    /// Informative dimensions.
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub components: usize,
    #[arg(long, default_value_t = 1.5)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2)]
    pub noise_dims: usize,
    #[arg(long, default_value_t = 7)]
    pub family_seed: u64,
}

impl MixtureArgs {
    pub fn family(&self) -> MixtureFamily {
        MixtureFamily {
            d: self.d,
            k: self.k,
            components: self.components,
            spread: self.spread,
            sigma: self.sigma,
            noise_dims: self.noise_dims,
            family_seed: self.family_seed,
        }
    }
}

/// `cv` or a number (`inf` for the orthogonal endpoint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum AlphaArg {
    Cv,
    Fixed(f64),
}

pub fn parse_alpha(s: &str) -> std::result::Result<AlphaArg, String> {
    if s.eq_ignore_ascii_case("cv") {
        return Ok(AlphaArg::Cv);
    }
    let a: f64 = s
        .parse()
        .map_err(|_| format!("expected 'cv' or a number, got '{s}'"))?;
    if a.is_nan() || a < 0.0 {
        return Err(format!("alpha must be nonnegative, got {s}"));
    }
    Ok(AlphaArg::Fixed(a))
}

fn parse_method(s: &str) -> Result<Method> {
    let norm = s.replace('-', "_");
    match Method::ALL.iter().find(|m| m.name() == norm) {
        Some(m) => Ok(*m),
        None => bail!(
            "unknown method '{s}' (expected one of {})",
            Method::ALL.map(|m| m.name()).join(", ")
        ),
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = AxisArg::StudentTrees)]
    pub axis: AxisArg,
    /// Student tree counts or teacher depths (0 = unlimited); defaults depend on the axis.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set)]
    pub values: Vec<usize>,
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Held-out share of a CSV dataset.
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub family: MixtureArgs,
    #[arg(long, default_value_t = 1000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 4000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    /// Default 500 for the student-trees axis, 100 for teacher-depth.
    #[arg(long)]
    pub teacher_trees: Option<usize>,
    /// 0 = unlimited.
    #[arg(long, default_value_t = 0)]
    pub teacher_depth: usize,
    #[arg(long, default_value_t = 10)]
    pub student_trees: usize,
    /// 0 = unlimited.
    #[arg(long, default_value_t = 0)]
    pub student_depth: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub clip_floor: f64,
    /// `cv` or a fixed α (`inf` = orthogonal).
    #[arg(long, value_parser = parse_alpha, default_value = "cv")]
    pub alpha: AlphaArg,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    /// Subset of teacher, scratch, vanilla, crossfit, crossfit_corrected.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "teacher,scratch,vanilla,crossfit,crossfit_corrected")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn depth(v: usize) -> Option<usize> {
    (v > 0).then_some(v)
}

impl SweepArgs {
    /// Library config without the dataset (the caller loads it).
    pub fn to_config(&self) -> Result<SweepConfig> {
        let base = match self.axis {
            AxisArg::StudentTrees => SweepConfig::overfit(),
            AxisArg::TeacherDepth => SweepConfig::underfit(),
        };
        let methods = self
            .methods
            .iter()
            .map(|m| parse_method(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(SweepConfig {
            axis: match self.axis {
                AxisArg::StudentTrees => SweepAxis::StudentTrees,
                AxisArg::TeacherDepth => SweepAxis::TeacherDepth,
            },
            values: if self.values.is_empty() {
                base.values
            } else {
                self.values.clone()
            },
            family: self.family.family(),
            dataset: None,
            test_fraction: self.test_fraction,
            n_train: self.n_train,
            n_test: self.n_test,
            seeds: self.seeds,
            teacher_trees: self.teacher_trees.unwrap_or(base.teacher_trees),
            teacher_depth: depth(self.teacher_depth),
            student_trees: self.student_trees,
            student_depth: depth(self.student_depth),
            folds: self.folds,
            clip_floor: self.clip_floor,
            alpha: match self.alpha {
                AlphaArg::Cv => AlphaChoice::CrossValidated {
                    folds: self.cv_folds,
                },
                AlphaArg::Fixed(alpha) => AlphaChoice::Fixed { alpha },
            },
            methods,
            seed: self.seed,
        })
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct AlphaSweepArgs {
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0.7,0.3")]
    pub p0: Vec<f64>,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    #[arg(long, default_value_t = 4096)]
    pub n_validation: usize,
    /// Candidate α values; 0 is the uncorrected run and `inf` the orthogonal one.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, default_value = "0,0.001,0.01,0.1,1,10,100,1000,inf")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub seeds: usize,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_scale: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub clip_floor: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl AlphaSweepArgs {
    pub fn to_config(&self) -> AlphaSweepConfig {
        AlphaSweepConfig {
            p0: self.p0.clone(),
            n: self.n,
            n_validation: self.n_validation,
            alphas: self.alphas.clone(),
            seeds: self.seeds,
            folds: self.folds,
            ridge_scale: self.ridge_scale,
            clip_floor: self.clip_floor,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherKind {
    Forest,
    Ridge,
    Nw,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudentKind {
    Forest,
    Linear,
    Constant,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Sel,
    Ace,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceKind {
    Sample,
    Plugin,
}

impl From<VarianceKind> for VarianceEstimate {
    fn from(v: VarianceKind) -> Self {
        match v {
            VarianceKind::Sample => VarianceEstimate::Sample,
            VarianceKind::Plugin => VarianceEstimate::Plugin,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct DistillArgs {
    #[command(flatten)]
    pub csv: CsvArgs,
    /// Size of a synthetic tabular-mixture sample used when no CSV is given.
    #[arg(long, default_value_t = 500)]
    pub synthetic_n: usize,
    #[command(flatten)]
    pub family: MixtureArgs,
    /// Held-out share for reporting test metrics (0 trains on everything).
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    #[arg(long, value_enum, default_value_t = TeacherKind::Forest)]
    pub teacher: TeacherKind,
    #[arg(long, default_value_t = 100)]
    pub teacher_trees: usize,
    /// 0 = unlimited.
    #[arg(long, default_value_t = 0)]
    pub teacher_depth: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ridge_scale: f64,
    /// Smoother exponent (default d/4).
    #[arg(long)]
    pub nw_exponent: Option<f64>,
    #[arg(long, value_enum, default_value_t = StudentKind::Forest)]
    pub student: StudentKind,
    #[arg(long, default_value_t = 10)]
    pub student_trees: usize,
    /// 0 = unlimited.
    #[arg(long, default_value_t = 0)]
    pub student_depth: usize,
    /// SGD epochs for the linear student.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Initial SGD step; decays as η₀/(1 + t/n).
    #[arg(long, default_value_t = 0.1)]
    pub eta0: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = LossKind::Sel)]
    pub loss: LossKind,
    /// ACE inverse temperature.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// `cv`, 0 (no correction), a positive α, or `inf` (orthogonal).
    #[arg(long, value_parser = parse_alpha, default_value = "inf")]
    pub alpha: AlphaArg,
    #[arg(long, default_value_t = 5)]
    pub cv_folds: usize,
    #[arg(long, value_enum, default_value_t = VarianceKind::Sample)]
    pub variance: VarianceKind,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    /// Deal classes round-robin across folds.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub clip_floor: f64,
    /// Refit each fold's teacher on label-permuted data and require identical predictions.
    #[arg(long)]
    pub audit: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DistillArgs {
    pub fn teacher_seed(&self) -> u64 {
        derive_seed(self.seed, &[0x7EA])
    }

    pub fn student_seed(&self) -> u64 {
        derive_seed(self.seed, &[0x57D])
    }

    pub fn teacher_depth(&self) -> Option<usize> {
        depth(self.teacher_depth)
    }

    pub fn student_depth(&self) -> Option<usize> {
        depth(self.student_depth)
    }
}
