//! Knowledge distillation with cross-fitted teachers and loss corrections.
//!
//! The pipeline: a teacher estimates class probabilities p̂ (clipped at ε),
//! a [`gamma::GammaPolicy`] turns each example's label and p̂ into diagonal
//! correction coefficients, and a student minimizes the corrected loss
//! `ℓ(f, p̂) − (y − p̂)ᵀ diag(v) f`. With cross-fitting, each example's p̂
//! comes from a teacher that never saw it.
//!
//! ```
//! use orthokd::prelude::*;
//!
//! let oracle = BayesOracle::constant(vec![0.7, 0.3]);
//! let sample = generate(&oracle, 400, 1).unwrap();
//! let config = DistillConfig {
//!     teacher: TeacherConfig::RidgeMean { scale: 1.0 },
//!     student: StudentConfig::Constant,
//!     ..DistillConfig::default()
//! };
//! let fit = distill(&sample.dataset, &config).unwrap();
//! assert_eq!(fit.student.k(), 2);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifact;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod experiments;
pub mod forest;
pub mod gamma;
pub mod losses;
pub mod metrics;
pub mod report;
pub mod seeding;
pub mod simplex;
pub mod students;
pub mod teachers;

pub use error::{KdError, Result};

pub mod prelude {
    pub use crate::crossfit::{
        distill, enhanced_kd_fit, fit_nuisances, make_folds, vanilla_kd_fit, DistillConfig,
        FoldPlan, NuisanceBundle,
    };
    pub use crate::data::{generate, BayesOracle, MixtureFamily, SmoothFamily};
    pub use crate::error::{KdError, Result};
    pub use crate::forest::{ForestParams, MaxFeatures};
    pub use crate::gamma::GammaPolicy;
    pub use crate::losses::LossSpec;
    pub use crate::simplex::{
        clip_probabilities, LabeledDataset, ProbabilityField, DEFAULT_CLIP_FLOOR,
    };
    pub use crate::students::{ScoreModel, SgdConfig, StudentConfig};
    pub use crate::teachers::TeacherConfig;
}
