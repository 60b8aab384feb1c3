//! Versioned JSON artifacts holding fitted teachers, students and fold
//! provenance.
//!
//! Schema (`format = "orthokd-artifact"`, `version = 1`): a JSON object with
//! `format`, `version`, `kind` (`"teacher"`, `"student"` or `"distillation"`),
//! and optional `teacher`, `student`, `provenance`, `config` members. Trees
//! are stored as flat node arrays with child indices.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossfit::{DistillConfig, FoldProvenance};
use crate::error::{invalid, Result};
use crate::students::ScoreModel;
use crate::teachers::Teacher;

pub const ARTIFACT_FORMAT: &str = "orthokd-artifact";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub format: String,
    pub version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<Teacher>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub student: Option<ScoreModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub provenance: Vec<FoldProvenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<DistillConfig>,
}

impl Artifact {
    fn empty(kind: &str) -> Self {
        Self {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            kind: kind.into(),
            teacher: None,
            student: None,
            provenance: Vec::new(),
            config: None,
        }
    }

    pub fn teacher(t: Teacher) -> Self {
        Self {
            teacher: Some(t),
            ..Self::empty("teacher")
        }
    }

    pub fn student(s: ScoreModel) -> Self {
        Self {
            student: Some(s),
            ..Self::empty("student")
        }
    }

    pub fn distillation(
        s: ScoreModel,
        provenance: Vec<FoldProvenance>,
        config: DistillConfig,
    ) -> Self {
        Self {
            student: Some(s),
            provenance,
            config: Some(config),
            ..Self::empty("distillation")
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Artifact = serde_json::from_str(text)?;
        if a.format != ARTIFACT_FORMAT {
            return invalid(format!("not an artifact file (format '{}')", a.format));
        }
        if a.version != ARTIFACT_VERSION {
            return invalid(format!("unsupported artifact version {}", a.version));
        }
        Ok(a)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::students::ConstantStudent;

    #[test]
    fn round_trip_and_version_check() {
        let a = Artifact::student(ScoreModel::Constant(ConstantStudent {
            value: vec![-0.25, -1.5],
        }));
        let back = Artifact::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        let bumped = a
            .to_json()
            .unwrap()
            .replace("\"version\": 1", "\"version\": 9");
        assert!(Artifact::from_json(&bumped).is_err());
    }
}
