//! Result rows shared by every experiment and their CSV encoding.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// One measured quantity. Optional fields are empty in aggregate rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub n: Option<usize>,
    pub folds: Option<usize>,
    pub alpha: Option<f64>,
    pub policy: String,
    pub metric: String,
    pub value: f64,
    pub std_error: f64,
    pub seed: Option<u64>,
    /// Sweep coordinate (e.g. student tree count), if any.
    pub axis: Option<f64>,
}

impl ResultRecord {
    pub fn new(experiment: &str, policy: &str, metric: &str, value: f64, std_error: f64) -> Self {
        Self {
            experiment: experiment.into(),
            n: None,
            folds: None,
            alpha: None,
            policy: policy.into(),
            metric: metric.into(),
            value,
            std_error,
            seed: None,
            axis: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return invalid(format!(
                "{}/{}: non-finite value",
                self.experiment, self.metric
            ));
        }
        if !(self.std_error >= 0.0) {
            return invalid(format!(
                "{}/{}: negative or NaN standard error",
                self.experiment, self.metric
            ));
        }
        Ok(())
    }

    fn sort_key_cmp(&self, other: &Self) -> Ordering {
        fn opt_f(a: Option<f64>, b: Option<f64>) -> Ordering {
            match (a, b) {
                (Some(x), Some(y)) => x.total_cmp(&y),
                (a, b) => a.is_some().cmp(&b.is_some()),
            }
        }
        self.experiment
            .cmp(&other.experiment)
            .then_with(|| self.metric.cmp(&other.metric))
            .then_with(|| self.policy.cmp(&other.policy))
            .then_with(|| opt_f(self.axis, other.axis))
            .then_with(|| self.n.cmp(&other.n))
            .then_with(|| opt_f(self.alpha, other.alpha))
            .then_with(|| self.folds.cmp(&other.folds))
            .then_with(|| self.seed.cmp(&other.seed))
    }
}

/// Sorts records into the canonical output order.
pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| a.sort_key_cmp(b));
}

/// Writes sorted records as CSV with a header row.
pub fn write_records<W: Write>(out: W, records: &[ResultRecord]) -> Result<()> {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut w = csv::Writer::from_writer(out);
    for r in &sorted {
        r.validate()?;
        w.serialize(r)?;
    }
    if sorted.is_empty() {
        w.write_record([
            "experiment",
            "n",
            "folds",
            "alpha",
            "policy",
            "metric",
            "value",
            "std_error",
            "seed",
            "axis",
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_is_sorted_and_stable() {
        let mut a = ResultRecord::new("prop1", "vanilla", "mse", 0.5, 0.1);
        a.n = Some(512);
        let mut b = a.clone();
        b.n = Some(256);
        let mut one = Vec::new();
        write_records(&mut one, &[a.clone(), b.clone()]).unwrap();
        let mut two = Vec::new();
        write_records(&mut two, &[b, a]).unwrap();
        assert_eq!(one, two);
        let text = String::from_utf8(one).unwrap();
        assert!(
            text.starts_with("experiment,n,folds,alpha,policy,metric,value,std_error,seed,axis\n")
        );
        assert!(text.find(",256,").unwrap() < text.find(",512,").unwrap());
    }

    #[test]
    fn non_finite_rejected() {
        let r = ResultRecord::new("x", "p", "m", f64::NAN, 0.0);
        assert!(write_records(Vec::new(), &[r]).is_err());
    }
}
