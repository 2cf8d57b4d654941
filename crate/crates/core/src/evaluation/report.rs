use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    FilterEval,
    SyntheticHoldout,
    AblationGrid,
    EndToEnd,
    Robustness,
    Scaling,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::FilterEval,
        Experiment::SyntheticHoldout,
        Experiment::AblationGrid,
        Experiment::EndToEnd,
        Experiment::Robustness,
        Experiment::Scaling,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::FilterEval => "filter_eval",
            Experiment::SyntheticHoldout => "synthetic_holdout",
            Experiment::AblationGrid => "ablation_grid",
            Experiment::EndToEnd => "end_to_end",
            Experiment::Robustness => "robustness",
            Experiment::Scaling => "scaling",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown experiment {s:?}")))
    }
}

/// One line of `metrics.csv`. The metric name carries the setting it was
/// measured under as a `setting/` prefix, e.g. `tfidf/mrr` or
/// `noise=0.10/recall`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub experiment: String,
    pub metric: String,
    pub k: Option<usize>,
    pub value: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Artifact name → SHA-256 hex.
    pub fingerprints: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub experiment: Experiment,
    pub metrics: Vec<MetricRow>,
    pub params: BTreeMap<String, serde_json::Value>,
    /// Seconds, samples per second and similar; not bounded to [0, 1].
    pub timing: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

impl EvaluationReport {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            metrics: Vec::new(),
            params: BTreeMap::new(),
            timing: BTreeMap::new(),
            provenance: Provenance {
                seed,
                fingerprints: BTreeMap::new(),
            },
        }
    }

    /// Adds a metric value, which must lie in [0, 1].
    pub fn push(&mut self, metric: impl Into<String>, k: Option<usize>, value: f64) -> Result<()> {
        let metric = metric.into();
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Metric(format!("{metric} = {value} is outside [0, 1]")));
        }
        self.metrics.push(MetricRow {
            experiment: self.experiment.as_str().to_string(),
            metric,
            k,
            value,
            seed: self.provenance.seed,
        });
        Ok(())
    }

    pub fn param(&mut self, name: &str, value: impl Serialize) -> Result<()> {
        self.params.insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn time(&mut self, name: impl Into<String>, value: f64) {
        self.timing.insert(name.into(), value);
    }

    /// First metric row with this name and `k`.
    pub fn get(&self, metric: &str, k: Option<usize>) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.metrics {
            w.serialize(row)?;
        }
        w.into_inner().map_err(|e| Error::invalid(e.to_string()))
    }

    /// Writes `report.json` and `metrics.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(self)?)?;
        write_atomic(&dir.join("metrics.csv"), &self.to_csv_bytes()?)
    }
}
