//! Metrics, lexical baselines, noise injection and experiment harnesses.

mod experiments;
mod lexical;
mod metrics;
mod noise;
mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use lexical::{bm25_baseline, tfidf_baseline, RankedLists, BM25_B, BM25_K1};
pub use metrics::{
    auprc, confusion_metrics, f1, f1_at_k, mean_average_precision, mrr, precision_at_k, recall_at_k,
    ClassificationMetrics, ConfusionMatrix, RankedResult,
};
pub use experiments::{
    holdout_split, lexical_rank_all, rank_all, run_experiment, split_indices, train_variant, ExperimentConfig,
    ExperimentInputs, LexicalBaseline, ModelVariant,
};
pub use noise::inject_noise;
pub use report::{EvaluationReport, Experiment, MetricRow, Provenance};

use crate::error::Result;
use crate::io::read_jsonl;

/// One annotated posting: `{"posting_id", "text", "skill_ids"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPosting {
    pub posting_id: String,
    pub text: String,
    pub skill_ids: Vec<String>,
}

pub fn load_gold_postings(path: &Path) -> Result<Vec<GoldPosting>> {
    read_jsonl(path)
}
