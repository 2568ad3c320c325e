//! End-to-end orchestration: filter the corpus, fit the scorer on the
//! original texts, compute each document's budget-trajectory features in
//! parallel, then train and evaluate the classifier.
//!
//! Every per-document seed is a stable hash of the run seed and the doc id,
//! so results do not depend on document order or thread count. Alongside the
//! trajectory classifier, the same split is reused to train a one-feature
//! baseline on the original mean token score; the gap between the two F1
//! scores is what the trajectory features buy.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::corpus::{filter_corpus, Document, Label, RejectedDocument};
use crate::detect::{
    evaluate, filter_outliers, split_stratified, train, ClassifierModel, DataRow, EvalMetrics,
};
use crate::entity::SensitivityRegistry;
use crate::error::{Error, Result};
use crate::features::extract_trajectory;
use crate::mech::stable_hash;
use crate::scorer::TrigramScorer;

/// One document's features, ready for training or export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    pub epsilon_grid: Vec<f64>,
    /// Flattened trajectory, three values per grid level.
    pub features: Vec<f64>,
    /// Mean token score of the unperturbed text, the baseline feature.
    pub original_mean_score: f64,
}

/// Per-document RNG seed: a stable mix of the run seed and the document id.
pub fn doc_seed(run_seed: u64, doc_id: &str) -> u64 {
    stable_hash(&[&run_seed.to_le_bytes(), doc_id.as_bytes()])
}

/// Fits the scorer on the original texts of `docs`.
pub fn fit_scorer(docs: &[Document], config: &RunConfig) -> Result<TrigramScorer> {
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    TrigramScorer::fit(&texts, config.smoothing)
}

/// Computes trajectory features for every document, in parallel. The input
/// order is preserved.
pub fn compute_features(
    docs: &[Document],
    scorer: &TrigramScorer,
    config: &RunConfig,
    registry: &SensitivityRegistry,
) -> Result<Vec<FeatureRecord>> {
    let grid = config.grid_levels()?;
    docs.par_iter()
        .map(|doc| {
            let trajectory = extract_trajectory(
                &doc.text,
                &grid,
                scorer,
                config.metric,
                registry,
                &config.sanitize,
                doc_seed(config.seed, &doc.doc_id),
            )?;
            Ok(FeatureRecord {
                doc_id: doc.doc_id.clone(),
                label: doc.label,
                source: doc.source.clone(),
                epsilon_grid: trajectory.epsilon_grid.clone(),
                features: trajectory.flat(),
                original_mean_score: scorer.mean_score(&doc.text, config.metric)?,
            })
        })
        .collect()
}

/// Writes feature records as JSONL, one per line.
pub fn write_features_jsonl(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::json(path, e))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Reads feature records from JSONL, reporting corrupt lines by number.
pub fn read_features_jsonl(path: &Path) -> Result<Vec<FeatureRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: FeatureRecord =
            serde_json::from_str(&line).map_err(|e| Error::CorruptLine {
                line: i + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Wide-format CSV export of the trajectories: one row per document, three
/// columns per grid level.
pub fn write_trajectory_csv(path: &Path, records: &[FeatureRecord]) -> Result<()> {
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let levels = records.first().map_or(0, |r| r.epsilon_grid.len());
    let mut header = String::from("doc_id,label,original_mean_score");
    for i in 0..levels {
        header.push_str(&format!(",mean_{i:02},conf_{i:02},effect_{i:02}"));
    }
    writeln!(file, "{header}").map_err(|e| Error::io(path, e))?;
    for record in records {
        if record.epsilon_grid.len() != levels {
            return Err(Error::Protocol(format!(
                "record {} has {} grid levels, expected {levels}",
                record.doc_id,
                record.epsilon_grid.len()
            )));
        }
        let label = record.label.map_or(String::new(), |l| l.to_string());
        let mut row = format!(
            "{},{label},{}",
            record.doc_id, record.original_mean_score
        );
        for value in &record.features {
            row.push_str(&format!(",{value}"));
        }
        writeln!(file, "{row}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn labeled_rows(records: &[FeatureRecord]) -> Result<Vec<DataRow>> {
    records
        .iter()
        .map(|record| {
            let label = record.label.ok_or_else(|| {
                Error::DegenerateInput(format!(
                    "document {} has no label, cannot train on it",
                    record.doc_id
                ))
            })?;
            Ok(DataRow {
                doc_id: record.doc_id.clone(),
                label,
                features: record.features.clone(),
            })
        })
        .collect()
}

/// The classification half of a run, with the baseline alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationOutcome {
    pub model: ClassifierModel,
    pub baseline_model: ClassifierModel,
    pub metrics: EvalMetrics,
    pub baseline_metrics: EvalMetrics,
    pub n_outliers_removed: usize,
    pub n_train: usize,
    pub n_test: usize,
}

/// Removes outlier rows, splits, trains, and evaluates, then repeats the
/// training on the one-dimensional baseline feature with the same split.
pub fn classify_features(
    records: &[FeatureRecord],
    config: &RunConfig,
) -> Result<ClassificationOutcome> {
    let rows = labeled_rows(records)?;
    let (kept, removed) = filter_outliers(&rows, config.outlier_factor)?;
    let (train_rows, test_rows) = split_stratified(&kept, config.train_fraction, config.seed)?;
    if test_rows.is_empty() {
        return Err(Error::DegenerateInput(
            "the split left no test rows".into(),
        ));
    }
    let model = train(&train_rows, &config.train, config.seed)?;
    let metrics = evaluate(&model, &test_rows)?;

    let baseline_of = |rows: &[DataRow]| -> Result<Vec<DataRow>> {
        let by_id: std::collections::BTreeMap<&str, f64> = records
            .iter()
            .map(|r| (r.doc_id.as_str(), r.original_mean_score))
            .collect();
        rows.iter()
            .map(|row| {
                let &score = by_id.get(row.doc_id.as_str()).ok_or_else(|| {
                    Error::Protocol(format!("row {} lost its feature record", row.doc_id))
                })?;
                Ok(DataRow {
                    doc_id: row.doc_id.clone(),
                    label: row.label,
                    features: vec![score],
                })
            })
            .collect()
    };
    let baseline_model = train(&baseline_of(&train_rows)?, &config.train, config.seed)?;
    let baseline_metrics = evaluate(&baseline_model, &baseline_of(&test_rows)?)?;

    Ok(ClassificationOutcome {
        model,
        baseline_model,
        metrics,
        baseline_metrics,
        n_outliers_removed: removed.len(),
        n_train: train_rows.len(),
        n_test: test_rows.len(),
    })
}

/// Everything a finished run reports. Serialized as `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub baseline_f1: f64,
    pub n_input: usize,
    pub n_filtered_out: usize,
    pub n_outliers_removed: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub metric: crate::scorer::Metric,
}

/// Artifacts written by [`run_pipeline`], relative to its output directory.
pub const FEATURES_FILE: &str = "features.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const MODEL_FILE: &str = "model.json";
pub const BASELINE_MODEL_FILE: &str = "baseline_model.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const REJECTIONS_FILE: &str = "rejections.json";

/// Full run: filter, score, featurize, classify, and write all artifacts
/// into `out_dir`.
pub fn run_pipeline(
    docs: Vec<Document>,
    config: &RunConfig,
    registry: &SensitivityRegistry,
    out_dir: &Path,
) -> Result<PipelineSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let n_input = docs.len();
    let outcome = filter_corpus(docs, &config.filter, registry);
    if outcome.kept.is_empty() {
        return Err(Error::DegenerateInput(
            "the filter rejected every document".into(),
        ));
    }
    write_rejections(&out_dir.join(REJECTIONS_FILE), &outcome.rejected)?;

    let scorer = fit_scorer(&outcome.kept, config)?;
    let records = compute_features(&outcome.kept, &scorer, config, registry)?;
    write_features_jsonl(&out_dir.join(FEATURES_FILE), &records)?;
    write_trajectory_csv(&out_dir.join(TRAJECTORIES_FILE), &records)?;

    let summary = classify_records(&records, config, n_input, outcome.rejected.len(), out_dir)?;
    Ok(summary)
}

/// Classification-only run over precomputed feature records; writes the
/// model and metrics artifacts.
pub fn classify_records(
    records: &[FeatureRecord],
    config: &RunConfig,
    n_input: usize,
    n_filtered_out: usize,
    out_dir: &Path,
) -> Result<PipelineSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outcome = classify_features(records, config)?;
    outcome.model.save(&out_dir.join(MODEL_FILE))?;
    outcome
        .baseline_model
        .save(&out_dir.join(BASELINE_MODEL_FILE))?;
    let summary = PipelineSummary {
        f1: outcome.metrics.f1,
        precision: outcome.metrics.precision,
        recall: outcome.metrics.recall,
        accuracy: outcome.metrics.accuracy,
        baseline_f1: outcome.baseline_metrics.f1,
        n_input,
        n_filtered_out,
        n_outliers_removed: outcome.n_outliers_removed,
        n_train: outcome.n_train,
        n_test: outcome.n_test,
        seed: config.seed,
        metric: config.metric,
    };
    let path = out_dir.join(METRICS_FILE);
    let body = serde_json::to_string_pretty(&summary).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}

fn write_rejections(path: &Path, rejected: &[RejectedDocument]) -> Result<()> {
    let body = serde_json::to_string_pretty(rejected).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Grid-size sweep: one classification run per level count, everything else
/// fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub d: usize,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub baseline_f1: f64,
    pub n_train: usize,
    pub n_test: usize,
}

pub fn ablate(
    docs: &[Document],
    config: &RunConfig,
    level_counts: &[usize],
    registry: &SensitivityRegistry,
) -> Result<Vec<AblationRow>> {
    if level_counts.is_empty() {
        return Err(Error::Parameter("no grid sizes to sweep".into()));
    }
    let outcome = filter_corpus(docs.to_vec(), &config.filter, registry);
    if outcome.kept.is_empty() {
        return Err(Error::DegenerateInput(
            "the filter rejected every document".into(),
        ));
    }
    let scorer = fit_scorer(&outcome.kept, config)?;
    let mut rows = Vec::with_capacity(level_counts.len());
    for &count in level_counts {
        let mut variant = config.clone();
        variant.grid.count = count;
        let records = compute_features(&outcome.kept, &scorer, &variant, registry)?;
        let result = classify_features(&records, &variant)?;
        rows.push(AblationRow {
            d: count,
            f1: result.metrics.f1,
            precision: result.metrics.precision,
            recall: result.metrics.recall,
            accuracy: result.metrics.accuracy,
            baseline_f1: result.baseline_metrics.f1,
            n_train: result.n_train,
            n_test: result.n_test,
        });
    }
    Ok(rows)
}

/// Renders ablation rows as CSV.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("d,f1,precision,recall,accuracy,baseline_f1,n_train,n_test\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.d,
            row.f1,
            row.precision,
            row.recall,
            row.accuracy,
            row.baseline_f1,
            row.n_train,
            row.n_test
        ));
    }
    out
}
