//! Feature-vector classification: outlier removal, stratified splitting,
//! per-feature normalization, and a full-batch logistic regression trained
//! by gradient descent.
//!
//! Training is deterministic: zero-initialized weights, fixed epoch count,
//! and a monotonicity guard that fails the run if the regularized loss ever
//! rises by more than a hair between epochs.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::mech::RandomSource;
use crate::stats::quantile_sorted;

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub doc_id: String,
    pub label: Label,
    pub features: Vec<f64>,
}

fn dimension(rows: &[DataRow]) -> Result<usize> {
    let Some(first) = rows.first() else {
        return Err(Error::DegenerateInput("no rows".into()));
    };
    let dim = first.features.len();
    if dim == 0 {
        return Err(Error::DegenerateInput("rows have no features".into()));
    }
    for row in rows {
        if row.features.len() != dim {
            return Err(Error::DegenerateInput(format!(
                "row {} has {} features, expected {dim}",
                row.doc_id,
                row.features.len()
            )));
        }
        if row.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput(format!(
                "row {} has a non-finite feature",
                row.doc_id
            )));
        }
    }
    Ok(dim)
}

/// Removes every row with any feature outside its interquartile fences
/// `[Q1 - factor*IQR, Q3 + factor*IQR]`. Fences are computed over all rows.
/// Returns the survivors and the ids of the removed rows.
pub fn filter_outliers(rows: &[DataRow], factor: f64) -> Result<(Vec<DataRow>, Vec<String>)> {
    let dim = dimension(rows)?;
    if !(factor >= 0.0) || !factor.is_finite() {
        return Err(Error::Parameter(format!(
            "fence factor must be a nonnegative finite real, got {factor}"
        )));
    }
    let mut fences = Vec::with_capacity(dim);
    for j in 0..dim {
        let mut column: Vec<f64> = rows.iter().map(|r| r.features[j]).collect();
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q1 = quantile_sorted(&column, 0.25);
        let q3 = quantile_sorted(&column, 0.75);
        let iqr = q3 - q1;
        fences.push((q1 - factor * iqr, q3 + factor * iqr));
    }
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for row in rows {
        let outlier = row
            .features
            .iter()
            .zip(&fences)
            .any(|(&v, &(lo, hi))| v < lo || v > hi);
        if outlier {
            removed.push(row.doc_id.clone());
        } else {
            kept.push(row.clone());
        }
    }
    Ok((kept, removed))
}

/// Splits per class: each class is shuffled and the first
/// `floor(fraction * n + 0.5)` rows go to the training side.
pub fn split_stratified(
    rows: &[DataRow],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<DataRow>, Vec<DataRow>)> {
    dimension(rows)?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train_fraction must lie strictly between 0 and 1, got {train_fraction}"
        )));
    }
    let mut by_class: BTreeMap<u8, Vec<&DataRow>> = BTreeMap::new();
    for row in rows {
        by_class
            .entry(row.label.target() as u8)
            .or_default()
            .push(row);
    }
    let mut rng = RandomSource::new(seed, 0);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (_, class_rows) in by_class {
        let mut indices: Vec<usize> = (0..class_rows.len()).collect();
        rng.shuffle(&mut indices);
        let n_train = (train_fraction * class_rows.len() as f64 + 0.5).floor() as usize;
        for (i, &idx) in indices.iter().enumerate() {
            if i < n_train {
                train.push(class_rows[idx].clone());
            } else {
                test.push(class_rows[idx].clone());
            }
        }
    }
    Ok((train, test))
}

/// Feature standardization fitted on training rows. Features with no spread
/// are dropped; `kept` lists the surviving source indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kept: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Normalization {
    pub fn fit(rows: &[DataRow]) -> Result<Normalization> {
        let dim = dimension(rows)?;
        if rows.len() < 2 {
            return Err(Error::DegenerateInput(
                "normalization needs at least two rows".into(),
            ));
        }
        let n = rows.len() as f64;
        let mut kept = Vec::new();
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for j in 0..dim {
            let m = rows.iter().map(|r| r.features[j]).sum::<f64>() / n;
            let var = rows
                .iter()
                .map(|r| (r.features[j] - m).powi(2))
                .sum::<f64>()
                / (n - 1.0);
            let s = var.sqrt();
            if s > 1e-12 {
                kept.push(j);
                mean.push(m);
                sd.push(s);
            }
        }
        if kept.is_empty() {
            return Err(Error::DegenerateInput(
                "every feature is constant on the training rows".into(),
            ));
        }
        Ok(Normalization { kept, mean, sd })
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.kept.len());
        for (slot, &j) in self.kept.iter().enumerate() {
            let Some(&v) = features.get(j) else {
                return Err(Error::DegenerateInput(format!(
                    "feature vector of length {} lacks index {j}",
                    features.len()
                )));
            };
            out.push((v - self.mean[slot]) / self.sd[slot]);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 500,
            l2: 1e-3,
        }
    }
}

/// Trained logistic regression over normalized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub normalization: Normalization,
    pub config: TrainConfig,
    pub seed: u64,
    pub final_loss: f64,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Mean cross-entropy plus `l2/2 * ||w||^2`, and its gradient in `(w, b)`.
fn loss_and_gradient(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    b: f64,
    l2: f64,
) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; w.len()];
    let mut grad_b = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let t = xi.iter().zip(w).map(|(a, c)| a * c).sum::<f64>() + b;
        let p = sigmoid(t);
        let clamped = p.clamp(1e-12, 1.0 - 1e-12);
        loss -= yi * clamped.ln() + (1.0 - yi) * (1.0 - clamped).ln();
        let residual = p - yi;
        for (g, &a) in grad_w.iter_mut().zip(xi) {
            *g += residual * a;
        }
        grad_b += residual;
    }
    loss /= n;
    grad_b /= n;
    for (g, &c) in grad_w.iter_mut().zip(w) {
        *g = *g / n + l2 * c;
    }
    loss += 0.5 * l2 * w.iter().map(|c| c * c).sum::<f64>();
    (loss, grad_w, grad_b)
}

/// Fits the classifier on `rows`. The run fails if the loss rises between
/// epochs by more than `1e-6`, which flags a learning rate too large for the
/// data. `seed` is recorded in the model so a saved model names the run
/// that produced it; training itself is deterministic.
pub fn train(rows: &[DataRow], config: &TrainConfig, seed: u64) -> Result<ClassifierModel> {
    dimension(rows)?;
    if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
        return Err(Error::Parameter(format!(
            "learning_rate must be a positive finite real, got {}",
            config.learning_rate
        )));
    }
    if config.epochs == 0 {
        return Err(Error::Parameter("epochs must be positive".into()));
    }
    if !(config.l2 >= 0.0) || !config.l2.is_finite() {
        return Err(Error::Parameter(format!(
            "l2 must be a nonnegative finite real, got {}",
            config.l2
        )));
    }
    let classes: std::collections::BTreeSet<u8> =
        rows.iter().map(|r| r.label.target() as u8).collect();
    if classes.len() < 2 {
        return Err(Error::DegenerateInput(
            "training rows contain only one class".into(),
        ));
    }

    let normalization = Normalization::fit(rows)?;
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| normalization.apply(&r.features))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = rows.iter().map(|r| r.label.target()).collect();

    let mut w = vec![0.0; normalization.kept.len()];
    let mut b = 0.0;
    let mut previous: Option<f64> = None;
    let mut current = 0.0;
    for epoch in 0..config.epochs {
        let (loss, grad_w, grad_b) = loss_and_gradient(&x, &y, &w, b, config.l2);
        current = loss;
        if let Some(prev) = previous {
            if loss > prev + 1e-6 {
                return Err(Error::Diverged {
                    epoch,
                    previous: prev,
                    current: loss,
                });
            }
        }
        previous = Some(loss);
        for (c, g) in w.iter_mut().zip(&grad_w) {
            *c -= config.learning_rate * g;
        }
        b -= config.learning_rate * grad_b;
    }
    let (final_loss, _, _) = loss_and_gradient(&x, &y, &w, b, config.l2);
    if final_loss > current + 1e-6 {
        return Err(Error::Diverged {
            epoch: config.epochs,
            previous: current,
            current: final_loss,
        });
    }

    Ok(ClassifierModel {
        weights: w,
        bias: b,
        normalization,
        config: *config,
        seed,
        final_loss,
    })
}

impl ClassifierModel {
    pub fn predict_proba(&self, features: &[f64]) -> Result<f64> {
        let z = self.normalization.apply(features)?;
        let t = z.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>() + self.bias;
        Ok(sigmoid(t))
    }

    pub fn predict(&self, features: &[f64]) -> Result<Label> {
        Ok(if self.predict_proba(features)? >= 0.5 {
            Label::Machine
        } else {
            Label::Human
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ClassifierModel> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&body).map_err(|e| Error::json(path, e))
    }
}

/// Confusion-matrix metrics with machine as the positive class. Undefined
/// ratios fall to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

pub fn evaluate(model: &ClassifierModel, rows: &[DataRow]) -> Result<EvalMetrics> {
    if rows.is_empty() {
        return Err(Error::DegenerateInput("no rows to evaluate".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for row in rows {
        let predicted = model.predict(&row.features)?;
        match (predicted, row.label) {
            (Label::Machine, Label::Machine) => tp += 1,
            (Label::Machine, Label::Human) => fp += 1,
            (Label::Human, Label::Human) => tn += 1,
            (Label::Human, Label::Machine) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalMetrics {
        accuracy: ratio(tp + tn, rows.len()),
        precision,
        recall,
        f1,
        n: rows.len(),
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, label: Label, features: Vec<f64>) -> DataRow {
        DataRow {
            doc_id: id.into(),
            label,
            features,
        }
    }

    fn separable(n_per_class: usize) -> Vec<DataRow> {
        let mut rows = Vec::new();
        let mut rng = RandomSource::new(5, 0);
        for i in 0..n_per_class {
            rows.push(row(
                &format!("h{i}"),
                Label::Human,
                vec![-1.0 - rng.next_f64(), rng.next_f64()],
            ));
            rows.push(row(
                &format!("m{i}"),
                Label::Machine,
                vec![1.0 + rng.next_f64(), rng.next_f64()],
            ));
        }
        rows
    }

    #[test]
    fn outlier_rows_are_removed_by_any_wild_feature() {
        let mut rows: Vec<DataRow> = (0..20)
            .map(|i| {
                row(
                    &format!("d{i}"),
                    Label::Human,
                    vec![i as f64 * 0.1, 1.0],
                )
            })
            .collect();
        rows.push(row("wild", Label::Machine, vec![1.0, 500.0]));
        let (kept, removed) = filter_outliers(&rows, 1.5).unwrap();
        assert_eq!(removed, vec!["wild".to_string()]);
        assert_eq!(kept.len(), 20);
    }

    #[test]
    fn constant_features_remove_nobody() {
        let rows: Vec<DataRow> = (0..10)
            .map(|i| row(&format!("d{i}"), Label::Human, vec![3.0]))
            .collect();
        let (kept, removed) = filter_outliers(&rows, 1.5).unwrap();
        assert_eq!(kept.len(), 10);
        assert!(removed.is_empty());
    }

    #[test]
    fn split_is_stratified_and_deterministic() {
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.push(row(&format!("h{i}"), Label::Human, vec![i as f64]));
        }
        for i in 0..4 {
            rows.push(row(&format!("m{i}"), Label::Machine, vec![i as f64]));
        }
        let (train, test) = split_stratified(&rows, 0.8, 7).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        let train_machines = train
            .iter()
            .filter(|r| r.label == Label::Machine)
            .count();
        assert_eq!(train_machines, 3);
        let (train2, test2) = split_stratified(&rows, 0.8, 7).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        let mut ids: Vec<&str> = train
            .iter()
            .chain(&test)
            .map(|r| r.doc_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn split_rejects_degenerate_fractions() {
        let rows = separable(4);
        assert!(split_stratified(&rows, 0.0, 0).is_err());
        assert!(split_stratified(&rows, 1.0, 0).is_err());
    }

    #[test]
    fn normalization_drops_flat_features() {
        let rows = vec![
            row("a", Label::Human, vec![1.0, 5.0, 2.0]),
            row("b", Label::Machine, vec![3.0, 5.0, 4.0]),
        ];
        let norm = Normalization::fit(&rows).unwrap();
        assert_eq!(norm.kept, vec![0, 2]);
        assert_eq!(norm.mean, vec![2.0, 3.0]);
        let s = 2f64.sqrt();
        assert!((norm.sd[0] - s).abs() < 1e-12);
        let z = norm.apply(&[1.0, 5.0, 2.0]).unwrap();
        assert!((z[0] + 1.0 / s).abs() < 1e-12);
        assert!((z[1] + 1.0 / s).abs() < 1e-12);
    }

    #[test]
    fn normalization_needs_some_spread() {
        let rows = vec![
            row("a", Label::Human, vec![1.0, 1.0]),
            row("b", Label::Machine, vec![1.0, 1.0]),
        ];
        assert!(Normalization::fit(&rows).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![
            vec![0.5, -1.2, 0.3],
            vec![-0.7, 0.4, 1.1],
            vec![1.5, 0.2, -0.8],
            vec![-0.1, -0.5, 0.9],
        ];
        let y = vec![1.0, 0.0, 1.0, 0.0];
        let w = vec![0.3, -0.2, 0.5];
        let b = 0.1;
        let l2 = 0.01;
        let (_, grad_w, grad_b) = loss_and_gradient(&x, &y, &w, b, l2);
        let h = 1e-6;
        for j in 0..w.len() {
            let mut plus = w.clone();
            plus[j] += h;
            let mut minus = w.clone();
            minus[j] -= h;
            let (lp, _, _) = loss_and_gradient(&x, &y, &plus, b, l2);
            let (lm, _, _) = loss_and_gradient(&x, &y, &minus, b, l2);
            let fd = (lp - lm) / (2.0 * h);
            assert!((grad_w[j] - fd).abs() < 1e-6, "coordinate {j}");
        }
        let (lp, _, _) = loss_and_gradient(&x, &y, &w, b + h, l2);
        let (lm, _, _) = loss_and_gradient(&x, &y, &w, b - h, l2);
        assert!((grad_b - (lp - lm) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn training_separates_separable_data() {
        let rows = separable(20);
        let model = train(&rows, &TrainConfig::default(), 0).unwrap();
        let metrics = evaluate(&model, &rows).unwrap();
        assert_eq!(metrics.f1, 1.0);
        assert_eq!(metrics.accuracy, 1.0);
        assert!(model.weights[0] > 0.0);
    }

    #[test]
    fn training_is_deterministic() {
        let rows = separable(10);
        let a = train(&rows, &TrainConfig::default(), 3).unwrap();
        let b = train(&rows, &TrainConfig::default(), 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn an_oversized_learning_rate_is_reported_as_divergence() {
        let rows = vec![
            row("a", Label::Machine, vec![1.0, 0.5]),
            row("b", Label::Human, vec![2.0, 0.4]),
            row("c", Label::Machine, vec![1.1, 0.6]),
            row("d", Label::Human, vec![1.9, 0.5]),
        ];
        let config = TrainConfig {
            learning_rate: 1000.0,
            ..TrainConfig::default()
        };
        match train(&rows, &config, 0) {
            Err(Error::Diverged {
                epoch,
                previous,
                current,
            }) => {
                assert!(epoch >= 1);
                assert!(current > previous);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stronger_regularization_shrinks_the_weights() {
        let rows = separable(20);
        let loose = train(
            &rows,
            &TrainConfig {
                l2: 0.0,
                ..TrainConfig::default()
            },
            0,
        )
        .unwrap();
        let tight = train(
            &rows,
            &TrainConfig {
                l2: 10.0,
                ..TrainConfig::default()
            },
            0,
        )
        .unwrap();
        assert!(tight.weights[0].abs() < loose.weights[0].abs());
    }

    #[test]
    fn training_requires_both_classes() {
        let rows = vec![
            row("a", Label::Human, vec![1.0]),
            row("b", Label::Human, vec![2.0]),
        ];
        assert!(matches!(
            train(&rows, &TrainConfig::default(), 0),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn evaluation_handles_all_negative_predictions() {
        let rows = separable(10);
        let mut model = train(&rows, &TrainConfig::default(), 0).unwrap();
        // Force every probability to zero.
        model.bias = -1e6;
        for w in &mut model.weights {
            *w = 0.0;
        }
        let metrics = evaluate(&model, &rows).unwrap();
        assert_eq!(metrics.precision, 0.0);
        assert_eq!(metrics.recall, 0.0);
        assert_eq!(metrics.f1, 0.0);
        assert_eq!(metrics.true_positives, 0);
        assert_eq!(metrics.false_negatives, 10);
    }

    #[test]
    fn models_round_trip_through_json() {
        let rows = separable(8);
        let model = train(&rows, &TrainConfig::default(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = ClassifierModel::load(&path).unwrap();
        assert_eq!(loaded, model);
        for r in &rows {
            assert!(
                (model.predict_proba(&r.features).unwrap()
                    - loaded.predict_proba(&r.features).unwrap())
                .abs()
                    < 1e-15
            );
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let rows = vec![
            row("a", Label::Human, vec![1.0, 2.0]),
            row("b", Label::Machine, vec![1.0]),
        ];
        assert!(filter_outliers(&rows, 1.5).is_err());
        assert!(split_stratified(&rows, 0.8, 0).is_err());
        assert!(train(&rows, &TrainConfig::default(), 0).is_err());
    }
}
