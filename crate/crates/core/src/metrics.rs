//! Classification and regression metrics shared by the scenarios.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::table::{num, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Metrics for hard predictions. Precision with no positive predictions is 0.
pub fn classification_metrics(predicted: &[bool], labels: &[bool]) -> Result<BinaryMetrics> {
    if predicted.len() != labels.len() {
        return Err(invalid(format!(
            "{} predictions for {} labels",
            predicted.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predicted.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(BinaryMetrics {
        precision,
        recall,
        f1: f1_score(precision, recall),
        accuracy: ratio(tp + tn, labels.len()),
        tp,
        fp,
        tn,
        fn_,
    })
}

/// Scores at or above `threshold` are predicted positive.
pub fn binary_metrics(scores: &[f64], labels: &[bool], threshold: f64) -> Result<BinaryMetrics> {
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    classification_metrics(&predicted, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    /// One point per distinct score, thresholds ascending.
    pub points: Vec<PrPoint>,
    pub auc: f64,
    pub best: PrPoint,
}

impl PrCurve {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&["threshold", "precision", "recall", "f1"]);
        for p in &self.points {
            t.push(vec![
                num(p.threshold),
                num(p.precision),
                num(p.recall),
                num(p.f1),
            ]);
        }
        t
    }
}

/// Precision-recall curve over every distinct score.
///
/// The area integrates precision over recall with the trapezoid rule, walking
/// from the highest threshold down, and anchors recall 0 at the precision of
/// the highest threshold. The best-F1 point prefers the lower threshold on
/// ties.
pub fn pr_curve_auc(scores: &[f64], labels: &[bool]) -> Result<PrCurve> {
    if scores.len() != labels.len() {
        return Err(invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("non-finite score"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(invalid(
            "precision-recall curve needs at least one positive label",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Sweep from the highest score down; each distinct score closes a point.
    let mut desc = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / positives as f64;
        desc.push(PrPoint {
            threshold: s,
            precision,
            recall,
            f1: f1_score(precision, recall),
        });
    }

    let mut auc = 0.0;
    let (mut r0, mut p0) = (0.0, desc[0].precision);
    for p in &desc {
        auc += (p.recall - r0) * (p.precision + p0) / 2.0;
        r0 = p.recall;
        p0 = p.precision;
    }

    desc.reverse();
    let mut best = desc[0];
    for p in &desc[1..] {
        if p.f1 > best.f1 {
            best = *p;
        }
    }
    Ok(PrCurve {
        points: desc,
        auc,
        best,
    })
}

pub fn mae(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(invalid(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Headline numbers for one scenario run, serialized into `metrics.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pr_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    pub extras: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn new(scenario: &str) -> Self {
        Self {
            scenario: scenario.to_string(),
            ..Default::default()
        }
    }

    pub fn with_binary(mut self, m: &BinaryMetrics) -> Self {
        self.precision = Some(m.precision);
        self.recall = Some(m.recall);
        self.f1 = Some(m.f1);
        self.accuracy = Some(m.accuracy);
        self
    }

    pub fn extra(mut self, key: &str, value: f64) -> Self {
        self.extras.insert(key.to_string(), value);
        self
    }
}
