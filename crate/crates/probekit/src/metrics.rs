//! Evaluation: top-1 accuracy for single-label tasks, macro-averaged mean
//! average precision for multi-label tasks.
//!
//! AP is the mean of precision-at-k over the positive ranks of the full
//! score-descending ranking, no interpolation, ties broken toward the lower
//! sample index. Classes with zero positives are excluded from the macro
//! mean and listed in the report.

use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Labels, TaskKind};
use crate::error::{Error, Result};
use crate::model::{ProbeModel, Strategy};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskKind,
    pub metric: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class_ap: Option<Vec<Option<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_classes: Option<Vec<usize>>,
    pub num_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer_weights: Option<Vec<f64>>,
}

/// Fraction of samples whose argmax logit equals the label. Ties break
/// toward the lowest class index.
pub fn top1_accuracy(logits: &[Tensor], labels: &[u32]) -> Result<f64> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "top1_accuracy",
            detail: format!("{} logit rows, {} labels", logits.len(), labels.len()),
        });
    }
    let mut hits = 0usize;
    for (row, &label) in logits.iter().zip(labels) {
        if label as usize >= row.numel() {
            return Err(Error::OutOfRange {
                op: "top1_accuracy",
                detail: format!("label {label} >= {} classes", row.numel()),
            });
        }
        let mut best = 0usize;
        for (j, &v) in row.data().iter().enumerate() {
            if v > row.data()[best] {
                best = j;
            }
        }
        if best == label as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / logits.len() as f64)
}

/// Average precision of one class's sample ranking. Requires at least one
/// positive; callers exclude empty classes.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::ShapeMismatch {
            op: "average_precision",
            detail: format!("{} scores, {} flags", scores.len(), positives.len()),
        });
    }
    let num_pos = positives.iter().filter(|&&p| p).count();
    if num_pos == 0 {
        return Err(Error::EmptyInput("average_precision: no positives"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Descending by score; ties keep the lower sample index first.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("non-finite score")
            .then(a.cmp(&b))
    });
    let mut seen_pos = 0usize;
    let mut acc = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            seen_pos += 1;
            acc += seen_pos as f64 / (rank + 1) as f64;
        }
    }
    Ok(acc / num_pos as f64)
}

/// Macro mAP over classes with at least one positive. Returns the report
/// with per-class APs (None for excluded classes).
pub fn macro_map(scores: &[Tensor], targets: &[Vec<u8>]) -> Result<EvalReport> {
    let n = scores.len();
    if n == 0 || targets.len() != n {
        return Err(Error::ShapeMismatch {
            op: "macro_map",
            detail: format!("{n} score rows, {} target rows", targets.len()),
        });
    }
    let c = scores[0].numel();
    if scores.iter().any(|s| s.numel() != c) || targets.iter().any(|t| t.len() != c) {
        return Err(Error::ShapeMismatch {
            op: "macro_map",
            detail: "ragged score or target rows".into(),
        });
    }
    let mut per_class = Vec::with_capacity(c);
    let mut excluded = Vec::new();
    let mut acc = 0.0;
    let mut counted = 0usize;
    for j in 0..c {
        let col_scores: Vec<f64> = scores.iter().map(|s| s.data()[j]).collect();
        let col_pos: Vec<bool> = targets.iter().map(|t| t[j] == 1).collect();
        if col_pos.iter().any(|&p| p) {
            let ap = average_precision(&col_scores, &col_pos)?;
            acc += ap;
            counted += 1;
            per_class.push(Some(ap));
        } else {
            per_class.push(None);
            excluded.push(j);
        }
    }
    if counted == 0 {
        return Err(Error::EmptyInput("macro_map: no class has positives"));
    }
    Ok(EvalReport {
        task: TaskKind::MultiLabel,
        metric: "macro_map".into(),
        value: acc / counted as f64,
        per_class_ap: Some(per_class),
        excluded_classes: Some(excluded),
        num_samples: n,
        layer_weights: None,
    })
}

/// Eval-mode forward over the whole bank (no dropout, no rng), dispatched
/// to top-1 accuracy or macro mAP by task. Attaches softmax layer weights
/// for all-strategy models.
pub fn evaluate(bank: &EmbeddingBank, model: &ProbeModel) -> Result<EvalReport> {
    let manifest = bank.manifest();
    if manifest.num_classes != model.num_classes {
        return Err(Error::Incompatible(format!(
            "bank has {} classes, model has {}",
            manifest.num_classes, model.num_classes
        )));
    }
    let mut logits = Vec::with_capacity(bank.num_samples());
    for i in 0..bank.num_samples() {
        let layers = bank.get_sample(i)?;
        let (row, _) = model.forward(&layers, false, None)?;
        logits.push(row);
    }
    let mut report = match bank.labels() {
        Labels::Single(labels) => EvalReport {
            task: TaskKind::SingleLabel,
            metric: "top1_acc".into(),
            value: top1_accuracy(&logits, labels)?,
            per_class_ap: None,
            excluded_classes: None,
            num_samples: bank.num_samples(),
            layer_weights: None,
        },
        Labels::Multi(rows) => macro_map(&logits, rows)?,
    };
    if model.strategy == Strategy::All {
        report.layer_weights = model.alpha().map(|a| a.data().to_vec());
    }
    Ok(report)
}
