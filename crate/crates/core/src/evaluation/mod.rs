//! Linking scores, multi-label and binary classifier diagnostics, paired
//! significance testing, and the feature-ablation runner.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentMode, MentionGroup};
use crate::corpus::{EntityAnnotation, GroundTruth, MentionKey};
use crate::error::{Error, Result};

mod ablation;
mod significance;

pub use ablation::{ablation_run, render_ablation_table, standard_ablation_masks, AblationRow, SplitData};
pub use significance::{paired_t_statistic, paired_t_test, split_ground_truth, SignificanceResult, TTestOutcome};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub correct: usize,
    pub recognised: usize,
    pub gt_total: usize,
}

impl PrfScore {
    /// Precision is 0 when nothing was recognised; recall is 0 when there is
    /// no ground truth.
    pub fn from_counts(correct: usize, recognised: usize, gt_total: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(correct, recognised);
        let recall = ratio(correct, gt_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            correct,
            recognised,
            gt_total,
        }
    }
}

/// Matches output annotations to gold one-to-one; returns for each output
/// annotation the index of its aligned gold annotation (if any) and whether
/// the entity agrees.
pub(crate) fn align_to_gold(
    output: &[EntityAnnotation],
    gt: &GroundTruth,
    mode: AlignmentMode,
) -> Vec<Option<(usize, bool)>> {
    match mode {
        AlignmentMode::Strong => {
            let by_key: HashMap<MentionKey, usize> = gt
                .annotations
                .iter()
                .enumerate()
                .map(|(i, a)| (a.mention.key(), i))
                .collect();
            let mut used = HashSet::new();
            output
                .iter()
                .map(|a| {
                    let &g = by_key.get(&a.mention.key())?;
                    if !used.insert(g) {
                        return None;
                    }
                    Some((g, gt.annotations[g].entity == a.entity))
                })
                .collect()
        }
        AlignmentMode::Overlap => {
            let mut by_doc: HashMap<&str, Vec<usize>> = HashMap::new();
            for (i, a) in gt.annotations.iter().enumerate() {
                by_doc.entry(a.mention.doc_id.as_str()).or_default().push(i);
            }
            let mut order: Vec<usize> = (0..output.len()).collect();
            order.sort_by(|&a, &b| {
                let (ma, mb) = (&output[a].mention, &output[b].mention);
                (&ma.doc_id, ma.position, ma.end()).cmp(&(&mb.doc_id, mb.position, mb.end()))
            });
            let mut used = HashSet::new();
            let mut result = vec![None; output.len()];
            for o in order {
                let a = &output[o];
                let Some(cands) = by_doc.get(a.mention.doc_id.as_str()) else {
                    continue;
                };
                let overlapping: Vec<usize> = cands
                    .iter()
                    .copied()
                    .filter(|g| !used.contains(g) && gt.annotations[*g].mention.overlaps(&a.mention))
                    .collect();
                // prefer a gold with the same entity, then the earliest span
                let pick = overlapping
                    .iter()
                    .copied()
                    .find(|&g| gt.annotations[g].entity == a.entity)
                    .or_else(|| overlapping.first().copied());
                if let Some(g) = pick {
                    used.insert(g);
                    result[o] = Some((g, gt.annotations[g].entity == a.entity));
                }
            }
            result
        }
    }
}

/// Precision, recall and F1 of an annotation set against ground truth.
pub fn el_prf(output: &[EntityAnnotation], gt: &GroundTruth, mode: AlignmentMode) -> PrfScore {
    let correct = align_to_gold(output, gt, mode)
        .into_iter()
        .filter(|m| matches!(m, Some((_, true))))
        .count();
    PrfScore::from_counts(correct, output.len(), gt.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelReport {
    pub instances: usize,
    pub jaccard: f64,
    pub hamming_loss: f64,
    pub exact_match: f64,
    pub per_class: BTreeMap<String, PrfScore>,
    /// Among instances where a system was chosen, the fraction whose chosen
    /// system supplied the gold entity.
    pub real_prediction_accuracy: f64,
    pub predictions: usize,
}

/// Multi-label diagnostics. `chosen` and `groups` may both be empty, in
/// which case real prediction accuracy is reported as 0 over 0 predictions.
pub fn multilabel_metrics(
    predicted: &[BTreeSet<String>],
    truth: &[BTreeSet<String>],
    labels: &[String],
    chosen: &[Option<String>],
    groups: &[MentionGroup],
) -> Result<MultiLabelReport> {
    if predicted.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predicted label sets but {} true label sets",
            predicted.len(),
            truth.len()
        )));
    }
    if chosen.len() != groups.len() {
        return Err(Error::invalid(format!(
            "{} chosen systems but {} groups",
            chosen.len(),
            groups.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::invalid("label list is empty"));
    }
    let known: BTreeSet<&String> = labels.iter().collect();
    for l in predicted.iter().chain(truth).flatten() {
        if !known.contains(l) {
            return Err(Error::invalid(format!("label {l:?} is not in the label list")));
        }
    }

    let n = predicted.len();
    let n_labels = labels.len() as f64;
    let mut jaccard = 0.0;
    let mut hamming = 0.0;
    let mut exact = 0usize;
    for (p, t) in predicted.iter().zip(truth) {
        let inter = p.intersection(t).count();
        let union = p.union(t).count();
        jaccard += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        hamming += p.symmetric_difference(t).count() as f64 / n_labels;
        if p == t {
            exact += 1;
        }
    }
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };

    let per_class = labels
        .iter()
        .map(|l| {
            let tp = predicted
                .iter()
                .zip(truth)
                .filter(|(p, t)| p.contains(l) && t.contains(l))
                .count();
            let pred = predicted.iter().filter(|p| p.contains(l)).count();
            let actual = truth.iter().filter(|t| t.contains(l)).count();
            (l.clone(), PrfScore::from_counts(tp, pred, actual))
        })
        .collect();

    let mut predictions = 0usize;
    let mut right = 0usize;
    for (c, g) in chosen.iter().zip(groups) {
        let Some(sys) = c else { continue };
        predictions += 1;
        if g.is_correct(sys) == Some(true) {
            right += 1;
        }
    }

    Ok(MultiLabelReport {
        instances: n,
        jaccard: mean(jaccard),
        hamming_loss: mean(hamming),
        exact_match: if n == 0 { 0.0 } else { exact as f64 / n as f64 },
        per_class,
        real_prediction_accuracy: if predictions == 0 {
            0.0
        } else {
            right as f64 / predictions as f64
        },
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryReport {
    pub true_class: PrfScore,
    pub false_class: PrfScore,
    pub macro_f1: f64,
}

/// Per-class scores for the `true` and `false` classes. A class absent from
/// the truth contributes F1 = 0 to the macro mean if it was ever predicted
/// and is left out of the mean otherwise.
pub fn binary_metrics(predictions: &[bool], truth: &[bool]) -> Result<BinaryReport> {
    if predictions.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} truth values",
            predictions.len(),
            truth.len()
        )));
    }
    let class = |c: bool| {
        let tp = predictions
            .iter()
            .zip(truth)
            .filter(|(p, t)| **p == c && **t == c)
            .count();
        let pred = predictions.iter().filter(|p| **p == c).count();
        let actual = truth.iter().filter(|t| **t == c).count();
        PrfScore::from_counts(tp, pred, actual)
    };
    let true_class = class(true);
    let false_class = class(false);
    let counted: Vec<f64> = [true_class, false_class]
        .iter()
        .filter(|s| s.gt_total > 0 || s.recognised > 0)
        .map(|s| s.f1)
        .collect();
    let macro_f1 = if counted.is_empty() {
        0.0
    } else {
        counted.iter().sum::<f64>() / counted.len() as f64
    };
    Ok(BinaryReport {
        true_class,
        false_class,
        macro_f1,
    })
}

/// Aligned plain-text table of P/R/F1 rows, values in percent.
pub fn render_prf_table(title: &str, rows: &[(String, PrfScore)]) -> String {
    let width = rows
        .iter()
        .map(|(l, _)| l.chars().count())
        .chain(std::iter::once(title.chars().count()))
        .max()
        .unwrap_or(0);
    let mut out = format!("{title:<width$}  {:>7}  {:>7}  {:>7}\n", "P (%)", "R (%)", "F1 (%)");
    for (label, s) in rows {
        out.push_str(&format!(
            "{label:<width$}  {:>7.1}  {:>7.1}  {:>7.1}\n",
            100.0 * s.precision,
            100.0 * s.recall,
            100.0 * s.f1
        ));
    }
    out
}

pub fn prf_csv(rows: &[(String, PrfScore)]) -> String {
    let mut out = String::from("method,precision,recall,f1,correct,recognised,gt_total\n");
    for (label, s) in rows {
        let label = if label.contains(',') || label.contains('"') {
            format!("\"{}\"", label.replace('"', "\"\""))
        } else {
            label.clone()
        };
        out.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            s.precision, s.recall, s.f1, s.correct, s.recognised, s.gt_total
        ));
    }
    out
}
