use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{align_to_gold, el_prf};
use crate::alignment::AlignmentMode;
use crate::corpus::{EntityAnnotation, GroundTruth};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestOutcome {
    pub t_statistic: f64,
    pub p_value: f64,
    /// The differences have zero variance.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on per-split scores.
///
/// With zero variance of the differences the result is degenerate: p = 1
/// when every difference is 0, otherwise p = 0 and t = ±∞.
pub fn paired_t_statistic(a: &[f64], b: &[f64]) -> Result<TTestOutcome> {
    if a.len() != b.len() {
        return Err(Error::invalid("paired samples differ in length"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("paired t-test needs at least two pairs"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if mean == 0.0 {
            TTestOutcome {
                t_statistic: 0.0,
                p_value: 1.0,
                degenerate: true,
            }
        } else {
            TTestOutcome {
                t_statistic: mean.signum() * f64::INFINITY,
                p_value: 0.0,
                degenerate: true,
            }
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTestOutcome {
        t_statistic: t,
        p_value: p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub split_scores_a: Vec<f64>,
    pub split_scores_b: Vec<f64>,
    pub t_statistic: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub degenerate: bool,
    pub significant: bool,
}

/// Assigns every ground-truth annotation to one of `n_splits` splits of
/// near-equal size (the first `len % n_splits` splits get one extra).
/// Annotations are ordered by `(doc, position)`, or shuffled when a seed is
/// given, and cut into contiguous runs.
pub fn split_ground_truth(gt: &GroundTruth, n_splits: usize, shuffle_seed: Option<u64>) -> Result<Vec<usize>> {
    let m = gt.len();
    if n_splits == 0 {
        return Err(Error::invalid("number of splits must be positive"));
    }
    if m < n_splits {
        return Err(Error::invalid(format!(
            "{m} ground-truth annotations cannot fill {n_splits} splits"
        )));
    }
    let mut order = sorted_gt(gt);
    if let Some(s) = shuffle_seed {
        order.shuffle(&mut seed::rng(s));
    }
    let (base, rem) = (m / n_splits, m % n_splits);
    let mut split_of = vec![0usize; m];
    let mut at = 0;
    for k in 0..n_splits {
        let size = base + usize::from(k < rem);
        for &g in &order[at..at + size] {
            split_of[g] = k;
        }
        at += size;
    }
    Ok(split_of)
}

fn sorted_gt(gt: &GroundTruth) -> Vec<usize> {
    let mut order: Vec<usize> = (0..gt.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&gt.annotations[a].mention, &gt.annotations[b].mention);
        (&ma.doc_id, ma.position, &ma.surface).cmp(&(&mb.doc_id, mb.position, &mb.surface))
    });
    order
}

/// Split of each output annotation: that of its aligned gold annotation, or
/// else that of the nearest preceding gold annotation in document order.
fn assign_output(output: &[EntityAnnotation], gt: &GroundTruth, mode: AlignmentMode, split_of: &[usize]) -> Vec<usize> {
    let sorted = sorted_gt(gt);
    let keys: Vec<(&str, usize)> = sorted
        .iter()
        .map(|&g| {
            let m = &gt.annotations[g].mention;
            (m.doc_id.as_str(), m.position)
        })
        .collect();
    align_to_gold(output, gt, mode)
        .into_iter()
        .zip(output)
        .map(|(aligned, a)| match aligned {
            Some((g, _)) => split_of[g],
            None => {
                let key = (a.mention.doc_id.as_str(), a.mention.position);
                let k = keys.partition_point(|k| *k <= key);
                split_of[sorted[k.saturating_sub(1)]]
            }
        })
        .collect()
}

fn per_split_f1(
    output: &[EntityAnnotation],
    gt: &GroundTruth,
    mode: AlignmentMode,
    split_of: &[usize],
    n_splits: usize,
) -> Vec<f64> {
    let out_split = assign_output(output, gt, mode, split_of);
    (0..n_splits)
        .map(|k| {
            let part_gt = GroundTruth {
                annotations: gt
                    .annotations
                    .iter()
                    .zip(split_of)
                    .filter(|(_, s)| **s == k)
                    .map(|(a, _)| a.clone())
                    .collect(),
            };
            let part_out: Vec<EntityAnnotation> = output
                .iter()
                .zip(&out_split)
                .filter(|(_, s)| **s == k)
                .map(|(a, _)| a.clone())
                .collect();
            el_prf(&part_out, &part_gt, mode).f1
        })
        .collect()
}

/// Compares two annotation sets on `n_splits` disjoint ground-truth splits
/// of equal size with a two-tailed paired t-test over per-split F1.
pub fn paired_t_test(
    output_a: &[EntityAnnotation],
    output_b: &[EntityAnnotation],
    gt: &GroundTruth,
    mode: AlignmentMode,
    n_splits: usize,
    alpha: f64,
    shuffle_seed: Option<u64>,
) -> Result<SignificanceResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let split_of = split_ground_truth(gt, n_splits, shuffle_seed)?;
    let a = per_split_f1(output_a, gt, mode, &split_of, n_splits);
    let b = per_split_f1(output_b, gt, mode, &split_of, n_splits);
    let outcome = paired_t_statistic(&a, &b)?;
    Ok(SignificanceResult {
        split_scores_a: a,
        split_scores_b: b,
        t_statistic: outcome.t_statistic,
        p_value: outcome.p_value,
        alpha,
        degenerate: outcome.degenerate,
        significant: outcome.p_value < alpha,
    })
}
