use serde::{Deserialize, Serialize};

use super::{el_prf, PrfScore};
use crate::alignment::MentionGroup;
use crate::corpus::{Corpus, GroundTruth};
use crate::error::{Error, Result};
use crate::features::{CandidateDictionary, Feature, FeatureCategory, FeatureMask};
use crate::metael::{annotate_loose, train_metael, MetaElConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mask: FeatureMask,
    pub score: PrfScore,
}

/// One data split as consumed by the ablation runner.
#[derive(Debug, Clone, Copy)]
pub struct SplitData<'a> {
    pub corpus: &'a Corpus,
    pub groups: &'a [MentionGroup],
}

fn capitalise(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// The 17 feature sets of the ablation table: all features, each category
/// alone, each pair of categories, and every leave-one-out set.
pub fn standard_ablation_masks() -> Vec<(String, FeatureMask)> {
    let cats = FeatureCategory::ALL;
    let mut rows = vec![("All features".to_string(), FeatureMask::all())];
    for c in cats {
        rows.push((
            format!("Only {}", c.label()),
            FeatureMask::categories(&[c]).expect("non-empty category"),
        ));
    }
    for (i, a) in cats.iter().enumerate() {
        for b in &cats[i + 1..] {
            rows.push((
                format!("{} + {}", capitalise(a.label()), b.label()),
                FeatureMask::categories(&[*a, *b]).expect("non-empty categories"),
            ));
        }
    }
    for f in Feature::ALL {
        rows.push((
            format!("All features except {}", f.name()),
            FeatureMask::without(f).expect("nine features remain"),
        ));
    }
    rows
}

/// Retrains the LOOSE ensemble once per mask, with every other setting
/// (including the forest seed) taken from `config`, and scores each run on
/// the test ground truth.
#[allow(clippy::too_many_arguments)]
pub fn ablation_run(
    train: SplitData<'_>,
    test: SplitData<'_>,
    test_gt: &GroundTruth,
    systems: &[String],
    cand: &CandidateDictionary,
    masks: &[(String, FeatureMask)],
    config: &MetaElConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(masks.len());
    for (label, mask) in masks {
        if mask.is_empty() {
            return Err(Error::invalid(format!("ablation row {label:?} selects no features")));
        }
        let cfg = MetaElConfig {
            features: mask.clone(),
            ..config.clone()
        };
        let model = train_metael(train.corpus, train.groups, systems, cand, &cfg)?;
        let out = annotate_loose(&model, test.corpus, test.groups, cand)?;
        rows.push(AblationRow {
            label: label.clone(),
            mask: mask.clone(),
            score: el_prf(&out.annotations, test_gt, config.alignment),
        });
    }
    Ok(rows)
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let named: Vec<(String, PrfScore)> = rows.iter().map(|r| (r.label.clone(), r.score)).collect();
    super::render_prf_table("Feature combination", &named)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_rows() {
        let rows = standard_ablation_masks();
        assert_eq!(rows.len(), 17);
        assert!(rows[0].1.is_all());
        assert_eq!(rows[1].0, "Only surface form-based");
        assert_eq!(rows[4].0, "Surface form-based + mention-based");
        assert_eq!(rows[16].0, "All features except d_ents");
        // s_corr removes the whole per-system family
        assert_eq!(rows[11].1.dim(3), FeatureMask::all().dim(3) - 3);
        let labels: std::collections::BTreeSet<_> = rows.iter().map(|r| r.0.clone()).collect();
        assert_eq!(labels.len(), 17);
    }
}
