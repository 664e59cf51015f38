use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    check_dim, common_dim, train_forest, BinaryInstance, DecisionForestModel, ForestParams, MultiLabelInstance,
};
use crate::error::{Error, Result};

/// One forest per label, trained independently on the decomposed problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryRelevanceModel {
    pub label_order: Vec<String>,
    pub per_label: Vec<DecisionForestModel>,
}

impl BinaryRelevanceModel {
    pub fn feature_dim(&self) -> usize {
        self.per_label.first().map_or(0, |m| m.feature_dim)
    }

    /// Confidence per label in `label_order`.
    pub fn confidences(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.feature_dim(), x)?;
        self.per_label.iter().map(|m| m.predict_confidence(x)).collect()
    }

    pub fn predict_label_confidences(&self, x: &[f64]) -> Result<BTreeMap<String, f64>> {
        Ok(self.label_order.iter().cloned().zip(self.confidences(x)?).collect())
    }

    /// Labels whose confidence is at least 0.5.
    pub fn predict_labels(&self, x: &[f64]) -> Result<BTreeSet<String>> {
        Ok(self
            .label_order
            .iter()
            .zip(self.confidences(x)?)
            .filter(|(_, c)| *c >= 0.5)
            .map(|(l, _)| l.clone())
            .collect())
    }
}

/// Decomposes the label sets into one binary problem per system; instances
/// with an empty label set are negatives for every forest. All forests share
/// `params`, including the seed.
pub fn train_binary_relevance(
    data: &[MultiLabelInstance],
    systems: &[String],
    params: &ForestParams,
) -> Result<BinaryRelevanceModel> {
    if systems.is_empty() {
        return Err(Error::invalid("binary relevance needs at least one label"));
    }
    common_dim(data.iter().map(|d| &d.x))?;
    let per_label = systems
        .par_iter()
        .map(|sys| {
            let binary: Vec<BinaryInstance> = data
                .iter()
                .map(|d| BinaryInstance {
                    x: d.x.clone(),
                    y: d.labels.contains(sys),
                })
                .collect();
            train_forest(&binary, params)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BinaryRelevanceModel {
        label_order: systems.to_vec(),
        per_label,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn data() -> Vec<MultiLabelInstance> {
        (0..30)
            .map(|i| {
                let mut labels = BTreeSet::from(["A".to_string()]);
                if i % 2 == 0 {
                    labels.insert("B".into());
                }
                MultiLabelInstance {
                    x: vec![(i % 2) as f64, i as f64],
                    labels,
                }
            })
            .collect()
    }

    #[test]
    fn one_forest_per_label() {
        let m = train_binary_relevance(&data(), &ids(&["A", "B", "C"]), &ForestParams::default()).unwrap();
        assert_eq!(m.per_label.len(), 3);
        let conf = m.predict_label_confidences(&[0.0, 4.0]).unwrap();
        assert_eq!(conf.keys().cloned().collect::<Vec<_>>(), ids(&["A", "B", "C"]));
        // A is always on, C never
        assert_eq!(conf["A"], 1.0);
        assert_eq!(conf["C"], 0.0);
        assert!(conf["B"] >= 0.5);
        assert_eq!(conf, m.predict_label_confidences(&[0.0, 4.0]).unwrap());
    }

    #[test]
    fn empty_label_list_is_an_error() {
        assert!(train_binary_relevance(&data(), &[], &ForestParams::default()).is_err());
    }

    #[test]
    fn matches_standalone_forests() {
        let params = ForestParams {
            n_trees: 15,
            seed: 11,
            ..Default::default()
        };
        let m = train_binary_relevance(&data(), &ids(&["A", "B"]), &params).unwrap();
        let b: Vec<BinaryInstance> = data()
            .into_iter()
            .map(|d| BinaryInstance {
                y: d.labels.contains("B"),
                x: d.x,
            })
            .collect();
        let standalone = train_forest(&b, &params).unwrap();
        assert_eq!(m.per_label[1], standalone);
    }

    #[test]
    fn dimension_mismatch() {
        let m = train_binary_relevance(&data(), &ids(&["A"]), &ForestParams::default()).unwrap();
        assert!(m.predict_label_confidences(&[1.0]).is_err());
    }
}
