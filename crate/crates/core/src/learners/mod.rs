//! Supervised learners used by the ensemble: a random decision forest, a
//! linear max-margin classifier trained with SMO, and a binary-relevance
//! multi-label wrapper over forests.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod binary_relevance;
mod forest;
mod margin;

pub use binary_relevance::{train_binary_relevance, BinaryRelevanceModel};
pub use forest::{train_forest, DecisionForestModel, DecisionTree, ForestParams, Node};
pub use margin::{train_margin, MarginModel, MarginParams, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryInstance {
    pub x: Vec<f64>,
    pub y: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLabelInstance {
    pub x: Vec<f64>,
    pub labels: BTreeSet<String>,
}

pub(crate) fn common_dim<'a>(xs: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<usize> {
    let mut it = xs.into_iter();
    let first = it.next().ok_or_else(|| Error::invalid("training data is empty"))?.len();
    for x in it {
        if x.len() != first {
            return Err(Error::Dimension {
                expected: first,
                actual: x.len(),
            });
        }
    }
    Ok(first)
}

pub(crate) fn check_dim(expected: usize, x: &[f64]) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Dimension {
            expected,
            actual: x.len(),
        });
    }
    Ok(())
}
