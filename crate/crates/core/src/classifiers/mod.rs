//! Learned baselines: a CART tree over object features and a small
//! feed-forward network over pixel spectra.

mod cart;
mod mlp;

pub use cart::{cart_predict, cart_train, CartTree, Node};
pub use mlp::{
    gradient_check_with, loss_and_gradient, mlp_gradient_check, mlp_predict, mlp_train, EpochStats, Mlp, MlpConfig,
};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Labelled feature vectors sharing one schema.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub schema: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl SampleSet {
    pub fn new(schema: Vec<String>) -> Self {
        SampleSet {
            schema,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, features: Vec<f64>, label: impl Into<String>) -> Result<()> {
        if features.len() != self.schema.len() {
            return Err(Error::Arity {
                expected: self.schema.len(),
                actual: features.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample features must be finite"));
        }
        self.features.push(features);
        self.labels.push(label.into());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Distinct labels in sorted order.
    pub fn classes(&self) -> Vec<String> {
        self.labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub(crate) fn check_non_empty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySample("sample set has no rows".into()));
        }
        Ok(())
    }
}
