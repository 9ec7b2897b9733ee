//! Layer layout: maps flat parameter-index ranges to named layers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Fc,
}

/// One named layer occupying the half-open index range `[start, end)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerInfo {
    pub name: String,
    pub start: usize,
    pub end: usize,
    pub kind: LayerKind,
    pub is_classifier: bool,
}

/// Ordered, contiguous, non-overlapping layer ranges covering the whole
/// parameter vector. Exactly one layer is the classifier and it is last.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    layers: Vec<LayerInfo>,
    total: usize,
}

impl LayerLayout {
    pub fn new(layers: Vec<LayerInfo>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidSpec("layout has no layers".into()));
        }
        let mut cursor = 0usize;
        for layer in &layers {
            if layer.start != cursor || layer.end <= layer.start {
                return Err(Error::InvalidSpec(format!(
                    "layer `{}` range [{}, {}) is not contiguous/ascending",
                    layer.name, layer.start, layer.end
                )));
            }
            cursor = layer.end;
        }
        let classifiers: Vec<&LayerInfo> = layers.iter().filter(|l| l.is_classifier).collect();
        if classifiers.len() != 1 || !layers.last().unwrap().is_classifier {
            return Err(Error::InvalidSpec(
                "exactly one classifier layer is required and it must be last".into(),
            ));
        }
        Ok(Self { total: cursor, layers })
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    pub fn total_params(&self) -> usize {
        self.total
    }

    pub fn find(&self, name: &str) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn classifier(&self) -> &LayerInfo {
        self.layers.last().expect("layout is never empty")
    }

    /// Name of the layer containing parameter index `k`.
    pub fn layer_of(&self, k: usize) -> Option<&LayerInfo> {
        self.layers.iter().find(|l| k >= l.start && k < l.end)
    }
}
