//! Flat parameter vector tied to a layer layout.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layout::LayerLayout;
use crate::scalar::Scalar;

/// Flat model parameters plus the shared layout that names index ranges.
#[derive(Debug, Clone)]
pub struct ParamVectorG<S: Scalar> {
    values: Vec<S>,
    layout: Arc<LayerLayout>,
}

impl<S: Scalar> ParamVectorG<S> {
    pub fn new(values: Vec<S>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_params() {
            return Err(Error::LayoutMismatch(format!(
                "{} values for a layout of {} parameters",
                values.len(),
                layout.total_params()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<LayerLayout>) -> Self {
        Self { values: vec![S::zero(); layout.total_params()], layout }
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn layout(&self) -> &Arc<LayerLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Error unless `other` shares this vector's layout (same ranges/names).
    pub fn check_same_layout(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::LayoutMismatch("parameter vectors built from different layouts".into()))
        }
    }
}

impl<S: Scalar> PartialEq for ParamVectorG<S> {
    fn eq(&self, other: &Self) -> bool {
        self.values == other.values && *self.layout == *other.layout
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayerInfo, LayerKind};

    fn small_layout() -> Arc<LayerLayout> {
        Arc::new(
            LayerLayout::new(vec![LayerInfo {
                name: "classifier".into(),
                start: 0,
                end: 3,
                kind: LayerKind::Fc,
                is_classifier: true,
            }])
            .unwrap(),
        )
    }

    #[test]
    fn length_must_match_layout() {
        let layout = small_layout();
        assert!(ParamVectorG::new(vec![0.0; 2], layout.clone()).is_err());
        assert!(ParamVectorG::new(vec![0.0; 3], layout).is_ok());
    }

    #[test]
    fn rejects_nan() {
        let layout = small_layout();
        assert!(ParamVectorG::new(vec![0.0, f64::INFINITY, 0.0], layout).is_err());
    }
}
