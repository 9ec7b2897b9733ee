//! Element-wise parameter importance scores and their normalization.
//!
//! Three scores are supported, all nonnegative and aligned 1:1 with a
//! parameter vector:
//!   * drift:    (local[k] - global[k])^2            (`score_obp`)
//!   * fisher:   gradient[k]^2                        (`score_fisher`)
//!   * gradient: |merged[k] - trained[k]|             (`score_gradient`)

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::layout::LayerLayout;
use crate::params::ParamVectorG;
use crate::scalar::Scalar;

/// Sentinel assigned to suppressed entries when selection is restricted to
/// the classifier layer: strictly below every reachable normalized score.
pub const SUPPRESSED_SCORE: f64 = -1.0;

/// Per-parameter importance values aligned with a layer layout.
/// Values are finite; raw scores are nonnegative, while classifier-restricted
/// normalization may assign [`SUPPRESSED_SCORE`] outside the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVectorG<S: Scalar> {
    values: Vec<S>,
    layout: Arc<LayerLayout>,
}

impl<S: Scalar> ScoreVectorG<S> {
    pub fn new(values: Vec<S>, layout: Arc<LayerLayout>) -> Result<Self> {
        if values.len() != layout.total_params() {
            return Err(Error::LayoutMismatch(format!(
                "{} scores for a layout of {} parameters",
                values.len(),
                layout.total_params()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("score vector"));
        }
        Ok(Self { values, layout })
    }

    pub fn values(&self) -> &[S] {
        &self.values
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
}

/// Which importance score a decoupling method uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Gradient,
    Fisher,
    FedObp,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Gradient => "gradient",
            ScoreKind::Fisher => "fisher",
            ScoreKind::FedObp => "fedobp",
        }
    }
}

/// Score normalization strategy. `cls_only` restricts personalization to the
/// classifier layer and is only meaningful with `GlobalNorm`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormMode {
    pub kind: NormKind,
    pub cls_only: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    NoNorm,
    LayerNorm,
    GlobalNorm,
}

impl NormMode {
    pub const NONE: NormMode = NormMode { kind: NormKind::NoNorm, cls_only: false };

    pub fn new(kind: NormKind, cls_only: bool) -> Result<Self> {
        if cls_only && kind != NormKind::GlobalNorm {
            return Err(Error::InvalidArgument(
                "classifier-only selection requires global normalization".into(),
            ));
        }
        Ok(Self { kind, cls_only })
    }
}

/// Squared local/global drift: `(local_prev[k] - global_now[k])^2`.
pub fn score_obp<S: Scalar>(
    local_prev: &ParamVectorG<S>,
    global_now: &ParamVectorG<S>,
) -> Result<ScoreVectorG<S>> {
    local_prev.check_same_layout(global_now)?;
    let values = local_prev
        .values()
        .iter()
        .zip(global_now.values())
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .collect();
    ScoreVectorG::new(values, local_prev.layout().clone())
}

/// Squared gradient: `grad[k]^2`.
pub fn score_fisher<S: Scalar>(grad: &ParamVectorG<S>) -> Result<ScoreVectorG<S>> {
    let values = grad.values().iter().map(|&g| g * g).collect();
    ScoreVectorG::new(values, grad.layout().clone())
}

/// Absolute local update: `|merged[k] - trained[k]|`.
pub fn score_gradient<S: Scalar>(
    merged: &ParamVectorG<S>,
    trained: &ParamVectorG<S>,
) -> Result<ScoreVectorG<S>> {
    merged.check_same_layout(trained)?;
    let values =
        merged.values().iter().zip(trained.values()).map(|(&a, &b)| (a - b).abs()).collect();
    ScoreVectorG::new(values, merged.layout().clone())
}

fn min_max_rescale<S: Scalar>(slice: &mut [S]) {
    let mut lo = S::infinity();
    let mut hi = S::neg_infinity();
    for &v in slice.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if range == S::zero() {
        // Degenerate range maps to all zeros.
        for v in slice.iter_mut() {
            *v = S::zero();
        }
    } else {
        for v in slice.iter_mut() {
            *v = (*v - lo) / range;
        }
    }
}

/// Min-max normalization of a score vector: identity, per layer, or over the
/// whole vector. With `cls_only`, every score outside the classifier layer is
/// replaced by [`SUPPRESSED_SCORE`] so no such parameter can clear a
/// threshold.
pub fn normalize<S: Scalar>(scores: &ScoreVectorG<S>, mode: NormMode) -> ScoreVectorG<S> {
    let mut values = scores.values().to_vec();
    match mode.kind {
        NormKind::NoNorm => {}
        NormKind::LayerNorm => {
            for layer in scores.layout().layers() {
                min_max_rescale(&mut values[layer.start..layer.end]);
            }
        }
        NormKind::GlobalNorm => min_max_rescale(&mut values),
    }
    if mode.cls_only {
        let cls = scores.layout().classifier().clone();
        let sentinel = S::from_f64c(SUPPRESSED_SCORE);
        for (k, v) in values.iter_mut().enumerate() {
            if k < cls.start || k >= cls.end {
                *v = sentinel;
            }
        }
    }
    ScoreVectorG { values, layout: scores.layout().clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{LayerInfo, LayerKind};

    fn layout(ranges: &[(usize, usize)]) -> Arc<LayerLayout> {
        let n = ranges.len();
        let layers = ranges
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| LayerInfo {
                name: if i + 1 == n { "classifier".into() } else { format!("fc{}", i + 1) },
                start,
                end,
                kind: LayerKind::Fc,
                is_classifier: i + 1 == n,
            })
            .collect();
        Arc::new(LayerLayout::new(layers).unwrap())
    }

    fn pv(values: Vec<f64>, layout: Arc<LayerLayout>) -> ParamVectorG<f64> {
        ParamVectorG::new(values, layout).unwrap()
    }

    #[test]
    fn obp_squares_differences() {
        let l = layout(&[(0, 2)]);
        let a = pv(vec![3.0, 0.0], l.clone());
        let b = pv(vec![1.0, 1.0], l);
        assert_eq!(score_obp(&a, &b).unwrap().values(), &[4.0, 1.0]);
        assert_eq!(score_obp(&b, &a).unwrap().values(), &[4.0, 1.0]);
        assert_eq!(score_obp(&a, &a).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn fisher_squares_gradient() {
        let l = layout(&[(0, 2)]);
        let g = pv(vec![-2.0, 0.5], l.clone());
        assert_eq!(score_fisher(&g).unwrap().values(), &[4.0, 0.25]);
        let neg = pv(vec![2.0, -0.5], l);
        assert_eq!(score_fisher(&neg).unwrap().values(), &[4.0, 0.25]);
    }

    #[test]
    fn gradient_takes_absolute_difference() {
        let l = layout(&[(0, 2)]);
        let merged = pv(vec![1.0, 2.0], l.clone());
        let trained = pv(vec![0.5, 3.0], l.clone());
        assert_eq!(score_gradient(&merged, &trained).unwrap().values(), &[0.5, 1.0]);

        let m_neg = pv(vec![-1.0, -2.0], l.clone());
        let t_neg = pv(vec![-0.5, -3.0], l);
        assert_eq!(score_gradient(&m_neg, &t_neg).unwrap().values(), &[0.5, 1.0]);
    }

    #[test]
    fn layer_norm_rescales_each_layer() {
        let l = layout(&[(0, 3)]);
        let s = ScoreVectorG::new(vec![2.0, 4.0, 6.0], l).unwrap();
        let mode = NormMode::new(NormKind::LayerNorm, false).unwrap();
        assert_eq!(normalize(&s, mode).values(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_scores_normalize_to_zero() {
        let l = layout(&[(0, 4)]);
        let s = ScoreVectorG::new(vec![3.0; 4], l).unwrap();
        let mode = NormMode::new(NormKind::GlobalNorm, false).unwrap();
        assert_eq!(normalize(&s, mode).values(), &[0.0; 4]);
    }

    #[test]
    fn layer_vs_global_norm_two_layer_example() {
        let l = layout(&[(0, 2), (2, 4)]);
        let s = ScoreVectorG::new(vec![0.0, 10.0, 5.0, 5.0], l).unwrap();

        let layer = normalize(&s, NormMode::new(NormKind::LayerNorm, false).unwrap());
        assert_eq!(layer.values(), &[0.0, 1.0, 0.0, 0.0]);

        let global = normalize(&s, NormMode::new(NormKind::GlobalNorm, false).unwrap());
        assert_eq!(global.values(), &[0.0, 1.0, 0.5, 0.5]);
    }

    #[test]
    fn cls_only_suppresses_non_classifier() {
        let l = layout(&[(0, 2), (2, 4)]);
        let s = ScoreVectorG::new(vec![9.0, 8.0, 1.0, 3.0], l).unwrap();
        let mode = NormMode::new(NormKind::GlobalNorm, true).unwrap();
        let out = normalize(&s, mode);
        assert_eq!(out.values()[0], SUPPRESSED_SCORE);
        assert_eq!(out.values()[1], SUPPRESSED_SCORE);
        assert!(out.values()[2] >= 0.0 && out.values()[3] >= 0.0);
    }

    #[test]
    fn cls_only_requires_global_norm() {
        assert!(NormMode::new(NormKind::LayerNorm, true).is_err());
        assert!(NormMode::new(NormKind::NoNorm, true).is_err());
        assert!(NormMode::new(NormKind::GlobalNorm, true).is_ok());
    }

    #[test]
    fn scores_zero_iff_inputs_agree() {
        let l = layout(&[(0, 3)]);
        let a = pv(vec![0.5, -0.25, 1.0], l.clone());
        let b = pv(vec![0.5, 0.75, 1.0], l);
        let s = score_obp(&a, &b).unwrap();
        assert_eq!(s.values()[0], 0.0);
        assert!(s.values()[1] > 0.0);
        assert_eq!(s.values()[2], 0.0);
    }
}
