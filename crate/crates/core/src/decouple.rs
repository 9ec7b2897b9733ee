//! Quantile thresholding, personalized/shared index partitioning, and model
//! merging.
//!
//! The threshold is the empirical quantile tau = k-th smallest score with
//! k = ceil(q * K); indices scoring strictly above tau are personalized,
//! ties at tau stay shared.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::importance::ScoreVectorG;
use crate::layout::LayerLayout;
use crate::params::ParamVectorG;
use crate::scalar::Scalar;

/// Quantile level in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantile(f64);

impl Quantile {
    pub fn new(q: f64) -> Result<Self> {
        if q > 0.0 && q <= 1.0 {
            Ok(Self(q))
        } else {
            Err(Error::InvalidArgument(format!("quantile must be in (0, 1], got {q}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Disjoint split of `[0, total)` into a personalized index set and its
/// shared complement. Personalized indices are kept sorted.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPartition {
    personalized: Vec<usize>,
    total: usize,
}

impl MaskPartition {
    pub fn new(personalized: Vec<usize>, total: usize) -> Result<Self> {
        for pair in personalized.windows(2) {
            if pair[0] >= pair[1] {
                return Err(Error::InvalidArgument(
                    "personalized indices must be strictly ascending".into(),
                ));
            }
        }
        if let Some(&last) = personalized.last() {
            if last >= total {
                return Err(Error::InvalidArgument(format!(
                    "personalized index {last} outside [0, {total})"
                )));
            }
        }
        Ok(Self { personalized, total })
    }

    /// No personalized parameters: the merged model is the global model.
    pub fn empty(total: usize) -> Self {
        Self { personalized: Vec::new(), total }
    }

    /// Every parameter personalized: the merged model is the local model.
    pub fn full(total: usize) -> Self {
        Self { personalized: (0..total).collect(), total }
    }

    pub fn personalized(&self) -> &[usize] {
        &self.personalized
    }

    /// Complement of the personalized set, ascending.
    pub fn shared(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.shared_count());
        let mut next = self.personalized.iter().peekable();
        for k in 0..self.total {
            match next.peek() {
                Some(&&p) if p == k => {
                    next.next();
                }
                _ => out.push(k),
            }
        }
        out
    }

    pub fn personalized_count(&self) -> usize {
        self.personalized.len()
    }

    pub fn shared_count(&self) -> usize {
        self.total - self.personalized.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn contains(&self, k: usize) -> bool {
        self.personalized.binary_search(&k).is_ok()
    }
}

/// The k-th smallest score with k = ceil(q * K); the maximum at q = 1.
pub fn quantile_threshold<S: Scalar>(scores: &ScoreVectorG<S>, q: Quantile) -> Result<S> {
    if scores.is_empty() {
        return Err(Error::Empty("score vector"));
    }
    let k = quantile_rank(q, scores.len());
    let mut copy = scores.values().to_vec();
    let (_, tau, _) = copy.select_nth_unstable_by(k - 1, |a, b| {
        a.partial_cmp(b).expect("scores are finite")
    });
    Ok(*tau)
}

/// ceil(q * K) clamped to [1, K].
pub fn quantile_rank(q: Quantile, len: usize) -> usize {
    let k = (q.get() * len as f64).ceil() as usize;
    k.clamp(1, len)
}

/// Strictly-above-threshold indices are personalized; ties at `tau` shared.
pub fn partition<S: Scalar>(scores: &ScoreVectorG<S>, tau: S) -> MaskPartition {
    let personalized =
        scores.values().iter().enumerate().filter(|(_, &s)| s > tau).map(|(k, _)| k).collect();
    MaskPartition { personalized, total: scores.len() }
}

/// Threshold at the q-quantile, then partition. With all-distinct scores the
/// personalized count is exactly K - ceil(q * K).
pub fn select_mask<S: Scalar>(scores: &ScoreVectorG<S>, q: Quantile) -> Result<MaskPartition> {
    let tau = quantile_threshold(scores, q)?;
    Ok(partition(scores, tau))
}

/// Merged model: local values on the personalized set, global elsewhere.
pub fn merge<S: Scalar>(
    local_prev: &ParamVectorG<S>,
    global_now: &ParamVectorG<S>,
    mask: &MaskPartition,
) -> Result<ParamVectorG<S>> {
    local_prev.check_same_layout(global_now)?;
    if mask.total() != local_prev.len() {
        return Err(Error::LayoutMismatch(format!(
            "mask over {} indices applied to {} parameters",
            mask.total(),
            local_prev.len()
        )));
    }
    let mut values = global_now.values().to_vec();
    let local = local_prev.values();
    for &k in mask.personalized() {
        values[k] = local[k];
    }
    ParamVectorG::new(values, local_prev.layout().clone())
}

/// Static layer-wise mask: every index of each named layer is personalized.
/// `{"classifier"}` reproduces head-personalization; its complement
/// reproduces body-personalization; the empty set is plain averaging.
pub fn fixed_layer_mask(layout: &LayerLayout, personalized_layers: &[String]) -> Result<MaskPartition> {
    let mut personalized = Vec::new();
    for name in personalized_layers {
        let layer = layout.find(name).ok_or_else(|| Error::UnknownLayer(name.clone()))?;
        personalized.extend(layer.start..layer.end);
    }
    personalized.sort_unstable();
    personalized.dedup();
    MaskPartition::new(personalized, layout.total_params())
}

/// Append mask rows (`round,client_id,index`, one row per personalized
/// index) to a CSV writer.
pub fn write_mask_rows<W: Write>(
    out: &mut W,
    round: usize,
    client_id: usize,
    mask: &MaskPartition,
) -> std::io::Result<()> {
    for &k in mask.personalized() {
        writeln!(out, "{round},{client_id},{k}")?;
    }
    Ok(())
}

/// Write a full mask CSV (`round,client_id,index` with a header line).
pub fn write_masks_csv(
    path: &Path,
    rows: &[(usize, usize, &MaskPartition)],
) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "round,client_id,index").expect("vec write");
    for &(round, client, mask) in rows {
        write_mask_rows(&mut buf, round, client, mask).expect("vec write");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}
