//! Training objective: per-branch cross-entropy + batch-hard triplet,
//! combined with a global loss on the concatenated feature.
//!
//! Branch composition:
//! - grey:   CE(logits_grey)  + lambda * Triplet(emb_grey)
//! - rgb:    CE(logits_rgb)   + lambda * Triplet(emb_rgb)
//! - joint:  sum_i CE(logits_part_i) + lambda * Triplet(emb_joint)
//!   (per-part classifiers, one triplet on the concatenated part feature)
//! - global: CE(logits_global) + lambda * Triplet(emb_global)
//!
//! `branch_weights` scale whole branches, which expresses the "without
//! branch losses" and "without global loss" ablations. A zero weight (or
//! `lambda = 0` for triplet terms) skips the computation entirely and logs
//! zeros.

mod raw;

pub use raw::{
    anchor_terms, batch_hard_triplet, batch_hard_triplet_with_grad, cross_entropy,
    cross_entropy_with_grad, AnchorTerm, Reduction,
};

use ndarray::{ArrayView2, Ix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadNodes;
use crate::nn::{NodeId, Tape};

/// Per-branch loss multipliers.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BranchWeights {
    pub grey: f64,
    pub rgb: f64,
    pub joint: f64,
    pub global: f64,
}

impl Default for BranchWeights {
    fn default() -> Self {
        BranchWeights {
            grey: 1.0,
            rgb: 1.0,
            joint: 1.0,
            global: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossConfig {
    /// Trade-off between cross-entropy and triplet terms.
    pub lambda: f64,
    /// Triplet margin `m`.
    pub margin: f64,
    pub triplet_reduction: Reduction,
    pub branch_weights: BranchWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            margin: 0.3,
            triplet_reduction: Reduction::Mean,
            branch_weights: BranchWeights::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!(
                "loss.lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "loss.margin must be finite and non-negative, got {}",
                self.margin
            )));
        }
        let w = &self.branch_weights;
        for (name, v) in [
            ("grey", w.grey),
            ("rgb", w.rgb),
            ("joint", w.joint),
            ("global", w.global),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss.branch_weights.{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if w.grey == 0.0 && w.rgb == 0.0 && w.joint == 0.0 && w.global == 0.0 {
            return Err(Error::Config("all branch weights are zero".into()));
        }
        Ok(())
    }
}

/// Itemized loss of one head. `ce`/`triplet` are the raw component values
/// (zero when the component was disabled and skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLoss {
    pub head: String,
    pub ce: f64,
    pub triplet: f64,
    /// Branch weight applied to this head's components.
    pub weight: f64,
}

/// Scalar total plus per-head components for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub heads: Vec<HeadLoss>,
}

impl LossReport {
    /// Recombine the logged components: `sum_h w_h * (ce_h + lambda * trip_h)`.
    pub fn weighted_component_sum(&self, cfg: &LossConfig) -> f64 {
        self.heads
            .iter()
            .map(|h| h.weight * (h.ce + cfg.lambda * h.triplet))
            .sum()
    }

    /// One CSV line per head plus a `total` line: `epoch,step,head,ce,triplet,total`.
    pub fn log_lines(&self, epoch: usize, step: usize, cfg: &LossConfig) -> Vec<String> {
        let mut lines: Vec<String> = self
            .heads
            .iter()
            .map(|h| {
                format!(
                    "{},{},{},{:.6},{:.6},{:.6}",
                    epoch,
                    step,
                    h.head,
                    h.ce,
                    h.triplet,
                    h.weight * (h.ce + cfg.lambda * h.triplet)
                )
            })
            .collect();
        lines.push(format!("{},{},total,,,{:.6}", epoch, step, self.total));
        lines
    }
}

fn matrix_view(tape: &Tape, id: NodeId) -> ArrayView2<'_, f32> {
    tape.value(id)
        .view()
        .into_dimensionality::<Ix2>()
        .expect("head outputs are matrices")
}

/// Cross-entropy on the tape. Returns the node and its value.
pub fn tape_cross_entropy(
    tape: &mut Tape,
    logits: NodeId,
    labels: &[usize],
) -> Result<(NodeId, f64)> {
    let (value, grad) = raw::cross_entropy_with_grad(matrix_view(tape, logits), labels)?;
    let node = tape.scalar_fn(value, &[logits], vec![grad.into_dyn()]);
    Ok((node, value as f64))
}

/// Batch-hard triplet on the tape. Returns the node and its value.
pub fn tape_batch_hard_triplet(
    tape: &mut Tape,
    emb: NodeId,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(NodeId, f64)> {
    let (value, grad) = raw::batch_hard_triplet_with_grad(
        matrix_view(tape, emb),
        labels,
        cfg.margin as f32,
        cfg.triplet_reduction,
    )?;
    let node = tape.scalar_fn(value, &[emb], vec![grad.into_dyn()]);
    Ok((node, value as f64))
}

/// Components of a single branch computed functionally (no tape):
/// `total = ce + lambda * triplet`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchLoss {
    pub total: f64,
    pub ce: f64,
    pub triplet: f64,
}

/// One branch objective on plain arrays.
pub fn branch_loss(
    logits: ArrayView2<f32>,
    emb: ArrayView2<f32>,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<BranchLoss> {
    cfg.validate()?;
    let ce = raw::cross_entropy(logits, labels)? as f64;
    let triplet = if cfg.lambda == 0.0 {
        0.0
    } else {
        raw::batch_hard_triplet(emb, labels, cfg.margin as f32, cfg.triplet_reduction)? as f64
    };
    Ok(BranchLoss {
        total: ce + cfg.lambda * triplet,
        ce,
        triplet,
    })
}

/// Build the full training objective on the tape and return the total node
/// plus the itemized report.
pub fn total_loss(
    tape: &mut Tape,
    heads: &HeadNodes,
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<(NodeId, LossReport)> {
    cfg.validate()?;
    if heads.logits_parts.len() != heads.emb_parts.len() {
        return Err(Error::Loss("part head count mismatch".into()));
    }
    let lambda = cfg.lambda as f32;
    let w = &cfg.branch_weights;

    let mut nodes: Vec<NodeId> = Vec::new();
    let mut weights: Vec<f32> = Vec::new();
    let mut report_heads: Vec<HeadLoss> = Vec::new();

    // grey / rgb / global share one shape: CE on the head logits plus a
    // triplet on the head embedding.
    let simple = [
        ("grey", heads.logits_grey, heads.emb_grey, w.grey),
        ("rgb", heads.logits_rgb, heads.emb_rgb, w.rgb),
        ("global", heads.logits_global, heads.emb_global, w.global),
    ];
    for (name, logits, emb, weight) in simple {
        let mut ce = 0.0;
        let mut trip = 0.0;
        if weight > 0.0 {
            let (ce_node, ce_v) = tape_cross_entropy(tape, logits, labels)?;
            ce = ce_v;
            nodes.push(ce_node);
            weights.push(weight as f32);
            if cfg.lambda > 0.0 {
                let (tr_node, tr_v) = tape_batch_hard_triplet(tape, emb, labels, cfg)?;
                trip = tr_v;
                nodes.push(tr_node);
                weights.push(weight as f32 * lambda);
            }
        }
        report_heads.push(HeadLoss {
            head: name.to_string(),
            ce,
            triplet: trip,
            weight,
        });
    }

    // Joint branch: per-part cross-entropy, one triplet on the concatenated
    // part embedding.
    for (i, &logits) in heads.logits_parts.iter().enumerate() {
        let mut ce = 0.0;
        if w.joint > 0.0 {
            let (node, v) = tape_cross_entropy(tape, logits, labels)?;
            ce = v;
            nodes.push(node);
            weights.push(w.joint as f32);
        }
        report_heads.push(HeadLoss {
            head: format!("part{i}"),
            ce,
            triplet: 0.0,
            weight: w.joint,
        });
    }
    {
        let mut trip = 0.0;
        if w.joint > 0.0 && cfg.lambda > 0.0 {
            let (node, v) = tape_batch_hard_triplet(tape, heads.emb_joint, labels, cfg)?;
            trip = v;
            nodes.push(node);
            weights.push(w.joint as f32 * lambda);
        }
        report_heads.push(HeadLoss {
            head: "joint".to_string(),
            ce: 0.0,
            triplet: trip,
            weight: w.joint,
        });
    }

    let total_node = tape.weighted_sum(&nodes, &weights);
    let report = LossReport {
        total: tape.scalar(total_node) as f64,
        heads: report_heads,
    };
    Ok((total_node, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn cross_entropy_uniform_logits_is_ln_c() {
        let logits = ndarray::Array2::<f32>::zeros((3, 4));
        let v = cross_entropy(logits.view(), &[0, 1, 3]).unwrap();
        assert_relative_eq!(v, (4.0f32).ln(), max_relative = 1e-6);
    }

    #[test]
    fn cross_entropy_confident_case() {
        // The value ~2.06e-9 sits below f32 resolution around 1.0, so this
        // hand case exercises the f64 instantiation.
        let logits = array![[10.0f64, -10.0]];
        let v = cross_entropy(logits.view(), &[0]).unwrap();
        // -ln softmax(10 | 10,-10) = ln(1 + e^-20)
        assert_relative_eq!(v, (1.0f64 + (-20.0f64).exp()).ln(), max_relative = 1e-9);
        assert_relative_eq!(v, 2.061153622438558e-9, max_relative = 1e-6);
    }

    #[test]
    fn cross_entropy_mixed_rows_average() {
        let logits = array![[2.0f32, 0.0, -1.0], [0.5, 0.5, 0.5]];
        let a = cross_entropy(logits.slice(ndarray::s![0..1, ..]), &[0]).unwrap();
        let b = cross_entropy(logits.slice(ndarray::s![1..2, ..]), &[2]).unwrap();
        let both = cross_entropy(logits.view(), &[0, 2]).unwrap();
        assert_relative_eq!(both, (a + b) / 2.0, max_relative = 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels_and_nonfinite() {
        let logits = array![[0.0f32, 1.0]];
        assert!(cross_entropy(logits.view(), &[2]).is_err());
        let bad = array![[f32::NAN, 1.0]];
        assert!(cross_entropy(bad.view(), &[0]).is_err());
    }

    #[test]
    fn triplet_hand_case_0425() {
        // 1-d embeddings A={0.0, 0.5}, B={0.6, 1.0}, m=0.3 -> 0.425
        let emb = array![[0.0f32], [0.5], [0.6], [1.0]];
        let labels = [0, 0, 1, 1];
        let v = batch_hard_triplet(emb.view(), &labels, 0.3, Reduction::Mean).unwrap();
        assert_relative_eq!(v, 0.425, epsilon = 1e-6);
        // Sum reduction is N times the mean here.
        let s = batch_hard_triplet(emb.view(), &labels, 0.3, Reduction::Sum).unwrap();
        assert_relative_eq!(s, 1.7, epsilon = 1e-6);
    }

    #[test]
    fn triplet_identical_embeddings_give_margin() {
        let emb = ndarray::Array2::<f32>::ones((6, 4));
        let labels = [0, 0, 0, 1, 1, 1];
        let v = batch_hard_triplet(emb.view(), &labels, 0.3, Reduction::Mean).unwrap();
        assert_relative_eq!(v, 0.3, epsilon = 1e-7);
    }

    #[test]
    fn triplet_well_separated_is_zero() {
        let emb = array![[0.0f32], [0.1], [1.0], [1.2]];
        let labels = [0, 0, 1, 1];
        let v = batch_hard_triplet(emb.view(), &labels, 0.3, Reduction::Mean).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn triplet_rejects_degenerate_batches() {
        let emb = ndarray::Array2::<f32>::zeros((3, 2));
        // single-occurrence label
        assert!(batch_hard_triplet(emb.view(), &[0, 0, 1], 0.3, Reduction::Mean).is_err());
        // one label only
        assert!(batch_hard_triplet(emb.view(), &[2, 2, 2], 0.3, Reduction::Mean).is_err());
    }

    #[test]
    fn branch_loss_composes_components() {
        let logits = ndarray::Array2::<f32>::zeros((4, 4));
        let emb = array![[0.0f32], [0.5], [0.6], [1.0]];
        let labels = [0, 0, 1, 1];
        let cfg = LossConfig::default();
        let bl = branch_loss(logits.view(), emb.view(), &labels, &cfg).unwrap();
        assert_relative_eq!(bl.ce, (4.0f64).ln(), max_relative = 1e-6);
        assert_relative_eq!(bl.triplet, 0.425, max_relative = 1e-5);
        assert_relative_eq!(bl.total, bl.ce + bl.triplet, max_relative = 1e-9);

        // lambda = 0 reduces to cross-entropy alone.
        let cfg0 = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let bl0 = branch_loss(logits.view(), emb.view(), &labels, &cfg0).unwrap();
        assert_eq!(bl0.total, bl0.ce);
        assert_eq!(bl0.triplet, 0.0);

        // lambda = 2 doubles only the triplet term.
        let cfg2 = LossConfig {
            lambda: 2.0,
            ..LossConfig::default()
        };
        let bl2 = branch_loss(logits.view(), emb.view(), &labels, &cfg2).unwrap();
        assert_relative_eq!(bl2.total, bl.ce + 2.0 * bl.triplet, max_relative = 1e-6);
    }

    #[test]
    fn translation_invariance_is_exact_on_dyadic_grid() {
        // Embeddings and shift on a 2^-8 grid: the additions are exact, so
        // the loss must match bit for bit.
        let scale = 1.0f32 / 256.0;
        let emb = array![
            [3.0f32 * scale, 17.0 * scale],
            [9.0 * scale, -4.0 * scale],
            [-25.0 * scale, 6.0 * scale],
            [14.0 * scale, 2.0 * scale]
        ];
        let labels = [0, 0, 1, 1];
        let shifted = emb.mapv(|v| v + 64.0 * scale);
        let a = batch_hard_triplet(emb.view(), &labels, 0.3, Reduction::Mean).unwrap();
        let b = batch_hard_triplet(shifted.view(), &labels, 0.3, Reduction::Mean).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scaling_by_two_scales_active_terms_exactly() {
        let emb = array![[0.0f32], [0.5], [0.6], [1.0]];
        let labels = [0, 0, 1, 1];
        let t1 = anchor_terms(emb.view(), &labels).unwrap();
        let doubled = emb.mapv(|v| v * 2.0);
        let t2 = anchor_terms(doubled.view(), &labels).unwrap();
        for (a, b) in t1.iter().zip(&t2) {
            assert_eq!(a.term * 2.0, b.term);
            assert_eq!(a.hardest_positive, b.hardest_positive);
            assert_eq!(a.hardest_negative, b.hardest_negative);
        }
    }
}
