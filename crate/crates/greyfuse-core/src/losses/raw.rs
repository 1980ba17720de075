//! Loss math, generic over element type.
//!
//! These functions are the single implementation used everywhere: the
//! training tape instantiates them at `f32`, while gradient-check tests
//! instantiate the exact same code at `f64` where central differences are
//! reliable.

use ndarray::{Array2, ArrayView2, LinalgScalar, ScalarOperand};
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Mean
    }
}

/// Mean over the batch of `-log softmax(logits)[label]`, with the gradient
/// w.r.t. the logits.
pub fn cross_entropy_with_grad<F>(
    logits: ArrayView2<F>,
    labels: &[usize],
) -> Result<(F, Array2<F>)>
where
    F: Float + ScalarOperand + LinalgScalar + std::fmt::Display,
{
    let (n, c) = logits.dim();
    if n == 0 || c == 0 {
        return Err(Error::Loss("empty logits".into()));
    }
    if labels.len() != n {
        return Err(Error::Loss(format!(
            "{} logit rows but {} labels",
            n,
            labels.len()
        )));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Loss(format!(
                "label {y} out of range for {c} classes (row {i})"
            )));
        }
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Loss("non-finite logits".into()));
    }

    let inv_n = F::one() / F::from(n).unwrap();
    let mut grad = Array2::<F>::zeros((n, c));
    let mut loss = F::zero();
    for i in 0..n {
        let row = logits.row(i);
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut denom = F::zero();
        for &v in row {
            denom = denom + (v - m).exp();
        }
        // (m - x_y) + ln(denom) avoids cancellation when x_y is the max.
        loss = loss + (m - row[labels[i]]) + denom.ln();
        let lse = m + denom.ln();
        for j in 0..c {
            grad[(i, j)] = (row[j] - lse).exp() * inv_n;
        }
        grad[(i, labels[i])] = grad[(i, labels[i])] - inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Value-only cross-entropy.
pub fn cross_entropy<F>(logits: ArrayView2<F>, labels: &[usize]) -> Result<F>
where
    F: Float + ScalarOperand + LinalgScalar + std::fmt::Display,
{
    cross_entropy_with_grad(logits, labels).map(|(v, _)| v)
}

/// Per-anchor batch-hard selection: hardest positive and hardest negative
/// indices plus the pre-hinge term `l(a) = D(a, hp) - D(a, hn)`.
#[derive(Debug, Clone, Copy)]
pub struct AnchorTerm<F> {
    pub hardest_positive: usize,
    pub hardest_negative: usize,
    pub term: F,
}

fn validate_triplet_batch(n: usize, labels: &[usize]) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Loss(format!(
            "{} embedding rows but {} labels",
            n,
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::Loss("triplet loss needs at least 2 rows".into()));
    }
    let mut counts = std::collections::HashMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Loss(
            "triplet loss needs at least 2 distinct labels".into(),
        ));
    }
    if let Some((&l, _)) = counts.iter().find(|(_, &c)| c < 2) {
        return Err(Error::Loss(format!(
            "label {l} occurs only once; every label needs at least 2 samples"
        )));
    }
    Ok(())
}

/// Euclidean distances computed from per-pair row differences. The direct
/// difference form keeps the loss exactly invariant under embedding
/// translation (when the additions themselves are exact), which the
/// squared-norm expansion does not.
fn pairwise_distances<F: Float>(emb: ArrayView2<F>) -> Array2<F> {
    let n = emb.nrows();
    let mut dist = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = F::zero();
            for k in 0..emb.ncols() {
                let d = emb[(i, k)] - emb[(j, k)];
                acc = acc + d * d;
            }
            let d = acc.sqrt();
            dist[(i, j)] = d;
            dist[(j, i)] = d;
        }
    }
    dist
}

/// Batch-hard mining. Ties resolve to the lowest index (deterministic).
pub fn anchor_terms<F>(emb: ArrayView2<F>, labels: &[usize]) -> Result<Vec<AnchorTerm<F>>>
where
    F: Float,
{
    let n = emb.nrows();
    validate_triplet_batch(n, labels)?;
    let dist = pairwise_distances(emb);
    let mut out = Vec::with_capacity(n);
    for a in 0..n {
        let mut hp = usize::MAX;
        let mut hp_d = F::neg_infinity();
        let mut hn = usize::MAX;
        let mut hn_d = F::infinity();
        for j in 0..n {
            if j == a {
                continue;
            }
            if labels[j] == labels[a] {
                if dist[(a, j)] > hp_d {
                    hp_d = dist[(a, j)];
                    hp = j;
                }
            } else if dist[(a, j)] < hn_d {
                hn_d = dist[(a, j)];
                hn = j;
            }
        }
        debug_assert!(hp != usize::MAX && hn != usize::MAX);
        out.push(AnchorTerm {
            hardest_positive: hp,
            hardest_negative: hn,
            term: hp_d - hn_d,
        });
    }
    Ok(out)
}

/// Batch-hard triplet loss with the gradient w.r.t. the embeddings.
///
/// Per anchor: `[m + max_p D(a,p) - min_n D(a,n)]_+`, reduced by mean or
/// sum. Distances are plain (non-squared) Euclidean; zero-distance pairs
/// contribute a zero subgradient.
pub fn batch_hard_triplet_with_grad<F>(
    emb: ArrayView2<F>,
    labels: &[usize],
    margin: F,
    reduction: Reduction,
) -> Result<(F, Array2<F>)>
where
    F: Float,
{
    if !(margin.is_finite() && margin >= F::zero()) {
        return Err(Error::Loss("margin must be finite and non-negative".into()));
    }
    let terms = anchor_terms(emb, labels)?;
    let n = emb.nrows();
    let d = emb.ncols();
    let scale = match reduction {
        Reduction::Mean => F::one() / F::from(n).unwrap(),
        Reduction::Sum => F::one(),
    };

    let mut loss = F::zero();
    let mut grad = Array2::<F>::zeros((n, d));
    for (a, t) in terms.iter().enumerate() {
        let hinge = margin + t.term;
        if hinge <= F::zero() {
            continue;
        }
        loss = loss + hinge;
        // d||x_a - x_b|| / dx_a = (x_a - x_b) / ||x_a - x_b||
        for (b, sign) in [(t.hardest_positive, F::one()), (t.hardest_negative, -F::one())] {
            let mut norm = F::zero();
            for k in 0..d {
                let diff = emb[(a, k)] - emb[(b, k)];
                norm = norm + diff * diff;
            }
            let norm = norm.sqrt();
            if norm > F::zero() {
                let coeff = sign * scale / norm;
                for k in 0..d {
                    let diff = emb[(a, k)] - emb[(b, k)];
                    grad[(a, k)] = grad[(a, k)] + coeff * diff;
                    grad[(b, k)] = grad[(b, k)] - coeff * diff;
                }
            }
        }
    }
    Ok((loss * scale, grad))
}

/// Value-only batch-hard triplet loss.
pub fn batch_hard_triplet<F>(
    emb: ArrayView2<F>,
    labels: &[usize],
    margin: F,
    reduction: Reduction,
) -> Result<F>
where
    F: Float,
{
    batch_hard_triplet_with_grad(emb, labels, margin, reduction).map(|(v, _)| v)
}
