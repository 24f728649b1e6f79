//! Training objectives: the L1 logical loss and the inter-cell /
//! intra-cell consistency penalties. Plain-array forms are the reference
//! definitions; `taped_total_loss` builds the identical quantities on the
//! autodiff tape.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use crate::grid::LogicalLocation;
use crate::regressor::tape::{HingeTerm, NodeId, SpanTerm, Tape};
use crate::regressor::RegressorError;
use crate::transform::{AdjacencyPair, Direction};

/// Column layout of a logits row: (row_start, row_end, col_start, col_end).
const RS: usize = 0;
const RE: usize = 1;
const CS: usize = 2;
const CE: usize = 3;

/// Adjacent-pair hinge: a horizontally (vertically) adjacent pair is
/// penalized when the predicted column (row) spans of the two cells fail to
/// stay disjoint. Pair ids must index rows of the prediction matrix.
pub fn loss_inter(
    predictions: ArrayView2<f64>,
    horizontal: &BTreeSet<AdjacencyPair>,
    vertical: &BTreeSet<AdjacencyPair>,
) -> Result<f64, RegressorError> {
    let mut total = 0.0;
    for term in hinge_terms(predictions.nrows(), horizontal, vertical)? {
        let raw = predictions[[term.row_j, term.col_j]]
            - predictions[[term.row_i, term.col_i]]
            + 1.0;
        total += raw.max(0.0);
    }
    Ok(total)
}

/// Span-consistency penalty over ground-truth multi-row and multi-column
/// cells: the predicted signed span must match the true signed span.
pub fn loss_intra(
    predictions: ArrayView2<f64>,
    ground_truth: &[LogicalLocation],
) -> Result<f64, RegressorError> {
    if predictions.nrows() != ground_truth.len() {
        return Err(RegressorError::LengthMismatch {
            predictions: predictions.nrows(),
            ground_truth: ground_truth.len(),
        });
    }
    let mut total = 0.0;
    for term in span_terms(ground_truth) {
        let raw = (predictions[[term.row, term.col_start]]
            - predictions[[term.row, term.col_end]])
            - term.target;
        total += raw.abs();
    }
    Ok(total)
}

/// Mean L1 distance of both regressor outputs to the ground truth.
pub fn loss_log(
    base: ArrayView2<f64>,
    stack: ArrayView2<f64>,
    ground_truth: &[LogicalLocation],
) -> Result<f64, RegressorError> {
    if base.nrows() != ground_truth.len() || stack.nrows() != ground_truth.len() {
        return Err(RegressorError::LengthMismatch {
            predictions: base.nrows().min(stack.nrows()),
            ground_truth: ground_truth.len(),
        });
    }
    let target = targets(ground_truth);
    let n = ground_truth.len() as f64;
    let sum_abs = |pred: ArrayView2<f64>| (&pred - &target).mapv(f64::abs).sum();
    Ok((sum_abs(base) + sum_abs(stack)) / n)
}

#[derive(Debug, Clone, Copy)]
pub struct LossFlags {
    pub inter: bool,
    pub intra: bool,
}

/// Total objective: L_log plus the enabled consistency penalties, the
/// latter applied to the stacking output only.
pub fn total_loss(
    base: ArrayView2<f64>,
    stack: ArrayView2<f64>,
    ground_truth: &[LogicalLocation],
    horizontal: &BTreeSet<AdjacencyPair>,
    vertical: &BTreeSet<AdjacencyPair>,
    flags: LossFlags,
) -> Result<f64, RegressorError> {
    let mut total = loss_log(base, stack, ground_truth)?;
    if flags.inter {
        total += loss_inter(stack, horizontal, vertical)?;
    }
    if flags.intra {
        total += loss_intra(stack, ground_truth)?;
    }
    Ok(total)
}

/// Ground-truth logits matrix in (rs, re, cs, ce) column order.
pub fn targets(ground_truth: &[LogicalLocation]) -> Array2<f64> {
    let mut out = Array2::zeros((ground_truth.len(), 4));
    for (i, loc) in ground_truth.iter().enumerate() {
        out[[i, RS]] = loc.row_start as f64;
        out[[i, RE]] = loc.row_end as f64;
        out[[i, CS]] = loc.col_start as f64;
        out[[i, CE]] = loc.col_end as f64;
    }
    out
}

/// Hinge terms for the inter-cell loss. Horizontal adjacency constrains
/// column indices (the left cell must end before the right cell starts);
/// vertical adjacency constrains row indices.
pub fn hinge_terms(
    n: usize,
    horizontal: &BTreeSet<AdjacencyPair>,
    vertical: &BTreeSet<AdjacencyPair>,
) -> Result<Vec<HingeTerm>, RegressorError> {
    let check = |idx: usize| {
        if idx >= n {
            Err(RegressorError::Index { index: idx, len: n })
        } else {
            Ok(idx)
        }
    };
    let mut terms = Vec::with_capacity(horizontal.len() + vertical.len());
    for pair in horizontal {
        debug_assert_eq!(pair.direction, Direction::Horizontal);
        terms.push(HingeTerm {
            row_j: check(pair.j)?,
            col_j: CE,
            row_i: check(pair.i)?,
            col_i: CS,
        });
    }
    for pair in vertical {
        debug_assert_eq!(pair.direction, Direction::Vertical);
        terms.push(HingeTerm {
            row_j: check(pair.j)?,
            col_j: RE,
            row_i: check(pair.i)?,
            col_i: RS,
        });
    }
    Ok(terms)
}

/// Span terms for the intra-cell loss: multi-row cells constrain
/// (rs - re), multi-column cells constrain (cs - ce).
pub fn span_terms(ground_truth: &[LogicalLocation]) -> Vec<SpanTerm> {
    let mut terms = Vec::new();
    for (i, loc) in ground_truth.iter().enumerate() {
        if loc.row_span() > 1 {
            terms.push(SpanTerm {
                row: i,
                col_start: RS,
                col_end: RE,
                target: loc.row_start as f64 - loc.row_end as f64,
            });
        }
        if loc.col_span() > 1 {
            terms.push(SpanTerm {
                row: i,
                col_start: CS,
                col_end: CE,
                target: loc.col_start as f64 - loc.col_end as f64,
            });
        }
    }
    terms
}

/// Per-term loss node ids of a taped objective.
pub struct TapedLoss {
    pub total: NodeId,
    pub log: f64,
    pub inter: f64,
    pub intra: f64,
}

/// Builds the total loss on the tape from the forward-pass outputs.
/// Consistency penalties attach to the final (stacking) output.
pub fn taped_total_loss(
    tape: &mut Tape,
    base_logits: NodeId,
    stack_logits: Option<NodeId>,
    ground_truth: &[LogicalLocation],
    horizontal: &BTreeSet<AdjacencyPair>,
    vertical: &BTreeSet<AdjacencyPair>,
    flags: LossFlags,
) -> Result<TapedLoss, RegressorError> {
    let n = ground_truth.len();
    if tape.value(base_logits).nrows() != n {
        return Err(RegressorError::LengthMismatch {
            predictions: tape.value(base_logits).nrows(),
            ground_truth: n,
        });
    }
    let target = targets(ground_truth);
    let final_logits = stack_logits.unwrap_or(base_logits);

    let mut parts = Vec::new();
    let base_abs = tape.sum_abs_to_target(base_logits, target.clone());
    parts.push(tape.scale_const(base_abs, 1.0 / n as f64));
    if let Some(stack) = stack_logits {
        let stack_abs = tape.sum_abs_to_target(stack, target);
        parts.push(tape.scale_const(stack_abs, 1.0 / n as f64));
    }
    let log_value: f64 = parts.iter().map(|&p| tape.scalar(p)).sum();

    let mut inter_value = 0.0;
    if flags.inter {
        let terms = hinge_terms(n, horizontal, vertical)?;
        let node = tape.hinge_pairs(final_logits, terms);
        inter_value = tape.scalar(node);
        parts.push(node);
    }
    let mut intra_value = 0.0;
    if flags.intra {
        let node = tape.span_abs(final_logits, span_terms(ground_truth));
        intra_value = tape.scalar(node);
        parts.push(node);
    }
    let total = tape.sum_scalars(parts);
    Ok(TapedLoss { total, log: log_value, inter: inter_value, intra: intra_value })
}
