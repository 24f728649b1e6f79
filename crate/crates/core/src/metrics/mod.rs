//! Evaluation metrics: IoU cell matching, detection F1, logical-location
//! accuracy, adjacency-relation F1, TEDS and BLEU, with per-sample values
//! and order-independent corpus aggregation.

pub mod bleu;
pub mod teds;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::grid::TableGrid;
use crate::markup::MarkupError;
use crate::transform::{self, TransformError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("cell {cell} in the {side} grid has no spatial quad")]
    MissingQuad { side: &'static str, cell: usize },
    #[error("prediction and ground-truth files differ in length: {pred} vs {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Markup(#[from] MarkupError),
}

/// One-to-one IoU matching between predicted and ground-truth cells.
#[derive(Debug, Clone, Serialize)]
pub struct CellMatching {
    /// Matched (pred_id, gt_id) pairs.
    pub pairs: Vec<(usize, usize)>,
    /// IoU of each matched pair, keyed the same way.
    pub iou: BTreeMap<(usize, usize), f64>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl CellMatching {
    pub fn gt_for_pred(&self, pred_id: usize) -> Option<usize> {
        self.pairs.iter().find(|(p, _)| *p == pred_id).map(|(_, g)| *g)
    }

    pub fn pred_for_gt(&self, gt_id: usize) -> Option<usize> {
        self.pairs.iter().find(|(_, g)| *g == gt_id).map(|(p, _)| *p)
    }
}

/// Precision / recall / F1 triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pr {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Pr {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    /// From counts of true positives and the two totals. Both sides empty
    /// means there was nothing to find and nothing spurious: perfect score.
    pub fn from_counts(tp: usize, pred_total: usize, gt_total: usize) -> Self {
        if pred_total == 0 && gt_total == 0 {
            return Self { precision: 1.0, recall: 1.0, f1: 1.0 };
        }
        let precision = if pred_total > 0 { tp as f64 / pred_total as f64 } else { 0.0 };
        let recall = if gt_total > 0 { tp as f64 / gt_total as f64 } else { 0.0 };
        Self::new(precision, recall)
    }
}

/// Logical-location accuracies over ground-truth cells. `acc_span` is absent
/// when the ground truth has no spanning cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogicalAccuracy {
    pub acc_all: f64,
    pub acc_row: f64,
    pub acc_col: f64,
    pub acc_span: Option<f64>,
}

fn iou_of_aabbs(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> f64 {
    let ix = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
    let iy = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
    let inter = ix * iy;
    let area_a = (a.2 - a.0) * (a.3 - a.1);
    let area_b = (b.2 - b.0) * (b.3 - b.1);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy one-to-one matching over all cross pairs, sorted by descending
/// IoU with ties broken by ascending (pred_id, gt_id). IoU is computed on
/// the axis-aligned bounding boxes of the quads; pairs below `threshold`
/// are never matched.
pub fn match_cells(
    pred: &TableGrid,
    gt: &TableGrid,
    threshold: f64,
) -> Result<CellMatching, MetricError> {
    let boxes = |grid: &TableGrid, side: &'static str| {
        grid.cells
            .iter()
            .map(|c| {
                c.quad
                    .as_ref()
                    .map(|q| (c.id, q.aabb()))
                    .ok_or(MetricError::MissingQuad { side, cell: c.id })
            })
            .collect::<Result<Vec<_>, _>>()
    };
    let pred_boxes = boxes(pred, "prediction")?;
    let gt_boxes = boxes(gt, "ground-truth")?;

    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for &(pid, pbox) in &pred_boxes {
        for &(gid, gbox) in &gt_boxes {
            let iou = iou_of_aabbs(pbox, gbox);
            if iou >= threshold {
                candidates.push((iou, pid, gid));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| (a.1, a.2).cmp(&(b.1, b.2)))
    });

    let mut used_pred = BTreeSet::new();
    let mut used_gt = BTreeSet::new();
    let mut pairs = Vec::new();
    let mut iou_map = BTreeMap::new();
    for (iou, pid, gid) in candidates {
        if used_pred.contains(&pid) || used_gt.contains(&gid) {
            continue;
        }
        used_pred.insert(pid);
        used_gt.insert(gid);
        iou_map.insert((pid, gid), iou);
        pairs.push((pid, gid));
    }
    let unmatched_pred =
        pred_boxes.iter().map(|&(id, _)| id).filter(|id| !used_pred.contains(id)).collect();
    let unmatched_gt =
        gt_boxes.iter().map(|&(id, _)| id).filter(|id| !used_gt.contains(id)).collect();
    Ok(CellMatching { pairs, iou: iou_map, unmatched_pred, unmatched_gt })
}

pub fn detection_f1(matching: &CellMatching) -> Pr {
    let tp = matching.pairs.len();
    Pr::from_counts(tp, tp + matching.unmatched_pred.len(), tp + matching.unmatched_gt.len())
}

/// Raw correctness counts behind [`logical_accuracy`]; kept separate so
/// corpus aggregation can sum counts before taking ratios.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogicalCounts {
    pub gt_total: usize,
    pub all_correct: usize,
    pub row_correct: usize,
    pub col_correct: usize,
    pub span_total: usize,
    pub span_correct: usize,
}

impl LogicalCounts {
    pub fn accumulate(&mut self, other: &LogicalCounts) {
        self.gt_total += other.gt_total;
        self.all_correct += other.all_correct;
        self.row_correct += other.row_correct;
        self.col_correct += other.col_correct;
        self.span_total += other.span_total;
        self.span_correct += other.span_correct;
    }

    pub fn ratios(&self) -> LogicalAccuracy {
        let frac = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        LogicalAccuracy {
            acc_all: frac(self.all_correct, self.gt_total),
            acc_row: frac(self.row_correct, self.gt_total),
            acc_col: frac(self.col_correct, self.gt_total),
            acc_span: (self.span_total > 0)
                .then(|| self.span_correct as f64 / self.span_total as f64),
        }
    }
}

pub fn logical_counts(pred: &TableGrid, gt: &TableGrid, matching: &CellMatching) -> LogicalCounts {
    let mut counts = LogicalCounts { gt_total: gt.cells.len(), ..Default::default() };
    for gt_cell in &gt.cells {
        let spanning = gt_cell.logical.is_spanning();
        if spanning {
            counts.span_total += 1;
        }
        let Some(pred_id) = matching.pred_for_gt(gt_cell.id) else { continue };
        let Some(pred_cell) = pred.cell(pred_id) else { continue };
        let p = pred_cell.logical;
        let g = gt_cell.logical;
        let row_ok = p.row_start == g.row_start && p.row_end == g.row_end;
        let col_ok = p.col_start == g.col_start && p.col_end == g.col_end;
        if row_ok {
            counts.row_correct += 1;
        }
        if col_ok {
            counts.col_correct += 1;
        }
        if row_ok && col_ok {
            counts.all_correct += 1;
            if spanning {
                counts.span_correct += 1;
            }
        }
    }
    counts
}

/// Accuracy of logical locations over ground-truth cells: full 4-tuple,
/// row pair, column pair, and the 4-tuple restricted to spanning cells.
/// Unmatched ground-truth cells count as wrong.
pub fn logical_accuracy(
    pred: &TableGrid,
    gt: &TableGrid,
    matching: &CellMatching,
) -> LogicalAccuracy {
    logical_counts(pred, gt, matching).ratios()
}

/// Relation-triplet key in ground-truth id space; unmatched pred cells get
/// distinct keys that can never meet a ground-truth id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum RelId {
    Gt(usize),
    UnmatchedPred(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RelationCounts {
    pub tp: usize,
    pub pred_total: usize,
    pub gt_total: usize,
}

impl RelationCounts {
    pub fn accumulate(&mut self, other: &RelationCounts) {
        self.tp += other.tp;
        self.pred_total += other.pred_total;
        self.gt_total += other.gt_total;
    }

    pub fn ratios(&self) -> Pr {
        Pr::from_counts(self.tp, self.pred_total, self.gt_total)
    }
}

pub fn relation_counts(
    pred: &TableGrid,
    gt: &TableGrid,
    matching: &CellMatching,
) -> Result<RelationCounts, MetricError> {
    let triplets = |grid: &TableGrid| -> Result<Vec<_>, TransformError> {
        let (h, v) = transform::adjacency_pairs(grid)?;
        Ok(h.into_iter().chain(v).collect())
    };
    let gt_set: BTreeSet<_> = triplets(gt)?
        .into_iter()
        .map(|p| (RelId::Gt(p.i), RelId::Gt(p.j), p.direction))
        .collect();
    let map = |id: usize| match matching.gt_for_pred(id) {
        Some(gt_id) => RelId::Gt(gt_id),
        None => RelId::UnmatchedPred(id),
    };
    let pred_set: BTreeSet<_> = triplets(pred)?
        .into_iter()
        .map(|p| (map(p.i), map(p.j), p.direction))
        .collect();
    Ok(RelationCounts {
        tp: pred_set.intersection(&gt_set).count(),
        pred_total: pred_set.len(),
        gt_total: gt_set.len(),
    })
}

/// F1 over adjacency-relation triplets; predicted triplets are carried into
/// ground-truth id space through the cell matching.
pub fn adjacency_f1(
    pred: &TableGrid,
    gt: &TableGrid,
    matching: &CellMatching,
) -> Result<Pr, MetricError> {
    Ok(relation_counts(pred, gt, matching)?.ratios())
}

/// Per-sample metric values; spatial metrics are absent when evaluation
/// runs in markup-only mode.
#[derive(Debug, Clone, Serialize)]
pub struct SampleMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<Pr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logical: Option<LogicalAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Pr>,
    pub teds: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection: Option<Pr>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logical: Option<LogicalAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Pr>,
    /// Mean of per-sample TEDS.
    pub teds: f64,
    /// Corpus-level BLEU over all samples.
    pub bleu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub samples: Vec<SampleMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub content_mode: bool,
    /// When false, only TEDS and BLEU are computed (no quads needed).
    pub spatial: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { iou_threshold: 0.5, content_mode: false, spatial: true }
    }
}

/// Evaluates aligned prediction/ground-truth grid sequences and reports
/// per-sample metrics plus corpus aggregates. Detection, logical and
/// adjacency aggregates are micro-averages (counts summed before ratios);
/// TEDS is macro-averaged; BLEU is corpus-level.
pub fn evaluate(
    preds: &[TableGrid],
    gts: &[TableGrid],
    options: &EvalOptions,
) -> Result<MetricReport, MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch { pred: preds.len(), gt: gts.len() });
    }
    let mut samples = Vec::with_capacity(preds.len());
    let mut det = RelationCounts::default();
    let mut log = LogicalCounts::default();
    let mut adj = RelationCounts::default();
    let mut teds_sum = 0.0;
    let mut bleu_pairs = Vec::new();
    for (pred, gt) in preds.iter().zip(gts) {
        let pred_markup = transform::to_markup(pred, options.content_mode)?;
        let gt_markup = transform::to_markup(gt, options.content_mode)?;
        let teds = teds::teds_trees(
            &teds::TableTree::from_markup(&pred_markup),
            &teds::TableTree::from_markup(&gt_markup),
            options.content_mode,
        );
        let bleu = bleu::corpus_bleu(&[(pred_markup.token_strings(), gt_markup.token_strings())]);
        bleu_pairs.push((pred_markup.token_strings(), gt_markup.token_strings()));
        teds_sum += teds;

        let (detection, logical, adjacency) = if options.spatial {
            let matching = match_cells(pred, gt, options.iou_threshold)?;
            let d = detection_f1(&matching);
            det.accumulate(&RelationCounts {
                tp: matching.pairs.len(),
                pred_total: matching.pairs.len() + matching.unmatched_pred.len(),
                gt_total: matching.pairs.len() + matching.unmatched_gt.len(),
            });
            let lc = logical_counts(pred, gt, &matching);
            log.accumulate(&lc);
            let rc = relation_counts(pred, gt, &matching)?;
            adj.accumulate(&rc);
            (Some(d), Some(lc.ratios()), Some(rc.ratios()))
        } else {
            (None, None, None)
        };
        samples.push(SampleMetrics { detection, logical, adjacency, teds, bleu });
    }
    let n = preds.len().max(1) as f64;
    let aggregate = AggregateMetrics {
        detection: options.spatial.then(|| det.ratios()),
        logical: options.spatial.then(|| log.ratios()),
        adjacency: options.spatial.then(|| adj.ratios()),
        teds: teds_sum / n,
        bleu: bleu::corpus_bleu(&bleu_pairs),
    };
    Ok(MetricReport { samples, aggregate })
}
