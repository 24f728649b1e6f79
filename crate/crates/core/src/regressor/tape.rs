//! Minimal reverse-mode automatic differentiation over 2-d arrays.
//!
//! A forward pass appends nodes to the tape; `backward` walks it in reverse
//! accumulating gradients. The op set is exactly what the regressor needs:
//! matrix products, broadcast adds, ReLU, row softmax, column slicing and
//! the loss reductions. Non-smooth ops record a sign signature so gradient
//! checks can exclude evaluations that straddle a kink.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use ndarray::{s, Array2, Axis};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    /// N x d plus a broadcast 1 x d row.
    AddRow(usize, usize),
    Sub(usize, usize),
    MatMul(usize, usize),
    /// a . b^T without materializing the transpose.
    MatMulTransposed(usize, usize),
    ScaleConst(usize, f64),
    /// Elementwise scale by a 1 x 1 scalar node.
    ScaleByScalar(usize, usize),
    Relu(usize),
    SoftmaxRows(usize),
    /// Columns [start, end) of the source.
    ColSlice(usize, usize, usize),
    ConcatCols(Vec<usize>),
    /// Scalar sum of |a - target| over all entries.
    SumAbsToTarget(usize, Array2<f64>),
    /// Scalar sum of hinge terms max(v[ja,jb] - v[ia,ib] + 1, 0).
    HingePairs(usize, Vec<HingeTerm>),
    /// Scalar sum of |(v[r,cs] - v[r,ce]) - target| span-consistency terms.
    SpanAbs(usize, Vec<SpanTerm>),
    SumScalars(Vec<usize>),
}

/// Indices of one inter-cell hinge: (row_j, col_j, row_i, col_i).
#[derive(Debug, Clone, Copy)]
pub struct HingeTerm {
    pub row_j: usize,
    pub col_j: usize,
    pub row_i: usize,
    pub col_i: usize,
}

/// One intra-cell span term: |(v[row, col_start] - v[row, col_end]) - target|.
#[derive(Debug, Clone, Copy)]
pub struct SpanTerm {
    pub row: usize,
    pub col_start: usize,
    pub col_end: usize,
    pub target: f64,
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Sign bits of every non-smooth activation, in tape order.
    kink_signs: Vec<bool>,
}

pub type NodeId = usize;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value + &self.nodes[b].value;
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[row].value.nrows(), 1);
        let value = &self.nodes[a].value + &self.nodes[row].value;
        self.push(value, Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = &self.nodes[a].value - &self.nodes[b].value;
        self.push(value, Op::Sub(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_transposed(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.nodes[a].value.dot(&self.nodes[b].value.t());
        self.push(value, Op::MatMulTransposed(a, b))
    }

    pub fn scale_const(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = &self.nodes[a].value * factor;
        self.push(value, Op::ScaleConst(a, factor))
    }

    pub fn scale_by_scalar(&mut self, a: NodeId, scalar: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[scalar].value.dim(), (1, 1));
        let factor = self.nodes[scalar].value[[0, 0]];
        let value = &self.nodes[a].value * factor;
        self.push(value, Op::ScaleByScalar(a, scalar))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let input = &self.nodes[a].value;
        for &x in input.iter() {
            self.kink_signs.push(x > 0.0);
        }
        let value = input.mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let input = &self.nodes[a].value;
        let mut value = input.clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let value = self.nodes[a].value.slice(s![.., start..end]).to_owned();
        self.push(value, Op::ColSlice(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("compatible row counts");
        self.push(value, Op::ConcatCols(parts))
    }

    pub fn sum_abs_to_target(&mut self, a: NodeId, target: Array2<f64>) -> NodeId {
        let diff = &self.nodes[a].value - &target;
        for &x in diff.iter() {
            self.kink_signs.push(x > 0.0);
        }
        let value = Array2::from_elem((1, 1), diff.mapv(f64::abs).sum());
        self.push(value, Op::SumAbsToTarget(a, target))
    }

    pub fn hinge_pairs(&mut self, a: NodeId, terms: Vec<HingeTerm>) -> NodeId {
        let v = &self.nodes[a].value;
        let mut total = 0.0;
        for t in &terms {
            let raw = v[[t.row_j, t.col_j]] - v[[t.row_i, t.col_i]] + 1.0;
            self.kink_signs.push(raw > 0.0);
            total += raw.max(0.0);
        }
        self.push(Array2::from_elem((1, 1), total), Op::HingePairs(a, terms))
    }

    pub fn span_abs(&mut self, a: NodeId, terms: Vec<SpanTerm>) -> NodeId {
        let v = &self.nodes[a].value;
        let mut total = 0.0;
        for t in &terms {
            let raw = (v[[t.row, t.col_start]] - v[[t.row, t.col_end]]) - t.target;
            self.kink_signs.push(raw > 0.0);
            total += raw.abs();
        }
        self.push(Array2::from_elem((1, 1), total), Op::SpanAbs(a, terms))
    }

    pub fn sum_scalars(&mut self, parts: Vec<NodeId>) -> NodeId {
        let total: f64 = parts.iter().map(|&p| self.nodes[p].value[[0, 0]]).sum();
        self.push(Array2::from_elem((1, 1), total), Op::SumScalars(parts))
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.dim(), (1, 1));
        self.nodes[id].value[[0, 0]]
    }

    /// Hash of the sign pattern of every ReLU, hinge and absolute-value
    /// input seen during the forward pass. Two evaluations with different
    /// signatures sit on different smooth pieces of the loss.
    pub fn kink_signature(&self) -> u64 {
        let mut hasher = DefaultHasher::new();
        self.kink_signs.hash(&mut hasher);
        hasher.finish()
    }

    /// Reverse pass from a scalar output; returns one gradient per node.
    /// Only leaf gradients are meaningful in the result: interior buffers
    /// are consumed by the sweep and come back as zeros.
    ///
    /// Gradients are materialized lazily: a node first reached by the
    /// reverse sweep takes ownership of the incoming contribution instead
    /// of accumulating into a zero-filled array, which matters because a
    /// training step runs one backward per table.
    pub fn backward(&self, output: NodeId) -> Vec<Array2<f64>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output] = Some(Array2::from_elem((1, 1), 1.0));
        fn accumulate(slot: &mut Option<Array2<f64>>, contribution: Array2<f64>) {
            match slot {
                Some(existing) => *existing += &contribution,
                None => *slot = Some(contribution),
            }
        }
        // A mutable dense slot for nodes receiving sparse scatter updates.
        fn dense<'a>(
            slot: &'a mut Option<Array2<f64>>,
            dim: (usize, usize),
        ) -> &'a mut Array2<f64> {
            slot.get_or_insert_with(|| Array2::zeros(dim))
        }
        for id in (0..=output).rev() {
            // Leaves keep their slot: their gradients are the result. The
            // buffers of interior nodes are consumed by the sweep and
            // returned as zeros.
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(grad) = std::mem::take(&mut grads[id]) else { continue };
            match &self.nodes[id].op {
                Op::Leaf => unreachable!("skipped above"),
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], grad.clone());
                    accumulate(&mut grads[*b], grad.clone());
                }
                Op::AddRow(a, row) => {
                    let summed = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads[*a], grad.clone());
                    accumulate(&mut grads[*row], summed);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*b], -&grad);
                    accumulate(&mut grads[*a], grad.clone());
                }
                Op::MatMul(a, b) => {
                    let ga = grad.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&grad);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::MatMulTransposed(a, b) => {
                    let ga = grad.dot(&self.nodes[*b].value);
                    let gb = grad.t().dot(&self.nodes[*a].value);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::ScaleConst(a, factor) => {
                    accumulate(&mut grads[*a], &grad * *factor);
                }
                Op::ScaleByScalar(a, scalar) => {
                    let factor = self.nodes[*scalar].value[[0, 0]];
                    let inner = (&grad * &self.nodes[*a].value).sum();
                    accumulate(&mut grads[*a], &grad * factor);
                    dense(&mut grads[*scalar], (1, 1))[[0, 0]] += inner;
                }
                Op::Relu(a) => {
                    let mut masked = grad;
                    masked.zip_mut_with(&self.nodes[*a].value, |g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut grads[*a], masked);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[id].value;
                    let mut ga = grad;
                    for r in 0..y.nrows() {
                        let dot: f64 = (0..y.ncols()).map(|c| ga[[r, c]] * y[[r, c]]).sum();
                        for c in 0..y.ncols() {
                            ga[[r, c]] = y[[r, c]] * (ga[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut grads[*a], ga);
                }
                Op::ColSlice(a, start, end) => {
                    let dest = dense(&mut grads[*a], self.nodes[*a].value.dim());
                    let mut region = dest.slice_mut(s![.., *start..*end]);
                    region += &grad;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = self.nodes[p].value.ncols();
                        let piece = grad.slice(s![.., offset..offset + width]).to_owned();
                        accumulate(&mut grads[p], piece);
                        offset += width;
                    }
                }
                Op::SumAbsToTarget(a, target) => {
                    let g = grad[[0, 0]];
                    let mut sign = self.nodes[*a].value.clone();
                    sign.zip_mut_with(target, |s, &t| {
                        let d = *s - t;
                        *s = if d > 0.0 {
                            g
                        } else if d < 0.0 {
                            -g
                        } else {
                            0.0
                        };
                    });
                    accumulate(&mut grads[*a], sign);
                }
                Op::HingePairs(a, terms) => {
                    let g = grad[[0, 0]];
                    let dest = dense(&mut grads[*a], self.nodes[*a].value.dim());
                    let v = &self.nodes[*a].value;
                    for t in terms {
                        let raw = v[[t.row_j, t.col_j]] - v[[t.row_i, t.col_i]] + 1.0;
                        if raw > 0.0 {
                            dest[[t.row_j, t.col_j]] += g;
                            dest[[t.row_i, t.col_i]] -= g;
                        }
                    }
                }
                Op::SpanAbs(a, terms) => {
                    let g = grad[[0, 0]];
                    let dest = dense(&mut grads[*a], self.nodes[*a].value.dim());
                    let v = &self.nodes[*a].value;
                    for t in terms {
                        let raw = (v[[t.row, t.col_start]] - v[[t.row, t.col_end]]) - t.target;
                        let sign = if raw > 0.0 {
                            1.0
                        } else if raw < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        dest[[t.row, t.col_start]] += g * sign;
                        dest[[t.row, t.col_end]] -= g * sign;
                    }
                }
                Op::SumScalars(parts) => {
                    let g = grad[[0, 0]];
                    for &p in parts {
                        dense(&mut grads[p], (1, 1))[[0, 0]] += g;
                    }
                }
            }
        }
        grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Array2::zeros(self.nodes[i].value.dim())))
            .collect()
    }
}
