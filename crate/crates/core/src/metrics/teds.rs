//! Tree-edit-distance similarity over table trees.
//!
//! Tables become three-level ordered trees (table -> tr -> td); distance is
//! computed exactly with the Zhang-Shasha dynamic program and normalized as
//! 1 - TED / max(|T_pred|, |T_gt|).

use crate::markup::{MarkupSequence, Token};

#[derive(Debug, Clone, PartialEq)]
pub enum NodeLabel {
    Table,
    Row,
    Cell { rowspan: usize, colspan: usize, text: String },
}

/// Ordered tree in postorder form, precomputed for Zhang-Shasha:
/// per-node label and leftmost-leaf-descendant index, plus the keyroots.
#[derive(Debug, Clone)]
pub struct TableTree {
    labels: Vec<NodeLabel>,
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl TableTree {
    /// Builds the table tree from a well-nested token stream.
    pub fn from_markup(seq: &MarkupSequence) -> Self {
        // Children lists in document order; nodes pushed in postorder.
        let mut labels = Vec::new();
        let mut lld = Vec::new();
        // stack of (first_postorder_index_of_subtree, pending label)
        let mut row_cells: Vec<usize> = Vec::new(); // lld values of cells in current row
        let mut row_llds: Vec<usize> = Vec::new(); // lld of each finished row
        let mut cell_text = String::new();
        let mut cell_spans = (1usize, 1usize);
        for token in &seq.tokens {
            match token {
                Token::TableOpen => {}
                Token::RowOpen => {
                    row_cells.clear();
                }
                Token::CellOpen { rowspan, colspan } => {
                    cell_spans = (*rowspan, *colspan);
                    cell_text.clear();
                }
                Token::Text(text) => cell_text.push_str(text),
                Token::CellClose => {
                    let idx = labels.len();
                    labels.push(NodeLabel::Cell {
                        rowspan: cell_spans.0,
                        colspan: cell_spans.1,
                        text: std::mem::take(&mut cell_text),
                    });
                    lld.push(idx);
                    row_cells.push(idx);
                }
                Token::RowClose => {
                    let idx = labels.len();
                    let first = row_cells.first().copied().unwrap_or(idx);
                    labels.push(NodeLabel::Row);
                    lld.push(first);
                    row_llds.push(first);
                }
                Token::TableClose => {
                    let idx = labels.len();
                    let first = row_llds.first().copied().unwrap_or(idx);
                    labels.push(NodeLabel::Table);
                    lld.push(first);
                }
            }
        }
        // keyroots: nodes with no parent sharing their leftmost leaf
        // (equivalently, the highest node for each distinct lld value).
        let mut keyroots = Vec::new();
        for i in 0..labels.len() {
            let is_keyroot = (i + 1..labels.len()).all(|k| lld[k] != lld[i]);
            if is_keyroot {
                keyroots.push(i);
            }
        }
        Self { labels, lld, keyroots }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[NodeLabel] {
        &self.labels
    }

    /// Leftmost-leaf-descendant index per postorder node. Node `a` is an
    /// ancestor of `d` exactly when `lld[a] <= d && d < a`.
    pub fn lld(&self) -> &[usize] {
        &self.lld
    }
}

/// Length-normalized character edit distance, in [0, 1].
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()] as f64 / a.len().max(b.len()) as f64
}

fn substitution_cost(a: &NodeLabel, b: &NodeLabel, content_mode: bool) -> f64 {
    match (a, b) {
        (NodeLabel::Table, NodeLabel::Table) | (NodeLabel::Row, NodeLabel::Row) => 0.0,
        (
            NodeLabel::Cell { rowspan: ra, colspan: ca, text: ta },
            NodeLabel::Cell { rowspan: rb, colspan: cb, text: tb },
        ) => {
            if ra != rb || ca != cb {
                1.0
            } else if content_mode {
                normalized_levenshtein(ta, tb).min(1.0)
            } else {
                0.0
            }
        }
        _ => 1.0,
    }
}

/// Exact ordered tree edit distance (insert/delete cost 1, substitution per
/// the TEDS cost model).
pub fn tree_edit_distance(t1: &TableTree, t2: &TableTree, content_mode: bool) -> f64 {
    let n = t1.size();
    let m = t2.size();
    if n == 0 || m == 0 {
        return (n + m) as f64;
    }
    let mut td = vec![vec![0.0f64; m]; n];
    for &i in &t1.keyroots {
        for &j in &t2.keyroots {
            forest_distance(t1, t2, i, j, content_mode, &mut td);
        }
    }
    td[n - 1][m - 1]
}

fn forest_distance(
    t1: &TableTree,
    t2: &TableTree,
    i: usize,
    j: usize,
    content_mode: bool,
    td: &mut [Vec<f64>],
) {
    let li = t1.lld[i];
    let lj = t2.lld[j];
    let rows = i - li + 2;
    let cols = j - lj + 2;
    let mut fd = vec![vec![0.0f64; cols]; rows];
    for di in 1..rows {
        fd[di][0] = fd[di - 1][0] + 1.0;
    }
    for dj in 1..cols {
        fd[0][dj] = fd[0][dj - 1] + 1.0;
    }
    for di in 1..rows {
        let ni = li + di - 1; // postorder node in t1
        for dj in 1..cols {
            let nj = lj + dj - 1;
            let del = fd[di - 1][dj] + 1.0;
            let ins = fd[di][dj - 1] + 1.0;
            if t1.lld[ni] == li && t2.lld[nj] == lj {
                let sub = fd[di - 1][dj - 1]
                    + substitution_cost(&t1.labels[ni], &t2.labels[nj], content_mode);
                fd[di][dj] = del.min(ins).min(sub);
                td[ni][nj] = fd[di][dj];
            } else {
                let bridge = fd[t1.lld[ni] - li][t2.lld[nj] - lj] + td[ni][nj];
                fd[di][dj] = del.min(ins).min(bridge);
            }
        }
    }
}

/// TEDS similarity in [0, 1] between two table trees.
pub fn teds_trees(pred: &TableTree, gt: &TableTree, content_mode: bool) -> f64 {
    let denom = pred.size().max(gt.size());
    if denom == 0 {
        return 1.0;
    }
    let dist = tree_edit_distance(pred, gt, content_mode);
    (1.0 - dist / denom as f64).clamp(0.0, 1.0)
}

/// TEDS between two markup sequences.
pub fn teds(pred: &MarkupSequence, gt: &MarkupSequence, content_mode: bool) -> f64 {
    teds_trees(&TableTree::from_markup(pred), &TableTree::from_markup(gt), content_mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(text: &str) -> MarkupSequence {
        MarkupSequence::parse(text).unwrap()
    }

    #[test]
    fn identical_markup_scores_one() {
        let s = seq("<table><tr><td rowspan=\"2\">a</td><td></td></tr><tr><td></td></tr></table>");
        assert_eq!(teds(&s, &s, true), 1.0);
        assert_eq!(teds(&s, &s, false), 1.0);
    }

    #[test]
    fn one_cell_insertion_on_small_trees() {
        // Sizes 3 and 4; one td insertion: 1 - 1/4.
        let a = seq("<table><tr><td></td></tr></table>");
        let b = seq("<table><tr><td></td><td></td></tr></table>");
        assert_eq!(teds(&a, &b, false), 0.75);
        assert_eq!(teds(&b, &a, false), 0.75);
    }

    #[test]
    fn content_mode_charges_normalized_text_distance() {
        let a = seq("<table><tr><td>ab</td></tr></table>");
        let b = seq("<table><tr><td>ad</td></tr></table>");
        // Equal structure, one differing td: distance 0.5 over 3 nodes.
        assert!((teds(&a, &b, true) - (1.0 - 0.5 / 3.0)).abs() < 1e-12);
        assert_eq!(teds(&a, &b, false), 1.0);
    }

    #[test]
    fn span_mismatch_counts_as_full_substitution() {
        let a = seq("<table><tr><td colspan=\"2\"></td></tr></table>");
        let b = seq("<table><tr><td></td></tr></table>");
        assert!((teds(&a, &b, false) - (1.0 - 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn tree_structure_counts_nodes() {
        let s = seq("<table><tr><td></td><td></td></tr><tr><td></td></tr></table>");
        let t = TableTree::from_markup(&s);
        assert_eq!(t.size(), 6); // table + 2 tr + 3 td
    }

    #[test]
    fn normalized_levenshtein_basics() {
        assert_eq!(normalized_levenshtein("", ""), 0.0);
        assert_eq!(normalized_levenshtein("ab", "ad"), 0.5);
        assert_eq!(normalized_levenshtein("abc", ""), 1.0);
    }
}
