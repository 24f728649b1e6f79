//! Derivations from logical coordinates: adjacency relations, adjacency
//! matrices and markup sequences, plus the inverse markup parse.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::grid::{GridError, LogicalLocation, TableCell, TableGrid};
use crate::markup::{MarkupError, MarkupSequence, Token};

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("invalid grid: {0}")]
    InvalidGrid(#[from] GridError),
    #[error("markup error: {0}")]
    Parse(#[from] MarkupError),
    #[error("cell {cell} cannot be placed: spans collide at row {row}, column {col}")]
    Placement { cell: usize, row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Horizontal,
    Vertical,
}

/// Ordered immediate-neighbor relation: for `Horizontal`, `i` is immediately
/// right of `j`; for `Vertical`, `i` is immediately under `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct AdjacencyPair {
    pub i: usize,
    pub j: usize,
    pub direction: Direction,
}

/// Entry of the cell-pair adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyKind {
    None,
    Horizontal,
    Vertical,
}

/// Computes the ordered horizontal and vertical adjacency sets by scanning
/// neighboring slots of the occupancy matrix. Two cells are horizontally
/// adjacent when their row spans intersect and the right cell's start column
/// immediately follows the left cell's end column; vertically by the same
/// rule with rows and columns swapped.
pub fn adjacency_pairs(
    grid: &TableGrid,
) -> Result<(BTreeSet<AdjacencyPair>, BTreeSet<AdjacencyPair>), TransformError> {
    let occ = grid.occupancy()?;
    let mut horizontal = BTreeSet::new();
    let mut vertical = BTreeSet::new();
    for r in 0..occ.rows {
        for c in 0..occ.cols {
            let Some(here) = occ.get(r, c) else { continue };
            if c + 1 < occ.cols {
                if let Some(right) = occ.get(r, c + 1) {
                    if right != here {
                        horizontal.insert(AdjacencyPair {
                            i: right,
                            j: here,
                            direction: Direction::Horizontal,
                        });
                    }
                }
            }
            if r + 1 < occ.rows {
                if let Some(below) = occ.get(r + 1, c) {
                    if below != here {
                        vertical.insert(AdjacencyPair {
                            i: below,
                            j: here,
                            direction: Direction::Vertical,
                        });
                    }
                }
            }
        }
    }
    Ok((horizontal, vertical))
}

/// Symmetric N x N adjacency matrix over cell positions in `grid.cells`
/// order; connected pairs share their direction label.
pub fn adjacency_matrix(grid: &TableGrid) -> Result<Vec<Vec<AdjacencyKind>>, TransformError> {
    let n = grid.cells.len();
    let index_of = |id: usize| grid.cells.iter().position(|c| c.id == id).expect("known id");
    let mut matrix = vec![vec![AdjacencyKind::None; n]; n];
    let (horizontal, vertical) = adjacency_pairs(grid)?;
    for pair in horizontal.iter().chain(vertical.iter()) {
        let kind = match pair.direction {
            Direction::Horizontal => AdjacencyKind::Horizontal,
            Direction::Vertical => AdjacencyKind::Vertical,
        };
        let (a, b) = (index_of(pair.i), index_of(pair.j));
        matrix[a][b] = kind;
        matrix[b][a] = kind;
    }
    Ok(matrix)
}

/// Emits the markup sequence row-major from the occupancy matrix. A `<td>`
/// appears where a slot is the anchor of its cell; covered slots are
/// skipped; uncovered slots become empty filler cells.
pub fn to_markup(grid: &TableGrid, content_mode: bool) -> Result<MarkupSequence, TransformError> {
    let occ = grid.occupancy()?;
    let mut tokens = vec![Token::TableOpen];
    for r in 0..occ.rows {
        tokens.push(Token::RowOpen);
        for c in 0..occ.cols {
            match occ.get(r, c) {
                Some(id) => {
                    let cell = grid.cell(id).expect("occupancy ids come from the grid");
                    let loc = &cell.logical;
                    if loc.row_start != r || loc.col_start != c {
                        continue; // covered by an anchor emitted earlier
                    }
                    tokens.push(Token::CellOpen {
                        rowspan: loc.row_span(),
                        colspan: loc.col_span(),
                    });
                    if content_mode {
                        if let Some(text) = cell.content.as_deref().filter(|t| !t.is_empty()) {
                            tokens.push(Token::Text(text.to_string()));
                        }
                    }
                    tokens.push(Token::CellClose);
                }
                None => {
                    tokens.push(Token::CellOpen { rowspan: 1, colspan: 1 });
                    tokens.push(Token::CellClose);
                }
            }
        }
        tokens.push(Token::RowClose);
    }
    tokens.push(Token::TableClose);
    Ok(MarkupSequence { tokens })
}

/// Rebuilds a grid from markup using standard HTML table placement: each
/// `<td>` lands at the leftmost free column of its row and claims
/// rowspan x colspan slots tracked by per-column occupied-until counters.
pub fn from_markup(seq: &MarkupSequence) -> Result<TableGrid, TransformError> {
    let mut cells: Vec<TableCell> = Vec::new();
    // occupied_until[c] is the first row at which column c is free again
    let mut occupied_until: Vec<usize> = Vec::new();
    let mut row = 0usize;
    let mut col = 0usize;
    let mut in_row = false;
    for token in &seq.tokens {
        match token {
            Token::TableOpen | Token::TableClose => {}
            Token::RowOpen => {
                in_row = true;
                col = 0;
            }
            Token::RowClose => {
                in_row = false;
                row += 1;
            }
            Token::CellOpen { rowspan, colspan } => {
                debug_assert!(in_row, "parser guarantees nesting");
                while occupied_until.get(col).is_some_and(|&until| until > row) {
                    col += 1;
                }
                let id = cells.len();
                for c in col..col + colspan {
                    if occupied_until.get(c).is_some_and(|&until| until > row) {
                        return Err(TransformError::Placement { cell: id, row, col: c });
                    }
                }
                if occupied_until.len() < col + colspan {
                    occupied_until.resize(col + colspan, 0);
                }
                for c in col..col + colspan {
                    occupied_until[c] = row + rowspan;
                }
                let logical =
                    LogicalLocation::new(row, row + rowspan - 1, col, col + colspan - 1);
                cells.push(TableCell::new(id, logical));
                col += colspan;
            }
            Token::Text(text) => {
                if !text.is_empty() {
                    let cell = cells.last_mut().expect("text follows a cell open");
                    match &mut cell.content {
                        Some(existing) => existing.push_str(text),
                        none => *none = Some(text.clone()),
                    }
                }
            }
            Token::CellClose => {}
        }
    }
    Ok(TableGrid { cells, image_size: None })
}
