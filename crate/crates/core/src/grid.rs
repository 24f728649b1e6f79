//! Logical-grid data model: cells with inclusive grid-index spans, optional
//! spatial quads, validation and occupancy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker for an uncovered slot in an [`Occupancy`] matrix.
pub const EMPTY: Option<usize> = None;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("cell id {0} appears more than once")]
    DuplicateId(usize),
    #[error("cells {a} and {b} overlap at slot ({row}, {col})")]
    Overlap { a: usize, b: usize, row: usize, col: usize },
    #[error("cell {id} has a malformed logical location {loc:?}")]
    MalformedLocation { id: usize, loc: LogicalLocation },
    #[error("quad must have positive area")]
    DegenerateQuad,
    #[error("quad coordinates must be finite and non-negative")]
    BadQuadCoordinates,
}

/// Inclusive grid span of a cell: start/end row and start/end column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct LogicalLocation {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl From<[usize; 4]> for LogicalLocation {
    fn from([row_start, row_end, col_start, col_end]: [usize; 4]) -> Self {
        Self { row_start, row_end, col_start, col_end }
    }
}

impl From<LogicalLocation> for [usize; 4] {
    fn from(l: LogicalLocation) -> Self {
        [l.row_start, l.row_end, l.col_start, l.col_end]
    }
}

impl LogicalLocation {
    pub fn new(row_start: usize, row_end: usize, col_start: usize, col_end: usize) -> Self {
        Self { row_start, row_end, col_start, col_end }
    }

    /// A location is well formed when both spans are non-empty intervals.
    pub fn is_well_formed(&self) -> bool {
        self.row_start <= self.row_end && self.col_start <= self.col_end
    }

    pub fn row_span(&self) -> usize {
        self.row_end + 1 - self.row_start
    }

    pub fn col_span(&self) -> usize {
        self.col_end + 1 - self.col_start
    }

    /// Spanning cells cover more than one row or column.
    pub fn is_spanning(&self) -> bool {
        self.row_span() > 1 || self.col_span() > 1
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.row_start <= row && row <= self.row_end && self.col_start <= col && col <= self.col_end
    }

    pub fn intersects(&self, other: &LogicalLocation) -> bool {
        self.row_start <= other.row_end
            && other.row_start <= self.row_end
            && self.col_start <= other.col_end
            && other.col_start <= self.col_end
    }
}

/// Four corner points of a cell in pixel space, ordered top-left, top-right,
/// bottom-right, bottom-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 2]; 4]", into = "[[f64; 2]; 4]")]
pub struct SpatialQuad {
    pub corners: [[f64; 2]; 4],
}

impl TryFrom<[[f64; 2]; 4]> for SpatialQuad {
    type Error = GridError;
    fn try_from(corners: [[f64; 2]; 4]) -> Result<Self, GridError> {
        SpatialQuad::new(corners)
    }
}

impl From<SpatialQuad> for [[f64; 2]; 4] {
    fn from(q: SpatialQuad) -> Self {
        q.corners
    }
}

impl SpatialQuad {
    pub fn new(corners: [[f64; 2]; 4]) -> Result<Self, GridError> {
        for [x, y] in &corners {
            if !x.is_finite() || !y.is_finite() || *x < 0.0 || *y < 0.0 {
                return Err(GridError::BadQuadCoordinates);
            }
        }
        let quad = Self { corners };
        if quad.area() <= 0.0 {
            return Err(GridError::DegenerateQuad);
        }
        Ok(quad)
    }

    /// Shoelace area of the corner polygon.
    pub fn area(&self) -> f64 {
        let c = &self.corners;
        let mut twice = 0.0;
        for k in 0..4 {
            let [x0, y0] = c[k];
            let [x1, y1] = c[(k + 1) % 4];
            twice += x0 * y1 - x1 * y0;
        }
        twice.abs() / 2.0
    }

    /// The cell center: mean of the four corners.
    pub fn centroid(&self) -> [f64; 2] {
        let mut cx = 0.0;
        let mut cy = 0.0;
        for [x, y] in &self.corners {
            cx += x;
            cy += y;
        }
        [cx / 4.0, cy / 4.0]
    }

    /// Axis-aligned bounding box as (min_x, min_y, max_x, max_y).
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let xs = self.corners.iter().map(|c| c[0]);
        let ys = self.corners.iter().map(|c| c[1]);
        (
            xs.clone().fold(f64::INFINITY, f64::min),
            ys.clone().fold(f64::INFINITY, f64::min),
            xs.fold(f64::NEG_INFINITY, f64::max),
            ys.fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub id: usize,
    pub logical: LogicalLocation,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad: Option<SpatialQuad>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl TableCell {
    pub fn new(id: usize, logical: LogicalLocation) -> Self {
        Self { id, logical, quad: None, content: None }
    }

    pub fn with_quad(mut self, quad: SpatialQuad) -> Self {
        self.quad = Some(quad);
        self
    }

    pub fn with_content(mut self, content: impl Into<String>) -> Self {
        self.content = Some(content.into());
        self
    }
}

/// A table: a set of cells with logical locations, plus the source image
/// size when spatial quads are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub cells: Vec<TableCell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[f64; 2]>,
}

impl TableGrid {
    /// Builds a grid, rejecting duplicate cell ids.
    pub fn new(cells: Vec<TableCell>, image_size: Option<[f64; 2]>) -> Result<Self, GridError> {
        let mut seen = std::collections::HashSet::new();
        for cell in &cells {
            if !seen.insert(cell.id) {
                return Err(GridError::DuplicateId(cell.id));
            }
        }
        Ok(Self { cells, image_size })
    }

    /// Convenience constructor for tests and generators: cells get ids 0..n.
    pub fn from_locations(locations: impl IntoIterator<Item = LogicalLocation>) -> Self {
        let cells = locations
            .into_iter()
            .enumerate()
            .map(|(id, logical)| TableCell::new(id, logical))
            .collect();
        Self { cells, image_size: None }
    }

    pub fn cell(&self, id: usize) -> Option<&TableCell> {
        self.cells.iter().find(|c| c.id == id)
    }

    /// Grid shape `(rows, cols)`: maxima of the end indices plus one, or
    /// `(0, 0)` for an empty grid.
    pub fn dimensions(&self) -> (usize, usize) {
        let rows = self.cells.iter().map(|c| c.logical.row_end + 1).max().unwrap_or(0);
        let cols = self.cells.iter().map(|c| c.logical.col_end + 1).max().unwrap_or(0);
        (rows, cols)
    }

    /// Checks logical-location well-formedness, pairwise mutual exclusion and
    /// slot coverage. Nothing is thrown; every problem lands in the report.
    pub fn validate(&self) -> ValidationReport {
        let mut overlaps = Vec::new();
        let mut out_of_bounds = Vec::new();
        for cell in &self.cells {
            if !cell.logical.is_well_formed() {
                out_of_bounds.push(cell.id);
            }
        }
        let well_formed: Vec<&TableCell> =
            self.cells.iter().filter(|c| c.logical.is_well_formed()).collect();
        for (a_idx, a) in well_formed.iter().enumerate() {
            for b in &well_formed[a_idx + 1..] {
                if a.logical.intersects(&b.logical) {
                    overlaps.push((a.id, b.id));
                }
            }
        }
        let (rows, cols) = self.dimensions();
        let mut covered = vec![false; rows * cols];
        for cell in &well_formed {
            for r in cell.logical.row_start..=cell.logical.row_end {
                for c in cell.logical.col_start..=cell.logical.col_end {
                    covered[r * cols + c] = true;
                }
            }
        }
        let holes = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .filter(|&(r, c)| !covered[r * cols + c])
            .collect::<Vec<_>>();
        ValidationReport { valid: overlaps.is_empty() && out_of_bounds.is_empty(), overlaps, out_of_bounds, holes }
    }

    /// Maps every slot of the bounding dimensions to the covering cell id.
    pub fn occupancy(&self) -> Result<Occupancy, GridError> {
        let (rows, cols) = self.dimensions();
        let mut slots: Vec<Option<usize>> = vec![EMPTY; rows * cols];
        for cell in &self.cells {
            if !cell.logical.is_well_formed() {
                return Err(GridError::MalformedLocation { id: cell.id, loc: cell.logical });
            }
            for r in cell.logical.row_start..=cell.logical.row_end {
                for c in cell.logical.col_start..=cell.logical.col_end {
                    let slot = &mut slots[r * cols + c];
                    if let Some(other) = *slot {
                        return Err(GridError::Overlap { a: other, b: cell.id, row: r, col: c });
                    }
                    *slot = Some(cell.id);
                }
            }
        }
        Ok(Occupancy { rows, cols, slots })
    }
}

/// Row-major slot matrix; each slot holds the covering cell id or [`EMPTY`].
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    pub rows: usize,
    pub cols: usize,
    slots: Vec<Option<usize>>,
}

impl Occupancy {
    pub fn get(&self, row: usize, col: usize) -> Option<usize> {
        self.slots[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[Option<usize>] {
        &self.slots[row * self.cols..(row + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub overlaps: Vec<(usize, usize)>,
    pub out_of_bounds: Vec<usize>,
    pub holes: Vec<(usize, usize)>,
}
