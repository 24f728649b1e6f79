//! Table structure recognition toolkit built around logical coordinates.
//!
//! A table is modelled as a set of cells, each carrying a logical location
//! (inclusive start/end row and column indices) and optionally a spatial
//! quadrilateral in pixel space. From the logical coordinates alone the
//! toolkit derives adjacency relations and markup sequences, evaluates
//! predictions under detection, logical-accuracy, adjacency, TEDS and BLEU
//! metrics, and trains a self-attention regressor that predicts logical
//! locations from spatial geometry.

pub mod grid;
pub mod jsonl;
pub mod markup;
pub mod metrics;
pub mod regressor;
pub mod synth;
pub mod transform;

pub use grid::{LogicalLocation, SpatialQuad, TableCell, TableGrid, ValidationReport};
