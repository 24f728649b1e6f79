//! JSONL interchange: one table per line, cells with logical spans and
//! optional quads and content.

use std::io::{BufRead, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{GridError, TableGrid};

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {source}")]
    Grid {
        line: usize,
        #[source]
        source: GridError,
    },
}

pub fn read_grids<R: BufRead>(reader: R) -> Result<Vec<TableGrid>, JsonlError> {
    let mut grids = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let grid: TableGrid = serde_json::from_str(&line)
            .map_err(|source| JsonlError::Parse { line: line_no, source })?;
        // Re-run the constructor checks; serde bypasses them.
        let grid = TableGrid::new(grid.cells, grid.image_size)
            .map_err(|source| JsonlError::Grid { line: line_no, source })?;
        grids.push(grid);
    }
    Ok(grids)
}

pub fn read_grids_from_path(path: &Path) -> Result<Vec<TableGrid>, JsonlError> {
    let file = std::fs::File::open(path)?;
    read_grids(std::io::BufReader::new(file))
}

pub fn write_grids<W: Write>(mut writer: W, grids: &[TableGrid]) -> Result<(), JsonlError> {
    for grid in grids {
        let line = serde_json::to_string(grid).expect("grid serialization is infallible");
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

pub fn write_grids_to_path(path: &Path, grids: &[TableGrid]) -> Result<(), JsonlError> {
    let file = std::fs::File::create(path)?;
    write_grids(std::io::BufWriter::new(file), grids)
}
