//! Sparse, origin-anchored, axis-aligned voxel grids.

use std::collections::HashSet;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::geom::Point3;

/// Integer cell coordinates `(⌊x/s⌋, ⌊y/s⌋, ⌊z/s⌋)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelKey {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelKey {
    pub fn of(p: &Point3, cell_size: f64) -> Self {
        VoxelKey {
            i: (p.x / cell_size).floor() as i64,
            j: (p.y / cell_size).floor() as i64,
            k: (p.z / cell_size).floor() as i64,
        }
    }

    pub fn center(&self, cell_size: f64) -> Point3 {
        Point3::new(
            (self.i as f64 + 0.5) * cell_size,
            (self.j as f64 + 0.5) * cell_size,
            (self.k as f64 + 0.5) * cell_size,
        )
    }
}

fn check_cell_size(cell_size: f64) -> Result<()> {
    if cell_size > 0.0 && cell_size.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveCellSize(cell_size))
    }
}

/// Map from occupied cell to the indices of its member points.
///
/// Cells iterate in order of first occupancy and member indices are in
/// input order, so a grid built from the same input is always identical.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    cell_size: f64,
    cells: IndexMap<VoxelKey, Vec<u32>>,
}

impl VoxelGrid {
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn get(&self, key: &VoxelKey) -> Option<&[u32]> {
        self.cells.get(key).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelKey, &[u32])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn point_count(&self) -> usize {
        self.cells.values().map(Vec::len).sum()
    }
}

pub fn voxelize<'a>(points: impl IntoIterator<Item = &'a Point3>, cell_size: f64) -> Result<VoxelGrid> {
    check_cell_size(cell_size)?;
    let mut cells: IndexMap<VoxelKey, Vec<u32>> = IndexMap::new();
    for (idx, p) in points.into_iter().enumerate() {
        cells.entry(VoxelKey::of(p, cell_size)).or_default().push(idx as u32);
    }
    Ok(VoxelGrid { cell_size, cells })
}

/// Number of occupied cells, without building the membership lists.
pub fn count_occupied<'a>(points: impl IntoIterator<Item = &'a Point3>, cell_size: f64) -> Result<usize> {
    check_cell_size(cell_size)?;
    let keys: HashSet<VoxelKey> = points.into_iter().map(|p| VoxelKey::of(p, cell_size)).collect();
    Ok(keys.len())
}
