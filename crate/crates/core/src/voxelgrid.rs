//! Sparse voxel grid: point-cloud voxelization and the coordinate-indexed
//! feature table every other module operates on.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::linalg::Mat;

/// One lidar return: position in meters plus a unitless intensity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

/// Perception range and voxel size; extents are derived as
/// `ceil(span / voxel_size)` per axis (with a tiny slack so that exact
/// integer spans do not round up from float noise).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridGeometry {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub voxel_size: [f64; 3],
    extents: [i32; 3],
}

impl GridGeometry {
    pub fn new(range_min: [f64; 3], range_max: [f64; 3], voxel_size: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(voxel_size[a] > 0.0) {
                return Err(CoreError::contract(
                    "voxelgrid",
                    "GridGeometry::new",
                    format!("voxel_size[{a}] = {} must be positive", voxel_size[a]),
                ));
            }
            if !(range_max[a] > range_min[a]) {
                return Err(CoreError::contract(
                    "voxelgrid",
                    "GridGeometry::new",
                    format!("range_max[{a}] must exceed range_min[{a}]"),
                ));
            }
        }
        let mut extents = [0i32; 3];
        for a in 0..3 {
            let span = range_max[a] - range_min[a];
            let cells = (span / voxel_size[a] - 1e-9).ceil();
            if cells < 1.0 || cells > i32::MAX as f64 {
                return Err(CoreError::contract(
                    "voxelgrid",
                    "GridGeometry::new",
                    format!("axis {a} extent {cells} out of range"),
                ));
            }
            extents[a] = cells as i32;
        }
        Ok(GridGeometry {
            range_min,
            range_max,
            voxel_size,
            extents,
        })
    }

    /// `(H, W, D)`: cell counts along X, Y, Z.
    #[inline]
    pub fn extents(&self) -> [i32; 3] {
        self.extents
    }

    #[inline]
    pub fn contains_cell(&self, c: [i32; 3]) -> bool {
        (0..3).all(|a| c[a] >= 0 && c[a] < self.extents[a])
    }

    /// Half-open binning: `floor((p - range_min) / voxel_size)`; `None` when
    /// any axis lands outside `[0, extent)`, so a point exactly on
    /// `range_max` is dropped.
    pub fn cell_of(&self, p: &Point) -> Option<[i32; 3]> {
        let pos = [p.x, p.y, p.z];
        let mut cell = [0i32; 3];
        for a in 0..3 {
            let idx = ((pos[a] - self.range_min[a]) / self.voxel_size[a]).floor();
            if idx < 0.0 || idx >= self.extents[a] as f64 {
                return None;
            }
            cell[a] = idx as i32;
        }
        Some(cell)
    }

    /// Center of a cell in meters.
    pub fn cell_center(&self, c: [i32; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = self.range_min[a] + (c[a] as f64 + 0.5) * self.voxel_size[a];
        }
        out
    }
}

/// Coordinate table shared (via `Arc`) by all voxel sets that have the same
/// occupancy pattern, plus the hash lookup used for neighbor queries.
#[derive(Debug)]
pub struct CoordIndex {
    coords: Vec<[i32; 3]>,
    lookup: HashMap<[i32; 3], usize>,
    /// Points that fell into each voxel at voxelization time; `None` for
    /// derived sets.
    point_counts: Option<Vec<u32>>,
}

impl CoordIndex {
    fn build(coords: Vec<[i32; 3]>, point_counts: Option<Vec<u32>>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(coords.len());
        for (i, &c) in coords.iter().enumerate() {
            if lookup.insert(c, i).is_some() {
                return Err(CoreError::contract(
                    "voxelgrid",
                    "CoordIndex::build",
                    format!("duplicate coordinate {c:?}"),
                ));
            }
        }
        Ok(CoordIndex {
            coords,
            lookup,
            point_counts,
        })
    }
}

/// Sparse set of occupied voxels with one feature row per voxel.
///
/// Immutable after construction; cheap to clone (coordinates are shared).
#[derive(Clone, Debug)]
pub struct VoxelSet {
    index: Arc<CoordIndex>,
    feats: Mat,
}

impl VoxelSet {
    pub fn from_parts(coords: Vec<[i32; 3]>, feats: Mat) -> Result<Self> {
        if coords.len() != feats.rows() {
            return Err(CoreError::contract(
                "voxelgrid",
                "VoxelSet::from_parts",
                format!("{} coords vs {} feature rows", coords.len(), feats.rows()),
            ));
        }
        Ok(VoxelSet {
            index: Arc::new(CoordIndex::build(coords, None)?),
            feats,
        })
    }

    pub fn empty(dim: usize) -> Self {
        VoxelSet {
            index: Arc::new(CoordIndex::build(Vec::new(), None).expect("empty index")),
            feats: Mat::zeros(0, dim),
        }
    }

    /// Same occupancy, new features. Row count must match.
    pub fn with_feats(&self, feats: Mat) -> Result<Self> {
        if feats.rows() != self.len() {
            return Err(CoreError::contract(
                "voxelgrid",
                "VoxelSet::with_feats",
                format!("{} rows for {} voxels", feats.rows(), self.len()),
            ));
        }
        Ok(VoxelSet {
            index: Arc::clone(&self.index),
            feats,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.index.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension `C`.
    #[inline]
    pub fn dim(&self) -> usize {
        self.feats.cols()
    }

    #[inline]
    pub fn coords(&self) -> &[[i32; 3]] {
        &self.index.coords
    }

    #[inline]
    pub fn coord(&self, i: usize) -> [i32; 3] {
        self.index.coords[i]
    }

    #[inline]
    pub fn feats(&self) -> &Mat {
        &self.feats
    }

    pub fn feats_mut(&mut self) -> &mut Mat {
        &mut self.feats
    }

    pub fn into_feats(self) -> Mat {
        self.feats
    }

    /// Index of an occupied coordinate; absence is a value, not an error.
    #[inline]
    pub fn lookup(&self, coord: [i32; 3]) -> Option<usize> {
        self.index.lookup.get(&coord).copied()
    }

    /// Per-voxel point counts from voxelization, when this set came straight
    /// from [`voxelize`] (or shares its occupancy).
    pub fn point_counts(&self) -> Option<&[u32]> {
        self.index.point_counts.as_deref()
    }

    pub fn share_coords_with(&self, other: &VoxelSet) -> bool {
        Arc::ptr_eq(&self.index, &other.index)
    }
}

/// Convert a point cloud into a sparse voxel set.
///
/// Each occupied voxel's feature is `[mean x-offset, mean y-offset, mean
/// z-offset, mean intensity]` zero-padded to `init_dim`, where offsets are
/// relative to the voxel center and expressed in voxel-size units. Points
/// outside the half-open range are dropped. Output voxels are sorted
/// lexicographically by coordinate, and points are reduced in (voxel,
/// original index) order, so the result is independent of input point order.
pub fn voxelize(pc: &PointCloud, geom: &GridGeometry, init_dim: usize) -> Result<VoxelSet> {
    if init_dim < 4 {
        return Err(CoreError::contract(
            "voxelgrid",
            "voxelize",
            format!("init_dim {init_dim} < 4"),
        ));
    }

    let mut binned: Vec<([i32; 3], usize)> = Vec::with_capacity(pc.points.len());
    for (i, p) in pc.points.iter().enumerate() {
        if let Some(cell) = geom.cell_of(p) {
            binned.push((cell, i));
        }
    }
    binned.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut coords: Vec<[i32; 3]> = Vec::new();
    let mut counts: Vec<u32> = Vec::new();
    let mut sums: Vec<[f64; 4]> = Vec::new();
    for &(cell, pi) in &binned {
        if coords.last() != Some(&cell) {
            coords.push(cell);
            counts.push(0);
            sums.push([0.0; 4]);
        }
        let p = &pc.points[pi];
        let center = geom.cell_center(cell);
        let s = sums.last_mut().expect("non-empty");
        s[0] += (p.x - center[0]) / geom.voxel_size[0];
        s[1] += (p.y - center[1]) / geom.voxel_size[1];
        s[2] += (p.z - center[2]) / geom.voxel_size[2];
        s[3] += p.intensity;
        *counts.last_mut().expect("non-empty") += 1;
    }

    let mut feats = Mat::zeros(coords.len(), init_dim);
    for (i, (s, &n)) in sums.iter().zip(counts.iter()).enumerate() {
        let inv = 1.0 / n as f64;
        let row = feats.row_mut(i);
        for k in 0..4 {
            row[k] = s[k] * inv;
        }
    }

    Ok(VoxelSet {
        index: Arc::new(CoordIndex::build(coords, Some(counts))?),
        feats,
    })
}
