//! Axis-major window serialization of a voxel set, cut into equal-size
//! groups.
//!
//! Voxels are assigned to non-overlapping 3D windows of shape
//! `(T_x, T_y, T_z)`, sorted by a composite key that walks windows along the
//! chosen major axis, and the sorted sequence is split into groups of exactly
//! `K` slots. The final group is padded by repeating its last valid voxel;
//! padded slots are masked out on scatter.

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::voxelgrid::VoxelSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    XMajor,
    YMajor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowShape {
    pub tx: i32,
    pub ty: i32,
    pub tz: i32,
}

impl WindowShape {
    pub fn new(tx: i32, ty: i32, tz: i32) -> Result<Self> {
        if tx < 1 || ty < 1 || tz < 1 {
            return Err(CoreError::contract(
                "windowing",
                "WindowShape::new",
                format!("window shape ({tx},{ty},{tz}) must be >= 1 per axis"),
            ));
        }
        Ok(WindowShape { tx, ty, tz })
    }

    /// `(window index, local offset)` per axis.
    #[inline]
    pub fn split(&self, coord: [i32; 3]) -> ([i32; 3], [i32; 3]) {
        let t = [self.tx, self.ty, self.tz];
        let mut win = [0i32; 3];
        let mut local = [0i32; 3];
        for a in 0..3 {
            win[a] = coord[a].div_euclid(t[a]);
            local[a] = coord[a].rem_euclid(t[a]);
        }
        (win, local)
    }
}

/// Composite sort key. For `XMajor` the window walk is `(wy, wz, wx)` with
/// local order `(lz, ly, lx)`, so consecutive windows advance along X;
/// `YMajor` swaps the roles of X and Y. The z window index participates so
/// the key stays total when `T_z` does not cover the full height.
pub fn sort_key(coord: [i32; 3], shape: &WindowShape, axis: Axis) -> [i64; 6] {
    let (w, l) = shape.split(coord);
    match axis {
        Axis::XMajor => [
            w[1] as i64,
            w[2] as i64,
            w[0] as i64,
            l[2] as i64,
            l[1] as i64,
            l[0] as i64,
        ],
        Axis::YMajor => [
            w[0] as i64,
            w[2] as i64,
            w[1] as i64,
            l[2] as i64,
            l[0] as i64,
            l[1] as i64,
        ],
    }
}

/// Serialization of one voxel set for one axis ordering.
#[derive(Clone, Debug)]
pub struct WindowPartition {
    pub axis: Axis,
    /// Permutation of `0..L`: voxel index at each non-padded position.
    pub order: Vec<usize>,
    pub group_size: usize,
    /// Start offset of each group in the padded sequence (`i * K`).
    pub group_starts: Vec<usize>,
    /// One flag per padded slot; `true` marks a replicated slot.
    pub pad_mask: Vec<bool>,
    /// Voxel index per padded slot (replicas repeat the last valid voxel).
    slots: Vec<usize>,
}

impl WindowPartition {
    #[inline]
    pub fn padded_len(&self) -> usize {
        self.slots.len()
    }

    #[inline]
    pub fn num_groups(&self) -> usize {
        self.group_starts.len()
    }

    #[inline]
    pub fn voxel_count(&self) -> usize {
        self.order.len()
    }

    /// Voxel index occupying a padded slot.
    #[inline]
    pub fn slot_voxel(&self, slot: usize) -> usize {
        self.slots[slot]
    }
}

/// Sort voxels by [`sort_key`] and cut the sequence into groups of `K`
/// slots. `L = 0` yields zero groups.
pub fn partition(vs: &VoxelSet, shape: &WindowShape, k: usize, axis: Axis) -> Result<WindowPartition> {
    if k < 1 {
        return Err(CoreError::contract(
            "windowing",
            "partition",
            "group size K must be >= 1",
        ));
    }
    let l = vs.len();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by_key(|&i| sort_key(vs.coord(i), shape, axis));

    let padded = l.div_ceil(k) * k;
    let mut slots = Vec::with_capacity(padded);
    let mut pad_mask = Vec::with_capacity(padded);
    for s in 0..padded {
        if s < l {
            slots.push(order[s]);
            pad_mask.push(false);
        } else {
            slots.push(order[l - 1]);
            pad_mask.push(true);
        }
    }
    let group_starts = (0..padded / k.max(1)).map(|g| g * k).collect();

    Ok(WindowPartition {
        axis,
        order,
        group_size: k,
        group_starts,
        pad_mask,
        slots,
    })
}

/// Read features in serialized order, including padding replicas.
pub fn gather(vs: &VoxelSet, wp: &WindowPartition) -> Mat {
    gather_rows(vs.feats(), wp)
}

/// [`gather`] on a bare feature table (rows indexed like the voxel set the
/// partition was built from).
pub fn gather_rows(feats: &Mat, wp: &WindowPartition) -> Mat {
    let mut out = Mat::zeros(wp.padded_len(), feats.cols());
    for (s, &v) in wp.slots.iter().enumerate() {
        out.copy_row_from(s, feats.row(v));
    }
    out
}

/// Write a serialized feature sequence back to voxel order. Only non-padded
/// slots are written; since they cover every voxel exactly once, the result
/// is fully determined.
pub fn scatter(seq: &Mat, wp: &WindowPartition, vs: &VoxelSet) -> Result<VoxelSet> {
    vs.with_feats(scatter_rows(seq, wp, vs.len())?)
}

/// [`scatter`] to a bare feature table with `l` rows.
pub fn scatter_rows(seq: &Mat, wp: &WindowPartition, l: usize) -> Result<Mat> {
    if seq.rows() != wp.padded_len() {
        return Err(CoreError::contract(
            "windowing",
            "scatter",
            format!("sequence has {} rows, expected {}", seq.rows(), wp.padded_len()),
        ));
    }
    let mut feats = Mat::zeros(l, seq.cols());
    for (s, &v) in wp.slots.iter().enumerate() {
        if !wp.pad_mask[s] {
            feats.copy_row_from(v, seq.row(s));
        }
    }
    Ok(feats)
}

/// Gradient of [`gather`]: scatter-add rows back to voxel order (padding
/// replicas contribute to their source voxel).
pub fn gather_backward(grad_seq: &Mat, wp: &WindowPartition, l: usize) -> Mat {
    let mut grad = Mat::zeros(l, grad_seq.cols());
    for (s, &v) in wp.slots.iter().enumerate() {
        let row = grad_seq.row(s);
        let acc = grad.row_mut(v);
        for (a, b) in acc.iter_mut().zip(row) {
            *a += b;
        }
    }
    grad
}

/// Gradient of [`scatter`]: gather voxel gradients into non-padded slots;
/// padded slots receive zero.
pub fn scatter_backward(grad_feats: &Mat, wp: &WindowPartition) -> Mat {
    let mut grad = Mat::zeros(wp.padded_len(), grad_feats.cols());
    for (s, &v) in wp.slots.iter().enumerate() {
        if !wp.pad_mask[s] {
            grad.copy_row_from(s, grad_feats.row(v));
        }
    }
    grad
}
