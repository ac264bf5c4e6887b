//! Voxel merging (down-sampling) and voxel expanding (up-sampling) through
//! explicit index mappings.
//!
//! Merging floor-divides coordinates by the stride and mean-pools features
//! per coarse cell; expanding broadcasts coarse features back to the
//! recorded fine coordinates. The stride-(2,2,2) variant is used inside a
//! block, stride (1,1,2) between blocks (height only).

use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::voxelgrid::VoxelSet;

#[derive(Clone, Debug)]
pub struct MergeMapping {
    pub stride: [i32; 3],
    /// Coarse index for every fine voxel (total, surjective).
    pub fine_to_coarse: Vec<usize>,
    /// Fine children per coarse voxel; sums to the fine count.
    pub coarse_counts: Vec<u32>,
    /// Original fine coordinates, in input order (needed to invert).
    fine_coords: Vec<[i32; 3]>,
    /// Coordinates of the coarse set this mapping produced.
    coarse_coords: Vec<[i32; 3]>,
}

impl MergeMapping {
    pub fn fine_len(&self) -> usize {
        self.fine_to_coarse.len()
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_counts.len()
    }
}

fn validate_stride(stride: [i32; 3], op: &'static str) -> Result<()> {
    if stride.iter().any(|&s| s != 1 && s != 2) {
        return Err(CoreError::contract(
            "hierarchy",
            op,
            format!("stride components must be 1 or 2, got {stride:?}"),
        ));
    }
    Ok(())
}

/// Down-sample: coarse coords are distinct floor-divided fine coords, coarse
/// features are the mean of their children. Children are reduced in fine
/// index order so the mean is deterministic.
pub fn merge(vs: &VoxelSet, stride: [i32; 3]) -> Result<(VoxelSet, MergeMapping)> {
    validate_stride(stride, "merge")?;
    let fine_len = vs.len();

    let coarse_of = |c: [i32; 3]| {
        [
            c[0].div_euclid(stride[0]),
            c[1].div_euclid(stride[1]),
            c[2].div_euclid(stride[2]),
        ]
    };

    // Deterministic coarse ordering: sorted lexicographically.
    let mut coarse_coords: Vec<[i32; 3]> = vs.coords().iter().map(|&c| coarse_of(c)).collect();
    coarse_coords.sort_unstable();
    coarse_coords.dedup();

    let coarse_index: std::collections::HashMap<[i32; 3], usize> = coarse_coords
        .iter()
        .enumerate()
        .map(|(i, &c)| (c, i))
        .collect();

    let mut fine_to_coarse = vec![0usize; fine_len];
    let mut coarse_counts = vec![0u32; coarse_coords.len()];
    let mut feats = Mat::zeros(coarse_coords.len(), vs.dim());
    for i in 0..fine_len {
        let j = coarse_index[&coarse_of(vs.coord(i))];
        fine_to_coarse[i] = j;
        coarse_counts[j] += 1;
        let src = vs.feats().row(i);
        let dst = feats.row_mut(j);
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    for (j, &n) in coarse_counts.iter().enumerate() {
        let inv = 1.0 / n as f64;
        for v in feats.row_mut(j) {
            *v *= inv;
        }
    }

    let coarse = VoxelSet::from_parts(coarse_coords.clone(), feats)?;
    Ok((
        coarse,
        MergeMapping {
            stride,
            fine_to_coarse,
            coarse_counts,
            fine_coords: vs.coords().to_vec(),
            coarse_coords,
        },
    ))
}

/// Up-sample: broadcast each coarse feature to its fine children, restoring
/// exactly the original fine coordinates.
pub fn expand(coarse: &VoxelSet, m: &MergeMapping) -> Result<VoxelSet> {
    if coarse.coords() != &m.coarse_coords[..] {
        return Err(CoreError::contract(
            "hierarchy",
            "expand",
            "coarse set does not match the mapping that produced it",
        ));
    }
    let mut feats = Mat::zeros(m.fine_len(), coarse.dim());
    for (i, &j) in m.fine_to_coarse.iter().enumerate() {
        feats.copy_row_from(i, coarse.feats().row(j));
    }
    VoxelSet::from_parts(m.fine_coords.clone(), feats)
}

/// VJP of the mean-pool in [`merge`]: each child receives `1/count` of its
/// coarse gradient.
pub fn merge_backward(grad_coarse: &Mat, m: &MergeMapping) -> Mat {
    let mut grad_fine = Mat::zeros(m.fine_len(), grad_coarse.cols());
    for (i, &j) in m.fine_to_coarse.iter().enumerate() {
        let inv = 1.0 / m.coarse_counts[j] as f64;
        let src = grad_coarse.row(j);
        let dst = grad_fine.row_mut(i);
        for (a, b) in dst.iter_mut().zip(src) {
            *a = b * inv;
        }
    }
    grad_fine
}

/// VJP of the broadcast in [`expand`]: scatter-sum fine gradients onto their
/// coarse parent, in fine index order.
pub fn expand_backward(grad_fine: &Mat, m: &MergeMapping) -> Mat {
    let mut grad_coarse = Mat::zeros(m.coarse_len(), grad_fine.cols());
    for (i, &j) in m.fine_to_coarse.iter().enumerate() {
        let src = grad_fine.row(i);
        let dst = grad_coarse.row_mut(j);
        for (a, b) in dst.iter_mut().zip(src) {
            *a += b;
        }
    }
    grad_coarse
}
