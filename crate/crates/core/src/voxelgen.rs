//! Voxel generation: unsupervised foreground selection by channel-mean
//! response, followed by four-offset diffusion of zero-feature voxels that
//! the next block fills autoregressively.

use crate::error::Result;
use crate::linalg::Mat;
use crate::voxelgrid::{GridGeometry, VoxelSet};

/// The four diagonal in-plane diffusion offsets, in concatenation order.
pub const DIFFUSION_OFFSETS: [[i32; 3]; 4] = [[-1, -1, 0], [1, 1, 0], [1, -1, 0], [-1, 1, 0]];

#[derive(Clone, Copy, Debug)]
pub struct DiffusionSpec {
    /// Foreground ratio in `[0, 1]`; `m = floor(r * L)` voxels are selected.
    pub ratio: f64,
}

impl DiffusionSpec {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(crate::error::CoreError::contract(
                "voxelgen",
                "DiffusionSpec::new",
                format!("ratio {ratio} outside [0, 1]"),
            ));
        }
        Ok(DiffusionSpec { ratio })
    }
}

/// Per-voxel response: arithmetic mean over the channel axis.
pub fn feature_response(vs: &VoxelSet) -> Vec<f64> {
    let c = vs.dim().max(1) as f64;
    (0..vs.len())
        .map(|i| vs.feats().row(i).iter().sum::<f64>() / c)
        .collect()
}

/// Indices of the `floor(r*L)` largest responses, descending; ties broken by
/// lexicographically smaller coordinate.
pub fn select_foreground(vs: &VoxelSet, resp: &[f64], ratio: f64) -> Vec<usize> {
    debug_assert_eq!(resp.len(), vs.len());
    let m = (ratio * vs.len() as f64).floor() as usize;
    if m == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..vs.len()).collect();
    idx.sort_by(|&a, &b| {
        resp[b]
            .partial_cmp(&resp[a])
            .expect("finite responses")
            .then_with(|| vs.coord(a).cmp(&vs.coord(b)))
    });
    idx.truncate(m);
    idx
}

/// Append zero-feature voxels at the four diagonal offsets around each
/// selected voxel. Candidates outside the grid, colliding with existing
/// voxels, or duplicating an earlier candidate are dropped; the first
/// occurrence in (selection order, offset order) claims a coordinate.
/// Output order: original voxels first, then survivors grouped by offset.
pub fn diffuse(
    vs: &VoxelSet,
    selected: &[usize],
    spec: &DiffusionSpec,
    geom: &GridGeometry,
) -> Result<VoxelSet> {
    let _ = spec;
    // First pass decides which (selected, offset) pair owns each new
    // coordinate.
    let mut owner: std::collections::HashMap<[i32; 3], (usize, usize)> = Default::default();
    for (si, &v) in selected.iter().enumerate() {
        let base = vs.coord(v);
        for (oi, off) in DIFFUSION_OFFSETS.iter().enumerate() {
            let cand = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
            if !geom.contains_cell(cand) || vs.lookup(cand).is_some() {
                continue;
            }
            owner.entry(cand).or_insert((si, oi));
        }
    }

    // Second pass emits survivors grouped by offset, selection order within
    // each group.
    let mut new_coords: Vec<[i32; 3]> = Vec::with_capacity(owner.len());
    for (oi, off) in DIFFUSION_OFFSETS.iter().enumerate() {
        for (si, &v) in selected.iter().enumerate() {
            let base = vs.coord(v);
            let cand = [base[0] + off[0], base[1] + off[1], base[2] + off[2]];
            if owner.get(&cand) == Some(&(si, oi)) {
                new_coords.push(cand);
            }
        }
    }

    let mut coords = vs.coords().to_vec();
    coords.extend_from_slice(&new_coords);
    let mut feats = Mat::zeros(coords.len(), vs.dim());
    for i in 0..vs.len() {
        feats.copy_row_from(i, vs.feats().row(i));
    }
    VoxelSet::from_parts(coords, feats)
}

/// Select, diffuse, and run `next_block` over the concatenated set so the
/// autoregressive scans populate the zero slots from grouped context.
pub fn generate(
    vs: &VoxelSet,
    spec: &DiffusionSpec,
    geom: &GridGeometry,
    next_block: &crate::block::Block,
) -> Result<VoxelSet> {
    let resp = feature_response(vs);
    let selected = select_foreground(vs, &resp, spec.ratio);
    let diffused = diffuse(vs, &selected, spec, geom)?;
    next_block.forward(&diffused)
}

/// Dense BEV response field: per `(x, y)` column, the max response over z.
/// Cells with no voxels read 0.
pub fn bev_response_grid(vs: &VoxelSet, resp: &[f64], geom: &GridGeometry) -> Mat {
    let [h, w, _] = geom.extents();
    let mut grid = Mat::zeros(h as usize, w as usize);
    let mut seen = vec![false; (h * w) as usize];
    for (i, &c) in vs.coords().iter().enumerate() {
        let cell = (c[0] * w + c[1]) as usize;
        let cur = grid.as_slice()[cell];
        if !seen[cell] || resp[i] > cur {
            grid.as_mut_slice()[cell] = resp[i];
            seen[cell] = true;
        }
    }
    grid
}
