//! Layers, blocks, and the N-block backbone.
//!
//! A layer runs two operator passes — one over the X-axis window order, one
//! over the Y-axis order — each as pre-norm + bidirectional scan + residual.
//! A block is the hierarchical arrangement: layer at 1×, descriptor, merge
//! (2,2,2), layer at ½×, descriptor, merge, layer at ¼×, expand (+ residual),
//! layer at ½×, expand (+ residual), so output coords equal input coords.
//! The backbone voxelizes, embeds, and alternates blocks with voxel
//! generation and height-only merges.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{CoreError, Result};
use crate::hierarchy::{expand, expand_backward, merge, merge_backward, MergeMapping};
use crate::linalg::{matvec, matvec_t, outer_acc, Mat};
use crate::linear_rnn::{bidir_apply, bidir_backward_vjp, BiDirParams, OperatorKind};
use crate::params::{join, ParamSet};
use crate::spatial::{
    descriptor, descriptor_backward, layer_norm_backward, layer_norm_cached, DescriptorParams,
    NormParams,
};
use crate::voxelgen::{diffuse, feature_response, select_foreground, DiffusionSpec};
use crate::voxelgrid::{voxelize, GridGeometry, PointCloud, VoxelSet};
use crate::windowing::{
    gather_backward, gather_rows, partition, scatter_backward, scatter_rows, Axis, WindowPartition,
    WindowShape,
};

/// One layer: an X-axis pass and a Y-axis pass with independent parameters.
#[derive(Clone, Debug)]
pub struct LayerParams {
    pub x_pass: BiDirParams,
    pub y_pass: BiDirParams,
}

impl LayerParams {
    pub fn init(kind: OperatorKind, dim_c: usize, dim_s: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            x_pass: BiDirParams::init(kind, dim_c, dim_s, rng),
            y_pass: BiDirParams::init(kind, dim_c, dim_s, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerParams {
            x_pass: self.x_pass.zeros_like(),
            y_pass: self.y_pass.zeros_like(),
        }
    }

    pub fn project_invariants(&mut self) {
        self.x_pass.project_invariants();
        self.y_pass.project_invariants();
    }
}

impl ParamSet for LayerParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        self.x_pass.visit(&join(prefix, "x"), f);
        self.y_pass.visit(&join(prefix, "y"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.x_pass.visit_mut(&join(prefix, "x"), f);
        self.y_pass.visit_mut(&join(prefix, "y"), f);
    }
}

/// Pre-normalization without learnable affine.
fn plain_norm(c: usize) -> NormParams {
    NormParams {
        scale: Mat::filled(1, c, 1.0),
        shift: Mat::zeros(1, c),
        epsilon: 1e-5,
    }
}

struct PassCache {
    wp: WindowPartition,
    /// Serialized pre-norm features (operator input).
    seq: Mat,
    xhat: Mat,
    inv_std: Vec<f64>,
}

/// One operator pass: `out = in + scatter(op(gather(prenorm(in))))`, the
/// operator applied independently per group. `identity` swaps the operator
/// for the identity map (baseline mode).
fn pass_forward(
    feats: &Mat,
    vs: &VoxelSet,
    bp: &BiDirParams,
    window: &WindowShape,
    k: usize,
    axis: Axis,
    identity: bool,
) -> Result<(Mat, PassCache)> {
    let norm = plain_norm(feats.cols());
    let (normed, xhat, inv_std) = layer_norm_cached(feats, &norm);
    let wp = partition(vs, window, k, axis)?;
    let seq = gather_rows(&normed, &wp);

    let out_seq = if identity {
        seq.clone()
    } else {
        apply_per_group(&seq, &wp, |piece| bidir_apply(piece, bp))?
    };

    let update = scatter_rows(&out_seq, &wp, feats.rows())?;
    let mut out = feats.clone();
    out.add_assign(&update);
    Ok((
        out,
        PassCache {
            wp,
            seq,
            xhat,
            inv_std,
        },
    ))
}

fn pass_backward(
    grad_out: &Mat,
    cache: &PassCache,
    bp: &BiDirParams,
    g_bp: &mut BiDirParams,
    identity: bool,
) -> Result<Mat> {
    // Residual: gradient flows to the input directly and through the pass.
    let mut grad_in = grad_out.clone();
    let g_out_seq = scatter_backward(grad_out, &cache.wp);

    let g_seq = if identity {
        g_out_seq
    } else {
        let k = cache.wp.group_size;
        let groups = cache.wp.num_groups();
        let results: Vec<(Mat, BiDirParams)> = (0..groups)
            .into_par_iter()
            .map(|g| {
                let piece = slice_rows(&cache.seq, g * k, k);
                let g_piece = slice_rows(&g_out_seq, g * k, k);
                bidir_backward_vjp(&piece, bp, &g_piece)
            })
            .collect::<Result<Vec<_>>>()?;
        // Accumulate parameter grads sequentially, in group order.
        let mut g_seq = Mat::zeros(cache.seq.rows(), cache.seq.cols());
        for (g, (piece_grad, bp_grad)) in results.into_iter().enumerate() {
            for t in 0..k {
                g_seq.copy_row_from(g * k + t, piece_grad.row(t));
            }
            accumulate_bidir(g_bp, &bp_grad);
        }
        g_seq
    };

    let g_normed = gather_backward(&g_seq, &cache.wp, grad_out.rows());
    let norm = plain_norm(grad_out.cols());
    let mut scratch = norm.zeros_like();
    let g_pre = layer_norm_backward(&g_normed, &cache.xhat, &cache.inv_std, &norm, &mut scratch);
    grad_in.add_assign(&g_pre);
    Ok(grad_in)
}

fn slice_rows(m: &Mat, start: usize, len: usize) -> Mat {
    let mut out = Mat::zeros(len, m.cols());
    for t in 0..len {
        out.copy_row_from(t, m.row(start + t));
    }
    out
}

fn apply_per_group(
    seq: &Mat,
    wp: &WindowPartition,
    f: impl Fn(&Mat) -> Result<Mat> + Sync,
) -> Result<Mat> {
    let k = wp.group_size;
    let groups = wp.num_groups();
    let pieces: Vec<Mat> = (0..groups)
        .into_par_iter()
        .map(|g| f(&slice_rows(seq, g * k, k)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Mat::zeros(seq.rows(), seq.cols());
    for (g, piece) in pieces.iter().enumerate() {
        for t in 0..k {
            out.copy_row_from(g * k + t, piece.row(t));
        }
    }
    Ok(out)
}

fn accumulate_bidir(acc: &mut BiDirParams, add: &BiDirParams) {
    let mut sources: Vec<Mat> = Vec::new();
    add.visit("", &mut |_, m| sources.push(m.clone()));
    let mut i = 0;
    acc.visit_mut("", &mut |_, m| {
        m.add_assign(&sources[i]);
        i += 1;
    });
}

pub struct LayerCache {
    x: PassCache,
    y: PassCache,
}

/// The two-pass layer, exposed standalone for composition tests.
pub fn layer_forward(
    vs: &VoxelSet,
    lp: &LayerParams,
    window: &WindowShape,
    k: usize,
    identity: bool,
) -> Result<VoxelSet> {
    let (out, _) = layer_forward_cached(vs, lp, window, k, identity)?;
    Ok(out)
}

pub fn layer_forward_cached(
    vs: &VoxelSet,
    lp: &LayerParams,
    window: &WindowShape,
    k: usize,
    identity: bool,
) -> Result<(VoxelSet, LayerCache)> {
    let (mid, x_cache) = pass_forward(vs.feats(), vs, &lp.x_pass, window, k, Axis::XMajor, identity)?;
    let (out, y_cache) = pass_forward(&mid, vs, &lp.y_pass, window, k, Axis::YMajor, identity)?;
    Ok((
        vs.with_feats(out)?,
        LayerCache {
            x: x_cache,
            y: y_cache,
        },
    ))
}

pub fn layer_backward(
    grad_out: &Mat,
    cache: &LayerCache,
    lp: &LayerParams,
    g_lp: &mut LayerParams,
    identity: bool,
) -> Result<Mat> {
    let g_mid = pass_backward(grad_out, &cache.y, &lp.y_pass, &mut g_lp.y_pass, identity)?;
    pass_backward(&g_mid, &cache.x, &lp.x_pass, &mut g_lp.x_pass, identity)
}

/// One hierarchical block: shapes and learnable parameters.
#[derive(Clone, Debug)]
pub struct Block {
    pub window: WindowShape,
    pub group_size: usize,
    pub dim_c: usize,
    pub layers: Vec<LayerParams>,
    pub descriptors: Vec<DescriptorParams>,
    /// Baseline mode: operator passes act as the identity.
    pub identity_ops: bool,
}

impl Block {
    pub fn init(
        kind: OperatorKind,
        window: WindowShape,
        group_size: usize,
        dim_c: usize,
        dim_s: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Block {
            window,
            group_size,
            dim_c,
            layers: (0..4).map(|_| LayerParams::init(kind, dim_c, dim_s, rng)).collect(),
            descriptors: (0..2).map(|_| DescriptorParams::init(dim_c, rng)).collect(),
            identity_ops: false,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Block {
            window: self.window,
            group_size: self.group_size,
            dim_c: self.dim_c,
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            descriptors: self.descriptors.iter().map(|d| d.zeros_like()).collect(),
            identity_ops: self.identity_ops,
        }
    }

    pub fn project_invariants(&mut self) {
        for l in &mut self.layers {
            l.project_invariants();
        }
    }

    pub fn forward(&self, vs: &VoxelSet) -> Result<VoxelSet> {
        let (out, _) = self.forward_cached(vs)?;
        Ok(out)
    }

    pub fn forward_cached(&self, vs: &VoxelSet) -> Result<(VoxelSet, BlockCache)> {
        if vs.dim() != self.dim_c {
            return Err(CoreError::contract(
                "block",
                "lion_block",
                format!("feature dim {} != block dim {}", vs.dim(), self.dim_c),
            ));
        }
        let idn = self.identity_ops;
        let (l1, c_l1) = layer_forward_cached(vs, &self.layers[0], &self.window, self.group_size, idn)?;
        let d1 = descriptor(&l1, &self.descriptors[0])?;
        let (m1_coarse, m1) = merge(&d1, [2, 2, 2])?;
        let (l2, c_l2) =
            layer_forward_cached(&m1_coarse, &self.layers[1], &self.window, self.group_size, idn)?;
        let d2 = descriptor(&l2, &self.descriptors[1])?;
        let (m2_coarse, m2) = merge(&d2, [2, 2, 2])?;
        let (l3, c_l3) =
            layer_forward_cached(&m2_coarse, &self.layers[2], &self.window, self.group_size, idn)?;
        let mut r2 = expand(&l3, &m2)?;
        r2.feats_mut().add_assign(d2.feats());
        let (l4, c_l4) = layer_forward_cached(&r2, &self.layers[3], &self.window, self.group_size, idn)?;
        let mut out = expand(&l4, &m1)?;
        out.feats_mut().add_assign(d1.feats());

        let cache = BlockCache {
            l1_out: l1,
            l2_out: l2,
            r2_in: r2,
            c_l1,
            c_l2,
            c_l3,
            c_l4,
            m1,
            m2,
        };
        Ok((vs.with_feats(out.into_feats())?, cache))
    }

    pub fn backward(
        &self,
        cache: &BlockCache,
        grad_out: &Mat,
    ) -> Result<(Mat, Block)> {
        let idn = self.identity_ops;
        let mut grads = self.zeros_like();

        // out = expand(l4, m1) + d1
        let g_l4 = expand_backward(grad_out, &cache.m1);
        let mut g_d1 = grad_out.clone();

        let g_r2 = layer_backward(&g_l4, &cache.c_l4, &self.layers[3], &mut grads.layers[3], idn)?;

        // r2 = expand(l3, m2) + d2
        let g_l3 = expand_backward(&g_r2, &cache.m2);
        let mut g_d2 = g_r2;

        let g_c2 = layer_backward(&g_l3, &cache.c_l3, &self.layers[2], &mut grads.layers[2], idn)?;

        // c2 = merge(d2)
        g_d2.add_assign(&merge_backward(&g_c2, &cache.m2));
        let (g_l2, g_desc2) = descriptor_backward(&cache.l2_out, &self.descriptors[1], &g_d2)?;
        grads.descriptors[1] = g_desc2;

        let g_c1 = layer_backward(&g_l2, &cache.c_l2, &self.layers[1], &mut grads.layers[1], idn)?;

        // c1 = merge(d1)
        g_d1.add_assign(&merge_backward(&g_c1, &cache.m1));
        let (g_l1, g_desc1) = descriptor_backward(&cache.l1_out, &self.descriptors[0], &g_d1)?;
        grads.descriptors[0] = g_desc1;

        let g_in = layer_backward(&g_l1, &cache.c_l1, &self.layers[0], &mut grads.layers[0], idn)?;
        Ok((g_in, grads))
    }
}

impl ParamSet for Block {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("layer{i}")), f);
        }
        for (i, d) in self.descriptors.iter().enumerate() {
            d.visit(&join(prefix, &format!("desc{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layer{i}")), f);
        }
        for (i, d) in self.descriptors.iter_mut().enumerate() {
            d.visit_mut(&join(prefix, &format!("desc{i}")), f);
        }
    }
}

pub struct BlockCache {
    l1_out: VoxelSet,
    l2_out: VoxelSet,
    #[allow(dead_code)]
    r2_in: VoxelSet,
    c_l1: LayerCache,
    c_l2: LayerCache,
    c_l3: LayerCache,
    c_l4: LayerCache,
    m1: MergeMapping,
    m2: MergeMapping,
}

/// The full backbone: input embedding, N blocks, voxel generation, and
/// height-only merges between stages.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub geom: GridGeometry,
    pub init_dim: usize,
    pub dim_c: usize,
    pub embed_w: Mat, // C×init_dim
    pub embed_b: Mat, // 1×C
    pub blocks: Vec<Block>,
    pub diffusion: DiffusionSpec,
}

impl Backbone {
    pub fn project_invariants(&mut self) {
        for b in &mut self.blocks {
            b.project_invariants();
        }
    }

    pub fn zeros_like(&self) -> Self {
        Backbone {
            geom: self.geom,
            init_dim: self.init_dim,
            dim_c: self.dim_c,
            embed_w: self.embed_w.zeros_like(),
            embed_b: self.embed_b.zeros_like(),
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            diffusion: self.diffusion,
        }
    }

    pub fn set_identity_ops(&mut self, identity: bool) {
        for b in &mut self.blocks {
            b.identity_ops = identity;
        }
    }

    fn embed(&self, raw: &Mat) -> Mat {
        let mut out = Mat::zeros(raw.rows(), self.dim_c);
        for r in 0..raw.rows() {
            let mut e = matvec(&self.embed_w, raw.row(r));
            for (v, b) in e.iter_mut().zip(self.embed_b.row(0)) {
                *v += b;
            }
            out.copy_row_from(r, &e);
        }
        out
    }

    /// Full pipeline from a point cloud.
    pub fn forward(&self, pc: &PointCloud) -> Result<VoxelSet> {
        let vs = voxelize(pc, &self.geom, self.init_dim)?;
        self.forward_voxels(&vs)
    }

    /// Pipeline from an already-voxelized set carrying raw (pre-embedding)
    /// features.
    pub fn forward_voxels(&self, vs: &VoxelSet) -> Result<VoxelSet> {
        let (out, _) = self.forward_voxels_traced(vs)?;
        Ok(out)
    }

    /// As [`forward_voxels`], also returning each block's output and its
    /// response field (computed before diffusion).
    pub fn forward_voxels_traced(&self, vs: &VoxelSet) -> Result<(VoxelSet, Vec<(VoxelSet, Vec<f64>)>)> {
        let mut cur = vs.with_feats(self.embed(vs.feats()))?;
        let mut traces = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            cur = block.forward(&cur)?;
            let resp = feature_response(&cur);
            traces.push((cur.clone(), resp.clone()));
            if self.diffusion.ratio > 0.0 {
                let selected = select_foreground(&cur, &resp, self.diffusion.ratio);
                cur = diffuse(&cur, &selected, &self.diffusion, &self.geom)?;
            }
            let (merged, _) = merge(&cur, [1, 1, 2])?;
            cur = merged;
        }
        if let Some((t, c)) = cur.feats().first_non_finite() {
            return Err(CoreError::NonFinite {
                op: "backbone_forward",
                location: format!("output[{t}][{c}]"),
            });
        }
        Ok((cur, traces))
    }

    pub fn forward_cached(&self, vs: &VoxelSet) -> Result<(VoxelSet, BackboneCache)> {
        let embedded = self.embed(vs.feats());
        let mut cur = vs.with_feats(embedded)?;
        let mut stages = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (block_out, block_cache) = block.forward_cached(&cur)?;
            let diffused = if self.diffusion.ratio > 0.0 {
                let resp = feature_response(&block_out);
                let selected = select_foreground(&block_out, &resp, self.diffusion.ratio);
                diffuse(&block_out, &selected, &self.diffusion, &self.geom)?
            } else {
                block_out.clone()
            };
            let (merged, height_map) = merge(&diffused, [1, 1, 2])?;
            stages.push(StageCache {
                block_cache,
                block_out_len: block_out.len(),
                height_map,
            });
            cur = merged;
        }
        Ok((
            cur,
            BackboneCache {
                raw_feats: vs.feats().clone(),
                stages,
            },
        ))
    }

    /// Backward from a gradient on the final features; returns parameter
    /// gradients shaped like `self` plus the gradient of the raw voxel
    /// features.
    pub fn backward(&self, cache: &BackboneCache, grad_final: &Mat) -> Result<(Backbone, Mat)> {
        let mut grads = self.zeros_like();
        let mut g = grad_final.clone();
        for i in (0..self.blocks.len()).rev() {
            let stage = &cache.stages[i];
            let g_diffused = merge_backward(&g, &stage.height_map);
            // Diffused voxels carry constant zero features: only the rows of
            // the original block output receive gradient.
            let g_block_out = slice_rows(&g_diffused, 0, stage.block_out_len);
            let (g_in, g_block) = self.blocks[i].backward(&stage.block_cache, &g_block_out)?;
            grads.blocks[i] = g_block;
            g = g_in;
        }
        // Embedding.
        let mut g_raw = Mat::zeros(cache.raw_feats.rows(), self.init_dim);
        for r in 0..cache.raw_feats.rows() {
            outer_acc(&mut grads.embed_w, g.row(r), cache.raw_feats.row(r));
            for (b, v) in grads.embed_b.row_mut(0).iter_mut().zip(g.row(r)) {
                *b += v;
            }
            g_raw.copy_row_from(r, &matvec_t(&self.embed_w, g.row(r)));
        }
        Ok((grads, g_raw))
    }
}

impl ParamSet for Backbone {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        f(&join(prefix, "embed_w"), &self.embed_w);
        f(&join(prefix, "embed_b"), &self.embed_b);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        f(&join(prefix, "embed_w"), &mut self.embed_w);
        f(&join(prefix, "embed_b"), &mut self.embed_b);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

struct StageCache {
    block_cache: BlockCache,
    block_out_len: usize,
    height_map: MergeMapping,
}

pub struct BackboneCache {
    raw_feats: Mat,
    stages: Vec<StageCache>,
}
