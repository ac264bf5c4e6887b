//! Desk-scale training harness: synthetic scenes, the BEV heatmap head, the
//! optimizer loop, and gradient-check runners.

pub mod gradcheck;
pub mod head;
pub mod scene;
pub mod train;

pub use gradcheck::{grad_check, GradCheckReport};
pub use head::{build_targets, center_recall, head_forward, loss, BevTargets, HeadOutput, HeadParams};
pub use scene::{make_scene, GtBox, SyntheticScene};
pub use train::{train, TrainOutcome, TrainRecord};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::Backbone;
use crate::config::RunConfig;
use crate::error::Result;
use crate::linalg::Mat;
use crate::params::{join, ParamSet};
use crate::voxelgrid::{voxelize, VoxelSet};

/// Backbone plus detection head: everything the optimizer trains.
#[derive(Clone, Debug)]
pub struct Model {
    pub backbone: Backbone,
    pub head: HeadParams,
}

impl Model {
    pub fn init(cfg: &RunConfig, seed: u64, identity_ops: bool) -> Model {
        let mut backbone = cfg.build_backbone(seed);
        backbone.set_identity_ops(identity_ops);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        Model {
            backbone,
            head: HeadParams::init(cfg.channels, &mut rng),
        }
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            backbone: self.backbone.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn project_invariants(&mut self) {
        self.backbone.project_invariants();
    }
}

impl ParamSet for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Mat)) {
        self.backbone.visit(&join(prefix, "backbone"), f);
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Mat)) {
        self.backbone.visit_mut(&join(prefix, "backbone"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// A scene voxelized once, with its BEV targets, so repeated training steps
/// skip re-binning.
pub struct PreparedScene {
    pub voxels: VoxelSet,
    pub targets: BevTargets,
}

impl PreparedScene {
    pub fn build(scene: &SyntheticScene, cfg: &RunConfig) -> Result<PreparedScene> {
        Ok(PreparedScene {
            voxels: voxelize(&scene.cloud, &cfg.geom, cfg.init_dim)?,
            targets: build_targets(scene, &cfg.geom),
        })
    }
}

/// Forward pass to `(loss, center recall)`.
pub fn evaluate(model: &Model, prepared: &PreparedScene) -> Result<(f64, f64)> {
    let feats = model.backbone.forward_voxels(&prepared.voxels)?;
    let (out, _) = head_forward(&model.head, &feats, &model.backbone.geom)?;
    let (l, _, _) = loss(&out, &prepared.targets);
    let recall = center_recall(&out.heatmap, &prepared.targets.centers);
    Ok((l, recall))
}

/// Forward and backward; returns `(loss, recall, gradients)`.
pub fn evaluate_with_grads(model: &Model, prepared: &PreparedScene) -> Result<(f64, f64, Model)> {
    let (feats, bb_cache) = model.backbone.forward_cached(&prepared.voxels)?;
    let (out, head_cache) = head_forward(&model.head, &feats, &model.backbone.geom)?;
    let (l, g_heat, g_boxes) = loss(&out, &prepared.targets);
    let recall = center_recall(&out.heatmap, &prepared.targets.centers);

    let mut grads = model.zeros_like();
    let g_feats = head::head_backward(
        &model.head,
        &head_cache,
        feats.len(),
        &g_heat,
        &g_boxes,
        &mut grads.head,
    )?;
    let (bb_grads, _) = model.backbone.backward(&bb_cache, &g_feats)?;
    grads.backbone = bb_grads;
    Ok((l, recall, grads))
}
