//! The optimizer loop: deterministic per (seed, config), cycling through a
//! fixed pool of synthetic scenes.

use crate::config::RunConfig;
use crate::error::Result;
use crate::harness::{evaluate, evaluate_with_grads, make_scene, Model, PreparedScene};
use crate::opt::Adam;
use crate::params::{flatten, load_flat, param_count};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub recall: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Per-step training loss/recall on the step's scene (pre-update).
    pub records: Vec<TrainRecord>,
    /// Dataset-mean loss/recall before the first step.
    pub initial_loss: f64,
    pub initial_recall: f64,
    /// Dataset-mean loss/recall after the last step.
    pub final_loss: f64,
    pub final_recall: f64,
    /// The trained model.
    pub model: Model,
}

fn scene_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn dataset_mean(model: &Model, scenes: &[PreparedScene]) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut recall_sum = 0.0;
    for s in scenes {
        let (l, r) = evaluate(model, s)?;
        loss_sum += l;
        recall_sum += r;
    }
    let n = scenes.len().max(1) as f64;
    Ok((loss_sum / n, recall_sum / n))
}

/// Train for `cfg.steps` steps. `identity_ops` swaps every operator pass for
/// the identity (the baseline model).
pub fn train(cfg: &RunConfig, identity_ops: bool) -> Result<TrainOutcome> {
    let mut model = Model::init(cfg, cfg.seed, identity_ops);
    let scenes: Vec<PreparedScene> = (0..cfg.scenes)
        .map(|i| {
            let scene = make_scene(scene_seed(cfg.seed, i), cfg.objects, &cfg.geom);
            PreparedScene::build(&scene, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let (initial_loss, initial_recall) = dataset_mean(&model, &scenes)?;

    let mut opt = Adam::new(cfg.learning_rate, param_count(&model));
    let mut records = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let prepared = &scenes[step % scenes.len().max(1)];
        let (loss, recall, grads) = evaluate_with_grads(&model, prepared)?;
        records.push(TrainRecord {
            step: step + 1,
            loss,
            recall,
        });
        let mut theta = flatten(&model);
        let g = flatten(&grads);
        opt.step(&mut theta, &g);
        load_flat(&mut model, &theta)?;
        model.project_invariants();
    }

    let (final_loss, final_recall) = dataset_mean(&model, &scenes)?;
    Ok(TrainOutcome {
        records,
        initial_loss,
        initial_recall,
        final_loss,
        final_recall,
        model,
    })
}
