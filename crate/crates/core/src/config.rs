//! Flat `key = value` config files with `[section]` headers, the validated
//! run configuration, and backbone construction.
//!
//! Schema (all keys shown with their defaults in `default.cfg`):
//!
//! ```text
//! [grid]    range_min_x/y/z, range_max_x/y/z, voxel_size_x/y/z
//! [model]   operator (mamba|retnet|rwkv), channels, state_dim, init_dim,
//!           blocks, ratio
//! [blockN]  window_x, window_y, window_z, group_size   (N = 1..blocks)
//! [train]   seed, learning_rate, steps, scenes, objects
//! ```

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{Backbone, Block};
use crate::error::{CoreError, Result};
use crate::linalg::Mat;
use crate::linear_rnn::OperatorKind;
use crate::voxelgen::DiffusionSpec;
use crate::voxelgrid::GridGeometry;
use crate::windowing::WindowShape;

/// Raw parsed file: `(section, key) -> value`.
#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    values: HashMap<(String, String), String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = HashMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(stripped) = line.strip_prefix('[') {
                let name = stripped.strip_suffix(']').ok_or_else(|| {
                    CoreError::Format(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
            } else if let Some((key, value)) = line.split_once('=') {
                values.insert(
                    (section.clone(), key.trim().to_string()),
                    value.trim().to_string(),
                );
            } else {
                return Err(CoreError::Format(format!(
                    "line {}: expected `key = value` or `[section]`, got `{line}`",
                    lineno + 1
                )));
            }
        }
        Ok(ConfigMap { values })
    }

    fn get(&self, section: &str, key: &str) -> Result<&str> {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
            .ok_or_else(|| CoreError::Format(format!("missing config key [{section}] {key}")))
    }

    fn get_f64(&self, section: &str, key: &str) -> Result<f64> {
        self.get(section, key)?.parse().map_err(|_| {
            CoreError::Format(format!("[{section}] {key}: not a number"))
        })
    }

    fn get_usize(&self, section: &str, key: &str) -> Result<usize> {
        self.get(section, key)?.parse().map_err(|_| {
            CoreError::Format(format!("[{section}] {key}: not a non-negative integer"))
        })
    }

    fn get_i32(&self, section: &str, key: &str) -> Result<i32> {
        self.get(section, key)?.parse().map_err(|_| {
            CoreError::Format(format!("[{section}] {key}: not an integer"))
        })
    }

    fn get_u64_opt(&self, section: &str, key: &str) -> Result<Option<u64>> {
        match self.values.get(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|_| {
                CoreError::Format(format!("[{section}] {key}: not a non-negative integer"))
            }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockSettings {
    pub window: WindowShape,
    pub group_size: usize,
}

/// Validated run configuration: grid geometry, model shape, and training
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub geom: GridGeometry,
    pub operator: OperatorKind,
    pub channels: usize,
    pub state_dim: usize,
    pub init_dim: usize,
    pub ratio: f64,
    pub blocks: Vec<BlockSettings>,
    pub seed: u64,
    pub learning_rate: f64,
    pub steps: usize,
    pub scenes: usize,
    pub objects: usize,
}

impl RunConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        let geom = GridGeometry::new(
            [
                map.get_f64("grid", "range_min_x")?,
                map.get_f64("grid", "range_min_y")?,
                map.get_f64("grid", "range_min_z")?,
            ],
            [
                map.get_f64("grid", "range_max_x")?,
                map.get_f64("grid", "range_max_y")?,
                map.get_f64("grid", "range_max_z")?,
            ],
            [
                map.get_f64("grid", "voxel_size_x")?,
                map.get_f64("grid", "voxel_size_y")?,
                map.get_f64("grid", "voxel_size_z")?,
            ],
        )?;
        let n_blocks = map.get_usize("model", "blocks")?;
        let mut blocks = Vec::with_capacity(n_blocks);
        for i in 1..=n_blocks {
            let section = format!("block{i}");
            blocks.push(BlockSettings {
                window: WindowShape::new(
                    map.get_i32(&section, "window_x")?,
                    map.get_i32(&section, "window_y")?,
                    map.get_i32(&section, "window_z")?,
                )?,
                group_size: map.get_usize(&section, "group_size")?,
            });
        }
        let cfg = RunConfig {
            geom,
            operator: OperatorKind::parse(map.get("model", "operator")?)?,
            channels: map.get_usize("model", "channels")?,
            state_dim: map.get_usize("model", "state_dim")?,
            init_dim: map.get_usize("model", "init_dim")?,
            ratio: map.get_f64("model", "ratio")?,
            blocks,
            seed: map.get_u64_opt("train", "seed")?.unwrap_or(0),
            learning_rate: map.get_f64("train", "learning_rate").unwrap_or(3e-3),
            steps: map.get_usize("train", "steps").unwrap_or(500),
            scenes: map.get_usize("train", "scenes").unwrap_or(64),
            objects: map.get_usize("train", "objects").unwrap_or(3),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |detail: String| -> Result<()> {
            Err(CoreError::contract("cli", "RunConfig::validate", detail))
        };
        if self.blocks.is_empty() {
            return fail("at least one block required".into());
        }
        if self.channels < 1 || self.state_dim < 1 {
            return fail("channels and state_dim must be >= 1".into());
        }
        if self.init_dim < 4 {
            return fail(format!("init_dim {} < 4", self.init_dim));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return fail(format!("ratio {} outside [0, 1]", self.ratio));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.group_size < 1 {
                return fail(format!("block {}: group_size must be >= 1", i + 1));
            }
            // Height merging halves the grid after every block; the window
            // height must follow the same schedule.
            if i + 1 < self.blocks.len() {
                let next = self.blocks[i + 1].window.tz;
                if next * 2 != self.blocks[i].window.tz {
                    return fail(format!(
                        "block {} window_z {} must halve to {} at block {}",
                        i + 1,
                        self.blocks[i].window.tz,
                        next,
                        i + 2
                    ));
                }
            }
        }
        Ok(())
    }

    /// The reference configuration: 0.32 m × 0.32 m × 0.1875 m grid over a
    /// ±74.88 m × ±74.88 m × [-2, 4] m range, four blocks with windows
    /// (13,13,32)…(13,13,4), group sizes 4096/2048/1024/512, C = 64, r = 0.2.
    pub fn reference_default() -> Self {
        let geom = GridGeometry::new(
            [-74.88, -74.88, -2.0],
            [74.88, 74.88, 4.0],
            [0.32, 0.32, 0.1875],
        )
        .expect("valid default geometry");
        let windows = [(13, 13, 32), (13, 13, 16), (13, 13, 8), (13, 13, 4)];
        let groups = [4096usize, 2048, 1024, 512];
        RunConfig {
            geom,
            operator: OperatorKind::SelectiveScan,
            channels: 64,
            state_dim: 16,
            init_dim: 4,
            ratio: 0.2,
            blocks: windows
                .iter()
                .zip(groups)
                .map(|(&(x, y, z), k)| BlockSettings {
                    window: WindowShape::new(x, y, z).expect("valid window"),
                    group_size: k,
                })
                .collect(),
            seed: 0,
            learning_rate: 3e-3,
            steps: 500,
            scenes: 64,
            objects: 3,
        }
    }

    pub fn build_backbone(&self, seed: u64) -> Backbone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Block::init(
                    self.operator,
                    b.window,
                    b.group_size,
                    self.channels,
                    self.state_dim,
                    &mut rng,
                )
            })
            .collect();
        Backbone {
            geom: self.geom,
            init_dim: self.init_dim,
            dim_c: self.channels,
            embed_w: Mat::uniform_init(self.channels, self.init_dim, self.init_dim, &mut rng),
            embed_b: Mat::zeros(1, self.channels),
            blocks,
            diffusion: DiffusionSpec::new(self.ratio).expect("validated ratio"),
        }
    }
}
