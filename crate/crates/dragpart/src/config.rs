//! Experiment configuration: one TOML file describes the world, the model,
//! training, sampling, evaluation splits, segmentation and motion analysis.

use std::path::Path;

use dragpart_core::segment::{KMeansOptions, DEFAULT_CLUSTERS, DEFAULT_TIMESTEP, SWEEP_CLUSTERS, SWEEP_TIMESTEPS};
use dragpart_core::world::{Archetype, WorldConfig};
use dragpart_core::GridSize;
use dragpart_diffusion::{DenoiserConfig, SampleOptions, TrainOptions};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::json_hash;

/// Seed offsets of the evaluation worlds relative to the experiment seed.
pub const ID_SEED_OFFSET: u64 = 1000;
pub const OOD_SEED_OFFSET: u64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    /// Fresh assets of the training archetypes.
    #[serde(alias = "test")]
    Id,
    /// Assets of the held-out archetypes.
    Ood,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Id, Split::Ood];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Id => "id",
            Split::Ood => "ood",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "id" | "test" => Ok(Split::Id),
            "ood" => Ok(Split::Ood),
            _ => Err(Error::Config(format!("unknown split `{s}` (expected train, id, test or ood)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Assets per evaluation split.
    pub assets: usize,
    pub animations_per_asset: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { assets: 8, animations_per_asset: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub t: usize,
    pub clusters: usize,
    pub timesteps: Vec<usize>,
    pub cluster_counts: Vec<usize>,
    /// Examples per sweep.
    pub examples: usize,
    pub kmeans: KMeansOptions,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            t: DEFAULT_TIMESTEP,
            clusters: DEFAULT_CLUSTERS,
            timesteps: SWEEP_TIMESTEPS.to_vec(),
            cluster_counts: SWEEP_CLUSTERS.to_vec(),
            examples: 16,
            kmeans: KMeansOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Views `K` per estimate.
    pub views: usize,
    pub refine_rounds: usize,
    /// Objects in the oracle benchmark.
    pub objects: usize,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { views: 4, refine_rounds: 0, objects: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Requests admitted at once; the rest get 503.
    pub queue_depth: usize,
    /// Largest accepted `steps` per generation.
    pub max_steps: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { queue_depth: 8, max_steps: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: WorldConfig,
    pub model: DenoiserConfig,
    pub train: TrainOptions,
    pub sample: SampleOptions,
    pub eval: EvalConfig,
    pub segment: SegmentConfig,
    pub motion: MotionConfig,
    pub service: ServiceConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: WorldConfig::default(),
            model: DenoiserConfig::default(),
            train: TrainOptions::default(),
            sample: SampleOptions::default(),
            eval: EvalConfig::default(),
            segment: SegmentConfig::default(),
            motion: MotionConfig::default(),
            service: ServiceConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        json_hash(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        let res = self.dataset.resolution;
        if self.model.image != GridSize::square(res) {
            return Err(Error::Config(format!(
                "model image {}x{} does not match dataset resolution {res}",
                self.model.image.h, self.model.image.w
            )));
        }
        if self.model.drag_capacity != self.dataset.drag_capacity {
            return Err(Error::Config(format!(
                "model drag capacity {} differs from dataset capacity {}",
                self.model.drag_capacity, self.dataset.drag_capacity
            )));
        }
        if self.eval.assets == 0 || self.eval.animations_per_asset == 0 {
            return Err(Error::Config("evaluation splits need at least one animation".into()));
        }
        if self.segment.clusters < 2 || self.segment.cluster_counts.iter().any(|&k| k < 2) {
            return Err(Error::Config("segmentation needs at least two clusters".into()));
        }
        if self.motion.views == 0 {
            return Err(Error::Config("motion analysis needs at least one view".into()));
        }
        if self.service.queue_depth == 0 {
            return Err(Error::Config("service queue depth must be positive".into()));
        }
        Ok(())
    }

    /// World and seed of a split.
    pub fn split(&self, split: Split) -> (WorldConfig, u64) {
        match split {
            Split::Train => (self.dataset.clone(), self.seed),
            Split::Id => (self.eval_world(self.dataset.archetypes.clone()), self.seed + ID_SEED_OFFSET),
            Split::Ood => (self.eval_world(Archetype::HELD_OUT.to_vec()), self.seed + OOD_SEED_OFFSET),
        }
    }

    fn eval_world(&self, archetypes: Vec<Archetype>) -> WorldConfig {
        WorldConfig {
            assets: self.eval.assets,
            animations_per_asset: self.eval.animations_per_asset,
            archetypes,
            ..self.dataset.clone()
        }
    }

    /// Small but complete configuration on 32x32 images for tests and demos.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.dataset = WorldConfig { resolution: 32, frames: 6, assets: 8, animations_per_asset: 2, ..WorldConfig::default() };
        cfg.model = DenoiserConfig { image: GridSize::square(32), widths: vec![16, 32], time_dim: 32, dit_width: 32, ..DenoiserConfig::default() };
        cfg.model.global_widths = vec![8, 8, 16, 16];
        cfg.model.global_dim = 16;
        cfg.model.groups = 4;
        cfg.train.steps = 40;
        cfg.train.batch = 4;
        cfg.sample.steps = 8;
        cfg.eval = EvalConfig { assets: 2, animations_per_asset: 2 };
        cfg.segment.examples = 4;
        cfg
    }
}
