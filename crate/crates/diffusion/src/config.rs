//! Architecture description stored in every checkpoint.

use dragpart_core::{GridSize, DEFAULT_DRAG_CAPACITY};
use serde::{Deserialize, Serialize};

use crate::codec::{CODEC_FACTOR, LATENT_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    #[default]
    Unet,
    Dit,
}

/// How drags reach the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DragConditioning {
    /// Drag encoding at each transformer block's own resolution.
    #[default]
    MultiResEveryBlock,
    /// Blurred sparse flow through a conv stack at every transformer block.
    ConvEveryBlock,
    /// Blurred sparse flow through a conv stack added to the first block only.
    ConvInputOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub backbone: Backbone,
    pub image: GridSize,
    pub image_channels: usize,
    pub codec_factor: usize,
    pub latent_channels: usize,
    /// U-Net block widths; block `l` runs at the latent size divided by `2^l`.
    pub widths: Vec<usize>,
    pub heads: usize,
    pub groups: usize,
    pub time_dim: usize,
    pub dit_width: usize,
    pub dit_depth: usize,
    pub drag_capacity: usize,
    /// Global image encoder: conv widths (each halves the resolution) and token width.
    pub global_widths: Vec<usize>,
    pub global_dim: usize,
    pub drop_prob: f64,
    pub conditioning: DragConditioning,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Unet,
            image: GridSize::square(64),
            image_channels: 3,
            codec_factor: CODEC_FACTOR,
            latent_channels: LATENT_CHANNELS,
            widths: vec![64, 128],
            heads: 4,
            groups: 8,
            time_dim: 128,
            dit_width: 128,
            dit_depth: 4,
            drag_capacity: DEFAULT_DRAG_CAPACITY,
            global_widths: vec![16, 32, 64, 64],
            global_dim: 64,
            drop_prob: 0.1,
            conditioning: DragConditioning::MultiResEveryBlock,
        }
    }
}

impl DenoiserConfig {
    /// Tiny model on 16x16 images (codec factor 4, 4x4 latents) for gradient checks and fast tests.
    pub fn micro(backbone: Backbone) -> Self {
        Self {
            backbone,
            image: GridSize::square(16),
            codec_factor: 4,
            widths: vec![8, 8],
            heads: 2,
            groups: 2,
            time_dim: 16,
            dit_width: 16,
            dit_depth: 2,
            drag_capacity: 2,
            global_widths: vec![4, 4, 4, 4],
            global_dim: 8,
            ..Self::default()
        }
    }

    pub fn latent_size(&self) -> GridSize {
        GridSize::new(self.image.h / self.codec_factor.max(1), self.image.w / self.codec_factor.max(1))
    }

    /// Spatial size of every drag-conditioned block, in forward order.
    pub fn block_resolutions(&self) -> Vec<GridSize> {
        let latent = self.latent_size();
        match self.backbone {
            Backbone::Unet => {
                (0..self.widths.len()).map(|l| GridSize::new(latent.h >> l, latent.w >> l)).collect()
            }
            Backbone::Dit => vec![latent; self.dit_depth],
        }
    }

    /// Channel width of each feature tap (one per block).
    pub fn tap_channels(&self) -> Vec<usize> {
        match self.backbone {
            Backbone::Unet => self.widths.clone(),
            Backbone::Dit => vec![self.dit_width; self.dit_depth],
        }
    }

    /// Drag channels fed to each block: `4N` for the drag encoding, 2 for flow.
    pub fn drag_channels(&self) -> usize {
        match self.conditioning {
            DragConditioning::MultiResEveryBlock => 4 * self.drag_capacity,
            DragConditioning::ConvEveryBlock | DragConditioning::ConvInputOnly => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.codec_factor == 0 || self.image.h % self.codec_factor != 0 || self.image.w % self.codec_factor != 0 {
            return err(format!("image {}x{} is not divisible by codec factor {}", self.image.h, self.image.w, self.codec_factor));
        }
        if self.image_channels == 0 || self.latent_channels == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 {
            return err("channel counts must be positive and time_dim even".into());
        }
        if self.drag_capacity == 0 {
            return err("drag capacity must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return err(format!("drop probability {} outside [0, 1]", self.drop_prob));
        }
        if self.global_widths.is_empty() || self.global_dim == 0 {
            return err("global encoder needs at least one layer".into());
        }
        let latent = self.latent_size();
        match self.backbone {
            Backbone::Unet => {
                if self.widths.is_empty() {
                    return err("U-Net needs at least one block".into());
                }
                let f = 1usize << (self.widths.len() - 1);
                if latent.h % f != 0 || latent.w % f != 0 {
                    return err(format!("block resolutions must divide the {}x{} latent", latent.h, latent.w));
                }
                for &c in &self.widths {
                    if c % self.groups != 0 || c % self.heads != 0 {
                        return err(format!("width {c} must divide into {} groups and {} heads", self.groups, self.heads));
                    }
                }
            }
            Backbone::Dit => {
                if self.dit_depth == 0 || self.dit_width % self.heads != 0 || self.dit_width % 4 != 0 {
                    return err("DiT width must divide into heads and by 4, depth at least 1".into());
                }
                if self.conditioning != DragConditioning::MultiResEveryBlock {
                    return err("the DiT backbone only supports the multi-resolution drag encoding".into());
                }
            }
        }
        Ok(())
    }
}
