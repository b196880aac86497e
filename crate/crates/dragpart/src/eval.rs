//! PSNR/SSIM evaluation of a checkpoint on an evaluation split.
//!
//! Each animation contributes one example: its first frame as input, its
//! last frame as target and the drags between them.

use dragpart_core::metrics::{psnr, ssim};
use dragpart_core::world::Palette;
use dragpart_diffusion::{sample, Checkpoint, SampleOptions};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Split};
use crate::error::Result;
use crate::experiment::{checkpoint_hash, split_records};
use crate::hash::json_hash;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalExample {
    pub id: String,
    pub psnr: f64,
    /// PSNR hit the cap (identical images).
    pub psnr_capped: bool,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub protocol: String,
    pub config_hash: String,
    pub checkpoint_hash: String,
    pub sample: SampleOptions,
    pub examples: Vec<EvalExample>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl EvalReport {
    pub fn hash(&self) -> Result<String> {
        json_hash(self)
    }
}

pub fn protocol(resolution: usize) -> String {
    format!("native {resolution}x{resolution} RGB in [0, 1]; PSNR with MAX = 1 capped at 99 dB; SSIM 11x11 Gaussian window, sigma 1.5, channel mean")
}

/// Samples every example of `split` with seed `opts.seed + i` and scores it against the true last frame.
pub fn evaluate(cfg: &ExperimentConfig, ckpt: &Checkpoint, split: Split, limit: Option<usize>) -> Result<EvalReport> {
    let records = split_records(cfg, split)?;
    let take = limit.unwrap_or(records.len()).min(records.len());
    let mut examples = Vec::with_capacity(take);
    for (i, rec) in records.iter().take(take).enumerate() {
        let last = rec.frames() - 1;
        let y = rec.render(0, Palette::Regular)?.image;
        let x = rec.render(last, Palette::Regular)?.image;
        let drags = rec.drags(0, last, ckpt.config().drag_capacity)?;
        let opts = SampleOptions { seed: cfg.sample.seed.wrapping_add(i as u64), ..cfg.sample };
        let out = sample(ckpt, &y, &drags, &opts)?;
        let p = psnr(&out, &x)?;
        let s = ssim(&out, &x)?;
        tracing::debug!(split = %split, example = i, psnr = p.db, ssim = s, "evaluated");
        examples.push(EvalExample { id: format!("{}/{i:04}", split.name()), psnr: p.db, psnr_capped: p.capped, ssim: s });
    }
    let n = examples.len().max(1) as f64;
    Ok(EvalReport {
        split,
        protocol: protocol(cfg.dataset.resolution),
        config_hash: cfg.hash()?,
        checkpoint_hash: checkpoint_hash(ckpt)?,
        sample: cfg.sample,
        mean_psnr: examples.iter().map(|e| e.psnr).sum::<f64>() / n,
        mean_ssim: examples.iter().map(|e| e.ssim).sum::<f64>() / n,
        examples,
    })
}
