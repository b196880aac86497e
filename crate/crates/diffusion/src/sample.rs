//! Deterministic DDIM sampling with classifier-free guidance.

use candle_core::{DType, Device, Tensor};
use dragpart_core::rng;
use dragpart_core::{DragSet, ImageGrid};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::codec::{to_signed, Latent};
use crate::drags::prepare_drags;
use crate::error::{Error, Result};
use crate::model::{images_to_tensor, latents_to_tensor, DenoiserInput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    pub steps: usize,
    pub guidance: f64,
    pub seed: u64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self { steps: 50, guidance: 5.0, seed: 0 }
    }
}

/// Guided noise estimate `ε_∅ + w (ε_D − ε_∅)`; `w = 1` returns `ε_D` as is.
pub fn guide(cond: &[f32], uncond: Option<&[f32]>, w: f64) -> Vec<f32> {
    match uncond {
        Some(u) if w != 1.0 => {
            let w = w as f32;
            u.iter().zip(cond).map(|(&u, &c)| u + w * (c - u)).collect()
        }
        _ => cond.to_vec(),
    }
}

fn check_compatible(ckpt: &Checkpoint, y: &ImageGrid) -> Result<()> {
    let c = ckpt.config();
    if y.height() != c.image.h || y.width() != c.image.w || y.channels() != c.image_channels {
        return Err(Error::Config(format!(
            "checkpoint expects {}x{}x{} images, got {}x{}x{}",
            c.image.h,
            c.image.w,
            c.image_channels,
            y.height(),
            y.width(),
            y.channels()
        )));
    }
    Ok(())
}

/// Samples the latent of `x ~ P(x | y, D)`.
pub fn sample_latent(ckpt: &Checkpoint, y: &ImageGrid, drags: &DragSet, opts: &SampleOptions) -> Result<Latent> {
    check_compatible(ckpt, y)?;
    let model = &ckpt.denoiser;
    let config = model.config();
    let dtype = model.dtype();
    drags.validate(config.image)?;
    let cond_drags = prepare_drags(config, std::slice::from_ref(drags), dtype)?;
    let guided = opts.guidance != 1.0;
    let empty_drags = if guided { Some(prepare_drags(config, &[DragSet::empty(config.drag_capacity)], dtype)?) } else { None };
    let y_signed = to_signed(y)?;
    let y_latent_code = ckpt.codec.encode(&y_signed)?;
    let y_latent = latents_to_tensor(&[&y_latent_code], dtype)?;
    let y_image = images_to_tensor(&[y], dtype)?;

    let schedule = &ckpt.schedule;
    let timesteps = schedule.sampling_timesteps(opts.steps)?;
    let mut r = rng::stream(opts.seed, rng::domain::SAMPLE, 0);
    let n = y_latent_code.data.len();
    let mut z: Vec<f64> = (0..n).map(|_| rng::normal(&mut r)).collect();
    let shape = y_latent.shape().clone();
    let predict = |z: &[f64], t: usize, drags: &[Tensor]| -> Result<Vec<f32>> {
        let z_t = Tensor::from_iter(z.iter().map(|&v| v as f32), &Device::Cpu)?.reshape(&shape)?.to_dtype(dtype)?;
        let out = model.forward(&DenoiserInput { z_t: &z_t, t: &[t], y_latent: &y_latent, y_image: &y_image, drags })?;
        Ok(out.eps.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?)
    };
    for (i, &t) in timesteps.iter().enumerate() {
        let cond = predict(&z, t, &cond_drags)?;
        let uncond = match &empty_drags {
            Some(e) => Some(predict(&z, t, e)?),
            None => None,
        };
        let eps = guide(&cond, uncond.as_deref(), opts.guidance);
        let next = timesteps.get(i + 1).copied().unwrap_or(0);
        let (sigma, signal) = (schedule.sigma(t), schedule.signal(t));
        let (sigma_next, signal_next) = (schedule.sigma(next), schedule.signal(next));
        for (zi, &e) in z.iter_mut().zip(&eps) {
            let x0 = (*zi - sigma * e as f64) / signal;
            *zi = signal_next * x0 + sigma_next * e as f64;
        }
    }
    Ok(Latent { data: z.into_iter().map(|v| v as f32).collect(), ..y_latent_code })
}

/// Samples and decodes to a `[0, 1]` image.
pub fn sample(ckpt: &Checkpoint, y: &ImageGrid, drags: &DragSet, opts: &SampleOptions) -> Result<ImageGrid> {
    let z = sample_latent(ckpt, y, drags, opts)?;
    Ok(ckpt.codec.decode(&z)?.to_unit_range())
}
