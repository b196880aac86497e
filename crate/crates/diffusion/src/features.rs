//! Drag-minus-no-drag attention features for moving-part segmentation.

use candle_core::{DType, Tensor};
use dragpart_core::rng;
use dragpart_core::segment::{FeatureMap, FeaturePyramid};
use dragpart_core::{DragSet, ImageGrid};

use crate::checkpoint::Checkpoint;
use crate::codec::{to_signed, Latent};
use crate::drags::prepare_drags;
use crate::error::{Error, Result};
use crate::model::{images_to_tensor, latents_to_tensor, DenoiserInput};

/// Noise draw shared by both passes of [`extract_features`].
pub fn feature_noise(len: usize, seed: u64) -> Vec<f32> {
    let mut r = rng::stream(seed, rng::domain::FEATURES, 0);
    (0..len).map(|_| rng::normal(&mut r) as f32).collect()
}

/// Feature pyramid of `f_l = tap_l(z_t, D) − tap_l(z_t, ∅)` with `ε` drawn from `seed`.
pub fn extract_features(ckpt: &Checkpoint, y: &ImageGrid, drags: &DragSet, t: usize, seed: u64) -> Result<FeaturePyramid> {
    let c = ckpt.config();
    let n = c.latent_size().cells() * c.latent_channels;
    extract_features_with_noise(ckpt, y, drags, t, &feature_noise(n, seed))
}

/// As [`extract_features`], with an explicit noise draw.
pub fn extract_features_with_noise(
    ckpt: &Checkpoint,
    y: &ImageGrid,
    drags: &DragSet,
    t: usize,
    eps: &[f32],
) -> Result<FeaturePyramid> {
    let model = &ckpt.denoiser;
    let config = model.config();
    let dtype = model.dtype();
    if y.height() != config.image.h || y.width() != config.image.w {
        return Err(Error::Config(format!("checkpoint expects {}x{} images", config.image.h, config.image.w)));
    }
    if t > ckpt.schedule.steps() {
        return Err(Error::Config(format!("timestep {t} outside 0..={}", ckpt.schedule.steps())));
    }
    let z = ckpt.codec.encode(&to_signed(y)?)?;
    let z_t = Latent { data: ckpt.schedule.add_noise(&z.data, t, eps)?, ..z.clone() };
    let z_t = latents_to_tensor(&[&z_t], dtype)?;
    let y_latent = latents_to_tensor(&[&z], dtype)?;
    let y_image = images_to_tensor(&[y], dtype)?;
    let run = |set: &DragSet| -> Result<Vec<Tensor>> {
        let d = prepare_drags(config, std::slice::from_ref(set), dtype)?;
        let out = model.forward(&DenoiserInput { z_t: &z_t, t: &[t], y_latent: &y_latent, y_image: &y_image, drags: &d })?;
        Ok(out.taps)
    };
    let with = run(drags)?;
    let without = run(&DragSet::empty(config.drag_capacity))?;
    let mut maps = Vec::with_capacity(with.len());
    for (a, b) in with.iter().zip(&without) {
        let (_, h, w, ch) = a.dims4()?;
        let data: Vec<f32> = (a - b)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        maps.push(FeatureMap { height: h, width: w, channels: ch, data });
    }
    Ok(FeaturePyramid::from_blocks(&maps, y.height(), y.width(), t)?)
}
