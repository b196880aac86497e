#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use dragpart_core::rng;
use dragpart_core::world::{generate_animation, AnimationRecord, WorldConfig};
use dragpart_core::{Drag, DragSet, NoiseSchedule, PixelPoint};
use dragpart_diffusion::train::fit_codec;
use dragpart_diffusion::{Backbone, Checkpoint, Denoiser, DenoiserConfig, TrainingMeta};

pub fn world(resolution: usize, animations: usize, capacity: usize) -> Vec<AnimationRecord> {
    let config = WorldConfig {
        resolution,
        frames: 6,
        assets: animations,
        animations_per_asset: 1,
        drag_capacity: capacity,
        ..Default::default()
    };
    (0..animations).map(|i| generate_animation(&config, 11, i).unwrap()).collect()
}

pub fn checkpoint(config: DenoiserConfig, seed: u64, dtype: DType) -> (Checkpoint, Vec<AnimationRecord>) {
    let records = world(config.image.h, 4, config.drag_capacity);
    let codec = fit_codec(&records, config.codec_factor, config.latent_channels).unwrap();
    let denoiser = Denoiser::new(config, seed, dtype).unwrap();
    (Checkpoint::new(denoiser, codec, NoiseSchedule::default(), TrainingMeta::default()).unwrap(), records)
}

pub fn micro(backbone: Backbone, dtype: DType) -> (Checkpoint, Vec<AnimationRecord>) {
    checkpoint(DenoiserConfig::micro(backbone), 5, dtype)
}

pub fn drag(u: (f64, f64), v: (f64, f64)) -> Drag {
    Drag::new(PixelPoint::new(u.0, u.1), PixelPoint::new(v.0, v.1))
}

/// A few drag sets spread over a `size x size` image.
pub fn drag_sets(size: f64, capacity: usize) -> Vec<DragSet> {
    let s = size;
    let all = [
        drag((0.1 * s, 0.2 * s), (0.6 * s, 0.2 * s)),
        drag((0.7 * s, 0.8 * s), (0.7 * s, 1.3 * s)),
        drag((0.5 * s, 0.5 * s), (0.45 * s, 0.55 * s)),
        drag((0.99 * s, 0.01 * s), (-0.2 * s, 0.3 * s)),
    ];
    (1..=all.len().min(capacity))
        .map(|k| DragSet::new(capacity, all[..k].to_vec()).unwrap())
        .collect()
}

/// Replaces every zero-initialized drag and modulation weight with `scale * N(0, 1)`.
pub fn open_drag_pathways(ckpt: &Checkpoint, scale: f64, seed: u64) {
    for (name, var) in ckpt.denoiser.params().named() {
        let n = var.elem_count();
        if name.contains("drag") || name.contains("ada") {
            let mut r = rng::stream(seed, 55, n as u64);
            let v: Vec<f64> = (0..n).map(|_| scale * rng::normal(&mut r)).collect();
            let t = Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap().to_dtype(var.dtype()).unwrap();
            var.set(&t).unwrap();
        }
    }
}
