#![allow(dead_code)]

use candle_core::{Device, Tensor};
use dragpart::config::{ExperimentConfig, Split};
use dragpart::experiment::{initial_checkpoint, split_records};
use dragpart_core::rng;
use dragpart_diffusion::Checkpoint;

pub fn config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::smoke();
    cfg.sample.steps = 4;
    cfg
}

/// Untrained checkpoint of the smoke config.
pub fn checkpoint(cfg: &ExperimentConfig) -> Checkpoint {
    let records = split_records(cfg, Split::Train).unwrap();
    initial_checkpoint(cfg, &records).unwrap()
}

/// Gives every zero-initialized drag and modulation weight small random values,
/// so drags change the model's output.
pub fn open_drag_pathways(ckpt: &Checkpoint, scale: f64, seed: u64) {
    for (name, var) in ckpt.denoiser.params().named() {
        if name.contains("drag") || name.contains("ada") {
            let n = var.elem_count();
            let mut r = rng::stream(seed, 77, n as u64);
            let v: Vec<f64> = (0..n).map(|_| scale * rng::normal(&mut r)).collect();
            let t = Tensor::from_vec(v, var.dims(), &Device::Cpu).unwrap().to_dtype(var.dtype()).unwrap();
            var.set(&t).unwrap();
        }
    }
}
