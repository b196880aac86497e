//! Worlds, training runs and checkpoints of an experiment.

use candle_core::DType;
use dragpart_core::world::AnimationRecord;
use dragpart_core::NoiseSchedule;
use dragpart_diffusion::train::{fit_codec, StepRecord, WorldSource};
use dragpart_diffusion::{train, Checkpoint, Denoiser, TrainReport, TrainingMeta};

use crate::config::{ExperimentConfig, Split};
use crate::dataset::generate_records;
use crate::error::Result;
use crate::hash::{json_hash, sha256_hex};

/// All animations of a split.
pub fn split_records(cfg: &ExperimentConfig, split: Split) -> Result<Vec<AnimationRecord>> {
    let (world, seed) = cfg.split(split);
    generate_records(&world, seed)
}

/// Hash of a generated world's records.
pub fn dataset_hash(records: &[AnimationRecord]) -> Result<String> {
    json_hash(records)
}

pub fn checkpoint_hash(ckpt: &Checkpoint) -> Result<String> {
    Ok(sha256_hex(&ckpt.to_bytes()?))
}

/// Untrained checkpoint with the codec fitted on `records`.
pub fn initial_checkpoint(cfg: &ExperimentConfig, records: &[AnimationRecord]) -> Result<Checkpoint> {
    let codec = fit_codec(records, cfg.model.codec_factor, cfg.model.latent_channels)?;
    let denoiser = Denoiser::new(cfg.model.clone(), cfg.seed, DType::F32)?;
    let meta = TrainingMeta { seed: cfg.seed, iterations: 0, dataset_hash: dataset_hash(records)?, config_hash: cfg.hash()? };
    Ok(Checkpoint::new(denoiser, codec, NoiseSchedule::default(), meta)?)
}

/// Trains the configured model on the training split.
pub fn train_experiment(cfg: &ExperimentConfig, on_step: &mut dyn FnMut(&StepRecord)) -> Result<(Checkpoint, TrainReport)> {
    cfg.validate()?;
    let records = split_records(cfg, Split::Train)?;
    let mut ckpt = initial_checkpoint(cfg, &records)?;
    let mut source = WorldSource::new(records, cfg.dataset.drag_capacity)?;
    let report = train(&ckpt.denoiser, &ckpt.codec, &ckpt.schedule, &mut source, &cfg.train, on_step)?;
    ckpt.meta.iterations = report.steps.len();
    Ok((ckpt, report))
}

/// Logs progress every `every` steps.
pub fn log_progress(every: usize) -> impl FnMut(&StepRecord) {
    let mut sum = 0.0f64;
    move |r: &StepRecord| {
        sum += f64::from(r.loss);
        if (r.step + 1) % every.max(1) == 0 {
            tracing::info!(step = r.step + 1, mean_loss = sum / every.max(1) as f64, "training");
            sum = 0.0;
        }
    }
}
