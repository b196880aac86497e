//! Noise-prediction training with drag dropout and texture mixing.

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use dragpart_core::rng::{self, DetRng};
use dragpart_core::world::{AnimationRecord, Palette};
use dragpart_core::{DragSet, ImageGrid, NoiseSchedule};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{to_signed, Codec};
use crate::drags::prepare_drags;
use crate::error::{Error, Result};
use crate::model::{images_to_tensor, latents_to_tensor, Denoiser, DenoiserInput};

/// One `(x, y, D)` training triplet; images in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub id: u64,
    pub x: ImageGrid,
    pub y: ImageGrid,
    pub drags: DragSet,
}

pub trait ExampleSource {
    fn draw(&mut self, rng: &mut DetRng, random_texture: bool) -> Result<TrainExample>;
}

/// Frame pairs of generated animations, in either temporal order.
pub struct WorldSource {
    records: Vec<AnimationRecord>,
    capacity: usize,
}

impl WorldSource {
    pub fn new(records: Vec<AnimationRecord>, capacity: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Config("training needs at least one animation".into()));
        }
        if records.iter().any(|r| r.frames() < 2) {
            return Err(Error::Config("every animation needs at least two frames".into()));
        }
        Ok(Self { records, capacity })
    }

    pub fn records(&self) -> &[AnimationRecord] {
        &self.records
    }

    /// Example id layout: `(animation · frames + y_frame) · frames + x_frame`.
    pub fn example(&self, animation: usize, y_frame: usize, x_frame: usize, palette: Palette) -> Result<TrainExample> {
        let rec = &self.records[animation];
        let frames = rec.frames();
        Ok(TrainExample {
            id: ((animation * frames + y_frame) * frames + x_frame) as u64,
            x: rec.render(x_frame, palette)?.image,
            y: rec.render(y_frame, palette)?.image,
            drags: rec.drags(y_frame, x_frame, self.capacity)?,
        })
    }
}

impl ExampleSource for WorldSource {
    fn draw(&mut self, rng: &mut DetRng, random_texture: bool) -> Result<TrainExample> {
        let animation = rng.random_range(0..self.records.len());
        let frames = self.records[animation].frames();
        let y_frame = rng.random_range(0..frames);
        let mut x_frame = rng.random_range(0..frames - 1);
        if x_frame >= y_frame {
            x_frame += 1;
        }
        let palette = if random_texture { Palette::Random } else { Palette::Regular };
        self.example(animation, y_frame, x_frame, palette)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch: usize,
    /// Desk-scale default; the reference recipe uses 1e-5 for 150k iterations.
    pub lr: f64,
    pub weight_decay: f64,
    /// Share of random-texture renders once texture mixing starts.
    pub texture_fraction: f64,
    /// Texture mixing starts at this fraction of `steps` (the final third by default).
    pub texture_start: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { steps: 20_000, batch: 8, lr: 2e-4, weight_decay: 0.0, texture_fraction: 0.2, texture_start: 2.0 / 3.0, seed: 0 }
    }
}

impl TrainOptions {
    pub fn texture_start_step(&self) -> usize {
        (self.steps as f64 * self.texture_start).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.texture_fraction) || !(0.0..=1.0).contains(&self.texture_start) {
            return Err(Error::Config("training needs batch >= 1, lr > 0 and fractions in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Per-step log entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f32,
    /// Examples whose drags were dropped.
    pub dropped: u16,
    /// Examples rendered with random textures.
    pub textured: u16,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub batch: usize,
    pub texture_start: usize,
    pub steps: Vec<StepRecord>,
}

impl TrainReport {
    fn window(&self, from: usize, to: usize) -> &[StepRecord] {
        &self.steps[from.min(self.steps.len())..to.min(self.steps.len())]
    }

    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let w = self.window(from, to);
        w.iter().map(|s| s.loss as f64).sum::<f64>() / w.len().max(1) as f64
    }

    pub fn drop_rate(&self, from: usize, to: usize) -> f64 {
        let w = self.window(from, to);
        w.iter().map(|s| s.dropped as f64).sum::<f64>() / (w.len() * self.batch).max(1) as f64
    }

    pub fn texture_rate(&self, from: usize, to: usize) -> f64 {
        let w = self.window(from, to);
        w.iter().map(|s| s.textured as f64).sum::<f64>() / (w.len() * self.batch).max(1) as f64
    }
}

/// A fully materialized batch for the noise-prediction objective.
pub struct PreparedBatch {
    pub ids: Vec<u64>,
    pub z_t: Tensor,
    pub t: Vec<usize>,
    pub y_latent: Tensor,
    pub y_image: Tensor,
    pub drags: Vec<Tensor>,
    pub eps: Tensor,
}

/// Draws `ε`, noises `x`'s latent at `t` and encodes everything for the model.
pub fn prepare_batch(
    model: &Denoiser,
    codec: &Codec,
    schedule: &NoiseSchedule,
    examples: &[TrainExample],
    t: &[usize],
    rng: &mut DetRng,
) -> Result<PreparedBatch> {
    let dtype = model.dtype();
    let mut z_t = Vec::new();
    let mut eps_all = Vec::new();
    let mut y_lat = Vec::with_capacity(examples.len());
    for (ex, &step) in examples.iter().zip(t) {
        let z = codec.encode(&to_signed(&ex.x)?)?;
        let eps: Vec<f32> = (0..z.data.len()).map(|_| rng::normal(rng) as f32).collect();
        z_t.push(crate::codec::Latent { data: schedule.add_noise(&z.data, step, &eps)?, ..z });
        eps_all.extend(eps);
        y_lat.push(codec.encode(&to_signed(&ex.y)?)?);
    }
    let z_refs: Vec<_> = z_t.iter().collect();
    let y_refs: Vec<_> = y_lat.iter().collect();
    let imgs: Vec<_> = examples.iter().map(|e| &e.y).collect();
    let sets: Vec<DragSet> = examples.iter().map(|e| e.drags.clone()).collect();
    let z_t = latents_to_tensor(&z_refs, dtype)?;
    let eps = Tensor::from_vec(eps_all, z_t.shape(), &Device::Cpu)?.to_dtype(dtype)?;
    Ok(PreparedBatch {
        ids: examples.iter().map(|e| e.id).collect(),
        t: t.to_vec(),
        y_latent: latents_to_tensor(&y_refs, dtype)?,
        y_image: images_to_tensor(&imgs, dtype)?,
        drags: prepare_drags(model.config(), &sets, dtype)?,
        eps,
        z_t,
    })
}

/// Mean squared error between predicted and true noise, per element.
pub fn noise_loss(model: &Denoiser, batch: &PreparedBatch) -> Result<Tensor> {
    let out = model.forward(&DenoiserInput {
        z_t: &batch.z_t,
        t: &batch.t,
        y_latent: &batch.y_latent,
        y_image: &batch.y_image,
        drags: &batch.drags,
    })?;
    Ok((out.eps - &batch.eps)?.sqr()?.mean_all()?)
}

/// Draws the examples of one step: texture choice, then the example, then drag dropout.
pub fn draw_step(
    source: &mut dyn ExampleSource,
    opts: &TrainOptions,
    drop_prob: f64,
    capacity: usize,
    step: usize,
    rng: &mut DetRng,
) -> Result<(Vec<TrainExample>, u16, u16)> {
    let mixing = step >= opts.texture_start_step();
    let (mut dropped, mut textured) = (0u16, 0u16);
    let mut examples = Vec::with_capacity(opts.batch);
    for _ in 0..opts.batch {
        let random_texture = mixing && rng.random::<f64>() < opts.texture_fraction;
        let mut ex = source.draw(rng, random_texture)?;
        if rng.random::<f64>() < drop_prob {
            ex.drags = DragSet::empty(capacity);
            dropped += 1;
        }
        textured += random_texture as u16;
        examples.push(ex);
    }
    Ok((examples, dropped, textured))
}

/// Trains `model` in place; `on_step` sees every step record as it completes.
pub fn train(
    model: &Denoiser,
    codec: &Codec,
    schedule: &NoiseSchedule,
    source: &mut dyn ExampleSource,
    opts: &TrainOptions,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    opts.validate()?;
    if model.dtype() != DType::F32 && model.dtype() != DType::F64 {
        return Err(Error::Config("training needs a float model".into()));
    }
    let config = model.config();
    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW { lr: opts.lr, weight_decay: opts.weight_decay, ..Default::default() },
    )?;
    let mut report = TrainReport { batch: opts.batch, texture_start: opts.texture_start_step(), steps: Vec::with_capacity(opts.steps) };
    for step in 0..opts.steps {
        let mut rng = rng::stream(opts.seed, rng::domain::TRAIN, step as u64);
        let (examples, dropped, textured) = draw_step(source, opts, config.drop_prob, config.drag_capacity, step, &mut rng)?;
        let t: Vec<usize> = examples.iter().map(|_| rng.random_range(1..=schedule.steps())).collect();
        let batch = prepare_batch(model, codec, schedule, &examples, &t, &mut rng)?;
        let loss = noise_loss(model, &batch)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite { step, loss: value, examples: batch.ids });
        }
        opt.backward_step(&loss)?;
        let record = StepRecord { step, loss: value as f32, dropped, textured };
        on_step(&record);
        report.steps.push(record);
    }
    Ok(report)
}

/// Fits the codec on the first, middle and last frame of every animation, in both palettes.
pub fn fit_codec(records: &[AnimationRecord], factor: usize, latent_channels: usize) -> Result<Codec> {
    let mut images = Vec::with_capacity(records.len() * 6);
    for rec in records {
        let last = rec.frames() - 1;
        for n in [0, last / 2, last] {
            for palette in [Palette::Regular, Palette::Random] {
                images.push(to_signed(&rec.render(n, palette)?.image)?);
            }
        }
    }
    Codec::fit(&images, factor, latent_channels)
}
