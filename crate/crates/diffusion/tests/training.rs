mod common;

use candle_core::{DType, Device, Tensor};
use dragpart_core::rng::{self, DetRng};
use dragpart_core::world::Palette;
use dragpart_core::{DragSet, ImageGrid};
use dragpart_diffusion::train::{draw_step, train, ExampleSource, StepRecord, TrainExample, TrainOptions, TrainReport, WorldSource};
use dragpart_diffusion::{Backbone, Checkpoint, DenoiserConfig, Error};

/// Constant 1x1 examples, for exercising the sampling of dropout and texture mixing.
struct Constant {
    drags: DragSet,
}

impl ExampleSource for Constant {
    fn draw(&mut self, _: &mut DetRng, _: bool) -> dragpart_diffusion::Result<TrainExample> {
        let img = ImageGrid::filled(1, 1, 3, 0.5)?;
        Ok(TrainExample { id: 0, x: img.clone(), y: img, drags: self.drags.clone() })
    }
}

/// Replays the per-step draws of `train` without running the model.
fn replay(opts: &TrainOptions, drop_prob: f64) -> TrainReport {
    let mut source = Constant { drags: common::drag_sets(1.0, 5)[0].clone() };
    let steps = (0..opts.steps)
        .map(|step| {
            let mut r = rng::stream(opts.seed, rng::domain::TRAIN, step as u64);
            let (exs, dropped, textured) = draw_step(&mut source, opts, drop_prob, 5, step, &mut r).unwrap();
            assert_eq!(exs.len(), opts.batch);
            assert_eq!(exs.iter().filter(|e| e.drags.is_empty()).count(), dropped as usize);
            StepRecord { step, loss: 0.0, dropped, textured }
        })
        .collect();
    TrainReport { batch: opts.batch, texture_start: opts.texture_start_step(), steps }
}

#[test]
fn drag_dropout_rate_holds_in_every_window() {
    let opts = TrainOptions { steps: 10_000, batch: 8, seed: 3, ..Default::default() };
    let report = replay(&opts, 0.1);
    let rate = report.drop_rate(0, 10_000);
    assert!((0.08..=0.12).contains(&rate), "{rate}");
    for from in (0..=5_000).step_by(500) {
        let r = report.drop_rate(from, from + 5_000);
        assert!((0.08..=0.12).contains(&r), "window {from}: {r}");
    }
}

#[test]
fn texture_mixing_only_in_final_third() {
    let opts = TrainOptions { steps: 15_000, batch: 8, seed: 4, ..Default::default() };
    let report = replay(&opts, 0.1);
    assert_eq!(report.texture_start, 10_000);
    assert_eq!(report.texture_rate(0, 10_000), 0.0);
    let rate = report.texture_rate(10_000, 15_000);
    assert!((0.18..=0.22).contains(&rate), "{rate}");
}

fn micro_run(seed: u64, steps: usize) -> (Checkpoint, TrainReport, usize) {
    let (ckpt, records) = common::micro(Backbone::Unet, DType::F32);
    let mut source = WorldSource::new(records, 2).unwrap();
    let opts = TrainOptions { steps, batch: 2, seed, ..Default::default() };
    let mut seen = 0;
    let report = train(&ckpt.denoiser, &ckpt.codec, &ckpt.schedule, &mut source, &opts, &mut |_| seen += 1).unwrap();
    (ckpt, report, seen)
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let (a, ra, seen) = micro_run(5, 12);
    assert_eq!(seen, 12);
    assert_eq!(ra.steps.iter().map(|s| s.step).collect::<Vec<_>>(), (0..12).collect::<Vec<_>>());
    let (b, rb, _) = micro_run(5, 12);
    assert_eq!(ra, rb);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    let (_, rc, _) = micro_run(6, 12);
    assert_ne!(ra, rc);
}

#[test]
fn initial_loss_matches_unit_noise() {
    let (ckpt, records) = common::checkpoint(DenoiserConfig::default(), 2, DType::F32);
    let mut source = WorldSource::new(records, 5).unwrap();
    let opts = TrainOptions { steps: 1, batch: 8, seed: 1, ..Default::default() };
    let report = train(&ckpt.denoiser, &ckpt.codec, &ckpt.schedule, &mut source, &opts, &mut |_| {}).unwrap();
    let loss = report.steps[0].loss;
    assert!((0.8..=1.2).contains(&loss), "{loss}");
}

#[test]
fn non_finite_loss_aborts_with_batch_ids() {
    let (ckpt, records) = common::micro(Backbone::Dit, DType::F32);
    let var = ckpt.denoiser.params().get("dit.final_out.bias").unwrap();
    var.set(&Tensor::full(f32::NAN, var.dims(), &Device::Cpu).unwrap()).unwrap();
    let mut source = WorldSource::new(records, 2).unwrap();
    let opts = TrainOptions { steps: 3, batch: 3, seed: 1, ..Default::default() };
    match train(&ckpt.denoiser, &ckpt.codec, &ckpt.schedule, &mut source, &opts, &mut |_| {}) {
        Err(Error::NonFinite { step, examples, .. }) => {
            assert_eq!(step, 0);
            assert_eq!(examples.len(), 3);
        }
        other => panic!("expected a non-finite abort, got {other:?}"),
    }
}

#[test]
fn world_examples_pair_distinct_frames() {
    let records = common::world(16, 2, 2);
    let mut source = WorldSource::new(records, 2).unwrap();
    for step in 0..50 {
        let mut r = rng::stream(0, 1, step);
        let ex = source.draw(&mut r, step % 2 == 0).unwrap();
        let frames = 6;
        let (y_frame, x_frame) = ((ex.id / frames) % frames, ex.id % frames);
        assert_ne!(y_frame, x_frame);
    }
    let ex = source.example(1, 0, 5, Palette::Random).unwrap();
    assert_eq!(ex.id, (6 + 0) * 6 + 5);
}
