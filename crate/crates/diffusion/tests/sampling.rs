mod common;

use candle_core::{DType, Device, Tensor};
use dragpart_core::world::Palette;
use dragpart_core::{DragSet, ImageGrid};
use dragpart_diffusion::codec::to_signed;
use dragpart_diffusion::drags::prepare_drags;
use dragpart_diffusion::model::{images_to_tensor, latents_to_tensor};
use dragpart_diffusion::sample::sample_latent;
use dragpart_diffusion::{sample, Backbone, Checkpoint, DenoiserInput, SampleOptions};
use dragpart_core::rng;

fn setup(backbone: Backbone) -> (Checkpoint, ImageGrid, DragSet) {
    let (ckpt, records) = common::micro(backbone, DType::F32);
    common::open_drag_pathways(&ckpt, 0.1, 8);
    let y = records[1].render(0, Palette::Regular).unwrap().image;
    let d = common::drag_sets(16.0, 2)[1].clone();
    (ckpt, y, d)
}

#[test]
fn same_seed_is_bitwise_identical() {
    for backbone in [Backbone::Unet, Backbone::Dit] {
        let (ckpt, y, d) = setup(backbone);
        let opts = SampleOptions { steps: 10, guidance: 5.0, seed: 7 };
        let a = sample(&ckpt, &y, &d, &opts).unwrap();
        let b = sample(&ckpt, &y, &d, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let c = sample(&ckpt, &y, &d, &SampleOptions { seed: 8, ..opts }).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn guidance_mixes_conditional_and_unconditional() {
    let (ckpt, y, d) = setup(Backbone::Unet);
    let opts = |guidance| SampleOptions { steps: 6, guidance, seed: 1 };
    let w1 = sample_latent(&ckpt, &y, &d, &opts(1.0)).unwrap();
    let w5 = sample_latent(&ckpt, &y, &d, &opts(5.0)).unwrap();
    assert_ne!(w1.data, w5.data);

    // With no drags both branches coincide, so the weight has no effect.
    let empty = DragSet::empty(2);
    let e1 = sample_latent(&ckpt, &y, &empty, &opts(1.0)).unwrap();
    let e5 = sample_latent(&ckpt, &y, &empty, &opts(5.0)).unwrap();
    assert_eq!(e1.data, e5.data);
    assert_ne!(e1.data, w1.data);
}

/// Plain DDIM loop on the conditional estimate only.
fn conditional_ddim(ckpt: &Checkpoint, y: &ImageGrid, d: &DragSet, steps: usize, seed: u64) -> Vec<f32> {
    let model = &ckpt.denoiser;
    let yl = ckpt.codec.encode(&to_signed(y).unwrap()).unwrap();
    let y_latent = latents_to_tensor(&[&yl], DType::F32).unwrap();
    let y_image = images_to_tensor(&[y], DType::F32).unwrap();
    let drags = prepare_drags(model.config(), std::slice::from_ref(d), DType::F32).unwrap();
    let mut r = rng::stream(seed, rng::domain::SAMPLE, 0);
    let mut z: Vec<f64> = (0..yl.data.len()).map(|_| rng::normal(&mut r)).collect();
    let s = &ckpt.schedule;
    let ts = s.sampling_timesteps(steps).unwrap();
    for (i, &t) in ts.iter().enumerate() {
        let zt = Tensor::from_iter(z.iter().map(|&v| v as f32), &Device::Cpu).unwrap().reshape(y_latent.shape()).unwrap();
        let out = model
            .forward(&DenoiserInput { z_t: &zt, t: &[t], y_latent: &y_latent, y_image: &y_image, drags: &drags })
            .unwrap();
        let eps: Vec<f32> = out.eps.flatten_all().unwrap().to_vec1().unwrap();
        let next = if i + 1 < ts.len() { ts[i + 1] } else { 0 };
        for (zi, &e) in z.iter_mut().zip(&eps) {
            let x0 = (*zi - s.sigma(t) * e as f64) / s.signal(t);
            *zi = s.signal(next) * x0 + s.sigma(next) * e as f64;
        }
    }
    z.into_iter().map(|v| v as f32).collect()
}

#[test]
fn unit_guidance_is_conditional_only_sampling() {
    for backbone in [Backbone::Unet, Backbone::Dit] {
        let (ckpt, y, d) = setup(backbone);
        let got = sample_latent(&ckpt, &y, &d, &SampleOptions { steps: 5, guidance: 1.0, seed: 3 }).unwrap();
        assert_eq!(got.data, conditional_ddim(&ckpt, &y, &d, 5, 3));
    }
}

#[test]
fn incompatible_inputs_are_rejected() {
    let (ckpt, _, d) = setup(Backbone::Unet);
    let wrong = ImageGrid::filled(32, 32, 3, 0.5).unwrap();
    let err = sample(&ckpt, &wrong, &d, &SampleOptions::default()).unwrap_err();
    assert!(matches!(err, dragpart_diffusion::Error::Config(_)), "{err}");

    let y = ImageGrid::filled(16, 16, 3, 0.5).unwrap();
    let too_many = DragSet::new(3, common::drag_sets(16.0, 3)[2].drags().to_vec()).unwrap();
    let err = sample(&ckpt, &y, &too_many, &SampleOptions::default()).unwrap_err();
    assert!(err.is_capacity(), "{err}");
}
