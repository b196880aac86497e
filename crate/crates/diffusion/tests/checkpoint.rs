mod common;

use candle_core::DType;
use dragpart_diffusion::{Backbone, Checkpoint, Error, SampleOptions, TrainingMeta};

fn trained_looking(backbone: Backbone) -> Checkpoint {
    let (mut ckpt, _) = common::micro(backbone, DType::F32);
    common::open_drag_pathways(&ckpt, 0.1, 4);
    ckpt.meta = TrainingMeta { seed: 9, iterations: 123, dataset_hash: "ab12".into(), config_hash: "cd34".into() };
    ckpt
}

#[test]
fn round_trip_preserves_weights_and_outputs() {
    for backbone in [Backbone::Unet, Backbone::Dit] {
        let ckpt = trained_looking(backbone);
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back.config(), ckpt.config());
        assert_eq!(back.codec, ckpt.codec);
        assert_eq!(back.schedule, ckpt.schedule);
        assert_eq!(back.meta, ckpt.meta);
        for ((na, a), (nb, b)) in ckpt.denoiser.params().named().zip(back.denoiser.params().named()) {
            assert_eq!(na, nb);
            let a: Vec<f32> = a.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = b.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b, "{na}");
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);

        let y = common::world(16, 1, 2)[0].render(0, dragpart_core::world::Palette::Regular).unwrap().image;
        let d = common::drag_sets(16.0, 2)[1].clone();
        let opts = SampleOptions { steps: 4, guidance: 5.0, seed: 2 };
        let x1 = dragpart_diffusion::sample(&ckpt, &y, &d, &opts).unwrap();
        let x2 = dragpart_diffusion::sample(&back, &y, &d, &opts).unwrap();
        assert_eq!(x1, x2);
    }
}

#[test]
fn file_round_trip() {
    let ckpt = trained_looking(Backbone::Unet);
    let path = std::env::temp_dir().join(format!("dragpart-ckpt-{}.bin", std::process::id()));
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    std::fs::remove_file(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());
}

#[test]
fn corrupt_files_are_rejected() {
    let bytes = trained_looking(Backbone::Dit).to_bytes().unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::read_from(bad_magic.as_slice()), Err(Error::Checkpoint(_))));

    let mut bad_version = bytes.clone();
    bad_version[8] = 77;
    assert!(matches!(Checkpoint::read_from(bad_version.as_slice()), Err(Error::Checkpoint(_))));

    assert!(Checkpoint::read_from(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::read_from(&bytes[..20]).is_err());

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(Checkpoint::read_from(trailing.as_slice()), Err(Error::Checkpoint(_))));
}
