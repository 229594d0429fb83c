use multifruit::nn::{
    load_checkpoint, param_count, save_checkpoint, Arch, BackboneKind, CheckpointMeta, Model, ModelSpec,
    MOBILENET_LITE_STAGES,
};
use multifruit::tensor::{BnMode, Prng, Scalar, Tape, Tensor};

fn mobilenet_branch(in_ch: usize) -> usize {
    let conv_bn = |cin: usize, cout: usize, k: usize| cin * cout * k * k + 2 * cout;
    let mut total = conv_bn(in_ch, 16, 3);
    let mut ch = 16;
    for stage in MOBILENET_LITE_STAGES {
        for _ in 0..stage.repeats {
            let hidden = ch * stage.expansion;
            total += conv_bn(ch, hidden, 1) + (9 * hidden + 2 * hidden) + conv_bn(hidden, stage.out_channels, 1);
            ch = stage.out_channels;
        }
    }
    total + conv_bn(ch, 128, 1)
}

fn vgg_branch(in_ch: usize) -> usize {
    let widths = [in_ch, 32, 32, 64, 64, 128, 128];
    widths.windows(2).map(|w| 9 * w[0] * w[1] + w[1]).sum::<usize>() + 128 * 128 + 128
}

fn expected_params(spec: ModelSpec) -> usize {
    let branch = |c| match spec.backbone {
        BackboneKind::MobilenetLite => mobilenet_branch(c),
        BackboneKind::VggLite => vgg_branch(c),
    };
    let (features, branches) = match spec.arch {
        Arch::Multi => (256, branch(3) + branch(1)),
        Arch::Single => (128, branch(3)),
    };
    branches + features * spec.hidden + spec.hidden + spec.hidden * 2 + 2
}

#[test]
fn parameter_counts_match_layer_arithmetic() {
    for arch in [Arch::Multi, Arch::Single] {
        for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
            for hidden in [128, 16] {
                let spec = ModelSpec { arch, backbone, image_size: 64, hidden };
                let m = Model::<f32>::build(spec, &mut Prng::new(0)).unwrap();
                assert_eq!(param_count(&m), expected_params(spec), "{spec:?}");
            }
        }
    }
    let m = Model::<f32>::build(ModelSpec::new(Arch::Multi, BackboneKind::MobilenetLite, 64), &mut Prng::new(0));
    assert_eq!(param_count(&m.unwrap()), 280_482);
}

fn inputs<T: Scalar>(n: usize, size: usize, seed: u64) -> (Tensor<T>, Tensor<T>) {
    let mut p = Prng::new(seed);
    let rgb = Tensor::from_fn(&[n, 3, size, size], |_| T::lit(p.next_f64()));
    let sil = Tensor::from_fn(&[n, 1, size, size], |_| T::lit(if p.next_f64() < 0.4 { 0.0 } else { 1.0 }));
    (rgb, sil)
}

/// A few train-mode steps so the running statistics are not at their
/// initial values.
fn warm_up<T: Scalar>(model: &mut Model<T>, rgb: &Tensor<T>, sil: &Tensor<T>) {
    let sil = model.is_multi_input().then_some(sil);
    for _ in 0..3 {
        let mut tape = Tape::new();
        model.forward(&mut tape, rgb, sil, BnMode::Train).unwrap();
    }
}

fn rows(t: &Tensor<f64>) -> Vec<[f64; 2]> {
    t.data().chunks_exact(2).map(|r| [r[0], r[1]]).collect()
}

#[test]
fn eval_logits_follow_a_batch_permutation() {
    for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
        let mut m = Model::<f64>::build(ModelSpec::new(Arch::Multi, backbone, 32), &mut Prng::new(4)).unwrap();
        let (rgb, sil) = inputs::<f64>(5, 32, 5);
        warm_up(&mut m, &rgb, &sil);
        let perm = [3, 0, 4, 1, 2];
        let gather = |t: &Tensor<f64>| {
            let per = t.len() / t.shape()[0];
            let data: Vec<f64> = perm.iter().flat_map(|&i| t.data()[i * per..(i + 1) * per].to_vec()).collect();
            Tensor::new(t.shape(), data).unwrap()
        };
        let base = rows(&m.predict_logits(&rgb, Some(&sil)).unwrap());
        let permuted = rows(&m.predict_logits(&gather(&rgb), Some(&gather(&sil))).unwrap());
        for (k, &i) in perm.iter().enumerate() {
            for c in 0..2 {
                assert!((permuted[k][c] - base[i][c]).abs() <= 1e-12 * base[i][c].abs().max(1.0));
            }
        }
    }
}

#[test]
fn zeroed_silhouette_columns_make_output_ignore_the_silhouette() {
    let mut m = Model::<f64>::build(ModelSpec::new(Arch::Multi, BackboneKind::MobilenetLite, 32), &mut Prng::new(6))
        .unwrap();
    let (rgb, sil) = inputs::<f64>(3, 32, 7);
    warm_up(&mut m, &rgb, &sil);
    let with = m.predict_logits(&rgb, Some(&sil)).unwrap();
    let rgb_dim = m.rgb_feature_dim();
    let name = m.fusion_weight_name().to_string();
    let w = m.param_mut(&name).unwrap();
    let hidden = w.shape()[1];
    w.data_mut()[rgb_dim * hidden..].fill(0.0);
    let a = m.predict_logits(&rgb, Some(&sil)).unwrap();
    let b = m.predict_logits(&rgb, Some(&Tensor::zeros(sil.shape()))).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), with.data());
}

#[test]
fn single_and_multi_share_rgb_initialisation() {
    for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
        let multi = Model::<f32>::build(ModelSpec::new(Arch::Multi, backbone, 64), &mut Prng::new(9)).unwrap();
        let single = Model::<f32>::build(ModelSpec::new(Arch::Single, backbone, 64), &mut Prng::new(9)).unwrap();
        let rgb: Vec<_> = single.store().params.iter().filter(|(n, _)| n.starts_with("rgb.")).collect();
        assert!(!rgb.is_empty());
        for (name, t) in rgb {
            assert_eq!(multi.param(name).unwrap(), t, "{name}");
        }
    }
}

#[test]
fn initial_weights_are_bit_identical_per_seed() {
    let spec = ModelSpec::new(Arch::Multi, BackboneKind::MobilenetLite, 64);
    let a = Model::<f32>::build(spec, &mut Prng::new(3)).unwrap();
    let b = Model::<f32>::build(spec, &mut Prng::new(3)).unwrap();
    let c = Model::<f32>::build(spec, &mut Prng::new(4)).unwrap();
    let bits = |m: &Model<f32>| m.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_ne!(bits(&a), bits(&c));
}

fn checkpoint_round_trip<T: Scalar>(arch: Arch, backbone: BackboneKind) {
    let spec = ModelSpec { arch, backbone, image_size: 32, hidden: 16 };
    let mut m = Model::<T>::build(spec, &mut Prng::new(12)).unwrap();
    let (rgb, sil) = inputs::<T>(4, 32, 13);
    warm_up(&mut m, &rgb, &sil);
    let sil = m.is_multi_input().then_some(&sil);
    let before = m.predict_logits(&rgb, sil).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let meta = CheckpointMeta {
        epoch: 3,
        val_accuracy: 0.75,
        config_hash: "abc".into(),
        model: spec,
        config: serde_json::json!({"seed": 12}),
    };
    save_checkpoint(&m, &meta, &path).unwrap();
    let ckpt = load_checkpoint(&path).unwrap();
    assert_eq!(ckpt.meta, meta);
    let loaded = Model::<T>::from_checkpoint(&ckpt).unwrap();
    let after = loaded.predict_logits(&rgb, sil).unwrap();
    let bits = |t: &Tensor<T>| t.data().iter().map(|v| v.as_f64().to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after), "{arch:?} {backbone:?}");
    assert_eq!(std::fs::read(&path).unwrap(), loaded.to_checkpoint(meta).to_bytes().unwrap());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for arch in [Arch::Multi, Arch::Single] {
        for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
            checkpoint_round_trip::<f32>(arch, backbone);
            checkpoint_round_trip::<f64>(arch, backbone);
        }
    }
}

#[test]
fn forward_shapes_hold_for_sizes_from_32() {
    for backbone in [BackboneKind::MobilenetLite, BackboneKind::VggLite] {
        for size in [32, 33, 48, 64, 71] {
            let mut m = Model::<f32>::build(ModelSpec::new(Arch::Multi, backbone, size), &mut Prng::new(1)).unwrap();
            let (rgb, sil) = inputs::<f32>(2, size, 2);
            let mut tape = Tape::new();
            let (logits, params) = m.forward(&mut tape, &rgb, Some(&sil), BnMode::Train).unwrap();
            assert_eq!(tape.value(logits).shape(), [2, 2]);
            assert_eq!(params.len(), m.params().len());
        }
        assert!(Model::<f32>::build(ModelSpec::new(Arch::Multi, backbone, 31), &mut Prng::new(1)).is_err());
    }
}
