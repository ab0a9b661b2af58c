use rand::Rng;
use sacroscan::autodiff::{AdamW, AdamWConfig, Mode, Tape, Tensor};
use sacroscan::imgproc::{PatchSource, RoiPatch};
use sacroscan::nets::checkpoint::{self, Provenance};
use sacroscan::nets::{
    AuxFeatures, AuxUse, BackboneKind, BackboneSpec, EnsembleModel, Network,
    DENSE_LAYERS_PER_STAGE, HEAD_WEIGHT, RESIDUAL_BLOCKS_PER_STAGE,
};
use sacroscan::rng::stream;
use sacroscan::{Image, Sex, Side};

fn small(kind: BackboneKind) -> BackboneSpec {
    BackboneSpec {
        kind,
        input_side: 16,
        stem_channels: 4,
        stages: 2,
        growth_or_width: 4,
    }
}

fn patch(seed: u64, side: usize) -> RoiPatch {
    let mut r = stream(seed, &[]);
    let img = Image::from_fn(side, side, |_, _| r.random());
    RoiPatch::new(
        img,
        PatchSource {
            patient_id: "p1".into(),
            side: Side::Left,
        },
        true,
    )
    .unwrap()
}

fn aux(age: u32, sex: Sex) -> AuxFeatures {
    AuxFeatures::new(age, sex).unwrap()
}

fn build(spec: &BackboneSpec, seed: u64) -> Network<f64> {
    Network::build(spec, AuxUse::default(), &mut stream(seed, &[])).unwrap()
}

/// Trains a few steps so batch-norm statistics and weights move off their
/// initial values.
fn trained(spec: &BackboneSpec, seed: u64) -> Network<f64> {
    let mut net = build(spec, seed);
    let mut opt = AdamW::new(AdamWConfig::default(), net.params());
    let side = spec.input_side;
    let mut r = stream(seed, &[1]);
    for _ in 0..3 {
        let images = Tensor::from_fn(&[4, 1, side, side], |_| r.random::<f64>());
        let a = Tensor::from_fn(&[4, 3], |_| r.random::<f64>());
        net.train_step(&mut opt, images, a, &[0, 1, 1, 0]).unwrap();
    }
    net
}

fn count_formula(spec: &BackboneSpec) -> usize {
    let s = spec.stem_channels;
    let mut n = 9 * s + 2 * s;
    match spec.kind {
        BackboneKind::Dense => {
            let g = spec.growth_or_width;
            let mut c = s;
            for _ in 0..spec.stages {
                for _ in 0..DENSE_LAYERS_PER_STAGE {
                    n += 2 * c + 9 * c * g;
                    c += g;
                }
            }
            n += 2 * c;
        }
        BackboneKind::Residual => {
            let mut c = s;
            for st in 0..spec.stages {
                let w = spec.growth_or_width << st;
                for b in 0..RESIDUAL_BLOCKS_PER_STAGE {
                    n += 9 * c * w + 2 * w + 9 * w * w + 2 * w;
                    if (st > 0 && b == 0) || c != w {
                        n += c * w + 2 * w;
                    }
                    c = w;
                }
            }
        }
        BackboneKind::Plain => {
            let mut c = s;
            for st in 0..spec.stages {
                let w = spec.growth_or_width << st;
                n += 9 * c * w + 2 * w;
                c = w;
            }
        }
    }
    n + 2 * (spec.feature_dim() + 3) + 2
}

#[test]
fn same_stream_builds_identical_parameters() {
    for kind in [BackboneKind::Dense, BackboneKind::Residual, BackboneKind::Plain] {
        let a = build(&small(kind), 5);
        let b = build(&small(kind), 5);
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), build(&small(kind), 6).params());
    }
}

#[test]
fn parameter_count_matches_closed_form() {
    let specs = [
        small(BackboneKind::Dense),
        small(BackboneKind::Residual),
        small(BackboneKind::Plain),
        BackboneSpec::new(BackboneKind::Dense, 64),
        BackboneSpec::new(BackboneKind::Residual, 64),
        BackboneSpec::new(BackboneKind::Plain, 64),
        BackboneSpec {
            kind: BackboneKind::Residual,
            input_side: 32,
            stem_channels: 8,
            stages: 3,
            growth_or_width: 8,
        },
    ];
    for spec in specs {
        let net = build(&spec, 1);
        assert_eq!(net.params().scalar_count(), count_formula(&spec), "{}", spec.descriptor());
    }
}

#[test]
fn zeroed_residual_branches_reduce_to_stem_path() {
    let spec = BackboneSpec {
        kind: BackboneKind::Residual,
        input_side: 16,
        stem_channels: 4,
        stages: 1,
        growth_or_width: 4,
    };
    let mut net = trained(&spec, 3);
    let names: Vec<String> = net.params().names().to_vec();
    for (i, name) in names.iter().enumerate() {
        if name.contains(".block") && name.contains(".conv") {
            for v in net.params_mut().tensor_mut(i).data_mut() {
                *v = 0.0;
            }
        }
    }
    // zero branch conv output -> bn gives beta - gamma * mean / sqrt(var + eps)
    for (i, name) in names.iter().enumerate() {
        if name.contains(".block") && name.ends_with(".beta") {
            let bn = name.trim_end_matches(".beta");
            let k = net.stat_names().iter().position(|s| s == bn).unwrap();
            let stats = net.running_stats()[k].clone();
            let gamma = net.params().tensor(i - 1).clone();
            let beta = net.params_mut().tensor_mut(i);
            for (c, b) in beta.data_mut().iter_mut().enumerate() {
                *b = gamma.data()[c] * stats.mean[c]
                    / (stats.var[c] + sacroscan::autodiff::BN_EPS).sqrt();
            }
        }
    }
    let p = patch(9, 16);
    let a = aux(40, Sex::Male);
    let got = net.forward_member(&p, &a).unwrap();

    let mut tape = Tape::new();
    let ps = net.params();
    let get = |n: &str| ps.get(ps.find(n).unwrap()).clone();
    let x = tape.input(Tensor::new(&[1, 1, 16, 16], p.pixels().data().to_vec()).unwrap());
    let w = tape.param(get("stem.conv.weight"));
    let g = tape.param(get("stem.bn.gamma"));
    let b = tape.param(get("stem.bn.beta"));
    let mut stats = net.running_stats()[0].clone();
    let h = tape.conv2d(x, w, None, 2, 1).unwrap();
    let h = tape.batch_norm(h, g, b, &mut stats, Mode::Eval).unwrap();
    let h = tape.relu(h);
    let h = tape.max_pool2d(h, 2, 2).unwrap();
    let f = tape.global_avg_pool(h).unwrap();
    let av = tape.input(Tensor::new(&[1, 3], AuxUse::default().encode(&a).to_vec()).unwrap());
    let fused = tape.concat(&[f, av]).unwrap();
    let hw = tape.param(get("head.weight"));
    let hb = tape.param(get("head.bias"));
    let logits = tape.linear(fused, hw, hb).unwrap();
    let z = tape.value(logits).data();
    let want = 1.0 / (1.0 + (z[0] - z[1]).exp());
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

#[test]
fn zeroed_head_gives_one_half() {
    for kind in [BackboneKind::Dense, BackboneKind::Residual, BackboneKind::Plain] {
        let mut net = trained(&small(kind), 4);
        let (w, b) = net.head_ids();
        for id in [w, b] {
            net.params_mut().get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(net.forward_member(&patch(1, 16), &aux(30, Sex::Female)).unwrap(), 0.5);
    }
}

#[test]
fn outputs_are_probabilities() {
    let net = trained(&small(BackboneKind::Dense), 8);
    for s in 0..20 {
        let p = net.forward_member(&patch(s, 16), &aux(20 + s as u32, Sex::Male)).unwrap();
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn zeroed_fusion_weights_ignore_covariates() {
    let spec = small(BackboneKind::Residual);
    let mut net = trained(&spec, 2);
    let fd = spec.feature_dim();
    let id = net.params().find(HEAD_WEIGHT).unwrap();
    let w = net.params_mut().get_mut(id);
    let cols = w.shape()[1];
    for row in 0..2 {
        for c in fd..cols {
            w.data_mut()[row * cols + c] = 0.0;
        }
    }
    let p = patch(3, 16);
    let base = net.forward_member(&p, &aux(25, Sex::Female)).unwrap();
    for (age, sex) in [(80, Sex::Male), (5, Sex::Female), (51, Sex::Male)] {
        assert_eq!(net.forward_member(&p, &aux(age, sex)).unwrap(), base);
    }
}

#[test]
fn disabled_covariates_are_ignored() {
    let net: Network<f64> = Network::build(
        &small(BackboneKind::Plain),
        AuxUse {
            age: false,
            sex: false,
        },
        &mut stream(1, &[]),
    )
    .unwrap();
    let p = patch(3, 16);
    let a = net.forward_member(&p, &aux(25, Sex::Female)).unwrap();
    let b = net.forward_member(&p, &aux(70, Sex::Male)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn double_mirror_is_bitwise_invariant() {
    let net = trained(&small(BackboneKind::Dense), 6);
    let p = patch(12, 16);
    let twice = p
        .with_pixels(p.pixels().mirrored().mirrored())
        .unwrap();
    let a = aux(45, Sex::Female);
    assert_eq!(
        net.forward_member(&p, &a).unwrap().to_bits(),
        net.forward_member(&twice, &a).unwrap().to_bits()
    );
}

#[test]
fn unnormalized_patch_is_rejected() {
    let net = build(&small(BackboneKind::Plain), 1);
    let img = Image::from_fn(16, 16, |r, _| r as f64);
    let src = PatchSource {
        patient_id: "p".into(),
        side: Side::Right,
    };
    let raw = RoiPatch::new(img, src, false).unwrap();
    let err = net.forward_member(&raw, &aux(40, Sex::Male)).unwrap_err();
    assert!(err.is_validation(), "{err}");
    assert!(net.forward_member(&patch(0, 32), &aux(40, Sex::Male)).is_err());
}

#[test]
fn ensemble_is_mean_of_members() {
    let members = vec![
        trained(&small(BackboneKind::Dense), 1),
        trained(&small(BackboneKind::Residual), 2),
        trained(&small(BackboneKind::Plain), 3),
    ];
    let p = patch(4, 16);
    let a = aux(33, Sex::Male);
    let probs: Vec<f64> = members.iter().map(|m| m.forward_member(&p, &a).unwrap()).collect();
    let model = EnsembleModel::new(members.clone()).unwrap();
    let got = model.predict(&p, &a).unwrap();
    assert!((got - probs.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    let mut rev = members.clone();
    rev.reverse();
    assert_eq!(EnsembleModel::new(rev).unwrap().predict(&p, &a).unwrap(), got);
    let single = EnsembleModel::new(vec![members[1].clone()]).unwrap();
    assert_eq!(single.predict(&p, &a).unwrap(), probs[1]);
}

#[test]
fn ensemble_rejects_mixed_sides() {
    let mut other = small(BackboneKind::Plain);
    other.input_side = 32;
    let err = EnsembleModel::new(vec![build(&small(BackboneKind::Plain), 1), build(&other, 1)]);
    assert!(err.is_err());
    assert!(EnsembleModel::<f64>::new(vec![]).is_err());
}

#[test]
fn checkpoint_round_trips_predictions() {
    let to_f32 = |seed: u64, kind| -> Network<f32> {
        let mut net: Network<f32> =
            Network::build(&small(kind), AuxUse::default(), &mut stream(seed, &[])).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), net.params());
        let mut r = stream(seed, &[2]);
        for _ in 0..2 {
            let images = Tensor::from_fn(&[4, 1, 16, 16], |_| r.random::<f32>());
            let a = Tensor::from_fn(&[4, 3], |_| r.random::<f32>());
            net.train_step(&mut opt, images, a, &[1, 0, 1, 0]).unwrap();
        }
        net
    };
    let model = EnsembleModel::new(vec![
        to_f32(1, BackboneKind::Dense),
        to_f32(2, BackboneKind::Residual),
    ])
    .unwrap();
    let prov = Provenance {
        seed: 17,
        fold: Some(3),
        epochs: 20,
        batch_size: 16,
        optimizer: Some(AdamWConfig::default()),
    };
    let bytes = checkpoint::encode(&model, &prov);
    assert_eq!(&bytes[..4], b"JNT1");
    let (back, prov_back) = checkpoint::decode::<f32>(&bytes).unwrap();
    assert_eq!(prov_back, prov);
    for (a, b) in model.members().iter().zip(back.members()) {
        assert_eq!(a.params(), b.params());
        assert_eq!(a.running_stats(), b.running_stats());
        assert_eq!(a.spec(), b.spec());
    }
    let p = patch(5, 16);
    let a = aux(60, Sex::Female);
    assert_eq!(model.predict(&p, &a).unwrap(), back.predict(&p, &a).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jnt");
    checkpoint::save(&path, &model, &prov).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let (loaded, _) = checkpoint::load::<f32>(&path).unwrap();
    assert_eq!(loaded.predict(&p, &a).unwrap(), back.predict(&p, &a).unwrap());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let model = EnsembleModel::new(vec![build(&small(BackboneKind::Plain), 1)]).unwrap();
    let bytes = checkpoint::encode(&model, &Provenance::default());
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(checkpoint::decode::<f64>(&bad_magic).is_err());
    assert!(checkpoint::decode::<f64>(&bytes[..bytes.len() - 4]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&[0; 4]);
    assert!(checkpoint::decode::<f64>(&extra).is_err());
}
