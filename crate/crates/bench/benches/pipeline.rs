use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sacroscan::autodiff::{AdamW, AdamWConfig, Tape, Tensor};
use sacroscan::imgproc::{clahe, match_template_ncc, split_midline, ClaheParams, PatchSource, RoiPatch};
use sacroscan::metrics::roc_auc;
use sacroscan::nets::{batch_inputs, AuxFeatures, AuxUse, BackboneKind, BackboneSpec, Network};
use sacroscan::phantom::{self, PhantomSpec};
use sacroscan::{Image, Label, Sex, Side};

fn random_patch(rng: &mut ChaCha8Rng, side: usize) -> RoiPatch {
    let img = Image::from_fn(side, side, |_, _| rng.random());
    let source = PatchSource {
        patient_id: "b".into(),
        side: Side::Left,
    };
    RoiPatch::new(img, source, true).unwrap()
}

fn imaging(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let patch = random_patch(&mut rng, 64);
    let params = ClaheParams::default();
    c.bench_function("clahe_64", |b| b.iter(|| clahe(black_box(&patch), &params).unwrap()));

    let spec = PhantomSpec::new(1, 3);
    let draw = phantom::draw_patient(&spec, 0).unwrap();
    let image = phantom::render_patient(&spec, &draw);
    let template = phantom::template(&spec).unwrap();
    let (left, _) = split_midline(&image).unwrap();
    c.bench_function("ncc_half_image", |b| {
        b.iter(|| match_template_ncc(black_box(&left), &template).unwrap())
    });
    c.bench_function("phantom_patient", |b| {
        b.iter(|| phantom::generate_patient(&spec, black_box(0)).unwrap())
    });
}

fn training(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::<f32>::from_fn(&[16, 8, 32, 32], |_| rng.random_range(-1.0..1.0));
    let w = Tensor::<f32>::from_fn(&[8, 8, 3, 3], |_| rng.random_range(-0.3..0.3));
    c.bench_function("conv3x3_fwd_bwd_16x8x32", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xi = tape.input(x.clone());
            let wi = tape.param(w.clone());
            let y = tape.conv2d(xi, wi, None, 1, 1).unwrap();
            let s = tape.sum(y);
            tape.backward(s).unwrap()
        })
    });

    let batch = 16;
    let patches: Vec<RoiPatch> = (0..batch).map(|_| random_patch(&mut rng, 64)).collect();
    let refs: Vec<&RoiPatch> = patches.iter().collect();
    let aux = vec![AuxFeatures::new(40, Sex::Male).unwrap(); batch];
    let labels: Vec<usize> = (0..batch).map(|i| i % 2).collect();
    for kind in [BackboneKind::Dense, BackboneKind::Residual] {
        let spec = BackboneSpec::desk(kind, 64);
        let mut net = Network::<f32>::build(&spec, AuxUse::default(), &mut rng).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), net.params());
        let (images, covariates) = batch_inputs(&refs, &aux, AuxUse::default(), 64).unwrap();
        c.bench_function(&format!("train_step_{}_b16", kind.as_str()), |b| {
            b.iter(|| {
                net.train_step(&mut opt, images.clone(), covariates.clone(), &labels)
                    .unwrap()
            })
        });
    }
}

fn evaluation(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;
    let probs: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let labels: Vec<Label> = (0..n)
        .map(|i| if i % 3 == 0 { Label::ActiveInflammation } else { Label::Healthy })
        .collect();
    c.bench_function("roc_auc_10k", |b| b.iter(|| roc_auc(black_box(&probs), &labels).unwrap()));
}

criterion_group!(benches, imaging, training, evaluation);
criterion_main!(benches);
