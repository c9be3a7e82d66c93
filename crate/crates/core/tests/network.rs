use egopose::heatmap::{render, resample};
use egopose::kinematics::{extract_rotations, forward_kinematics, Quaternion, Skeleton, NUM_HEATMAPS};
use egopose::network::*;
use egopose::synth::{generate, sample_pose, PerSplit, PoseLimits, SampleRecord, SynthConfig};
use egopose::tensor::gradcheck::{check_inputs, check_params};
use egopose::tensor::{save_checkpoint, ParamStore, Tape, Tensor, Var};
use egopose::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;

fn small_dataset(train: usize) -> egopose::synth::Dataset {
    let cfg = SynthConfig {
        frames: PerSplit { train, test: 8, val: 8 },
        characters: PerSplit { train: 2, test: 1, val: 1 },
        ..SynthConfig::default()
    };
    generate(&cfg, &Skeleton::egocentric(), 3).unwrap()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn random_pose(seed: u64, skel: &Skeleton) -> Vec<[f64; 3]> {
    let limits = PoseLimits::new(skel, &egopose::synth::default_limits()).unwrap();
    let rot = sample_pose(seed, &limits, skel);
    forward_kinematics(&rot, skel, [0.0, -0.15, 0.12])
}

fn forward_default(cfg: &LifterConfig, batch: usize) -> (Tape<f32>, LifterOutputs) {
    let model: LifterModel = LifterModel::init(cfg, 1, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = cfg.input_size;
    let input = rand_tensor(&mut rng, &[batch, NUM_HEATMAPS, s, s], 0.0, 1.0).cast::<f32>();
    let mut tape = Tape::new();
    let mut pass = Pass::new(&mut tape, &model.params, false);
    let x = pass.tape.constant(input);
    let out = model.net.forward(&mut pass, x, Heads::ALL).unwrap();
    (tape, out)
}

#[test]
fn default_lifter_output_shapes_and_unit_rotations() {
    let (tape, out) = forward_default(&LifterConfig::default(), 2);
    assert_eq!(tape.value(out.pose).shape(), &[2, 16, 3]);
    assert_eq!(tape.value(out.rot.unwrap()).shape(), &[2, 16, 4]);
    assert_eq!(tape.value(out.hm.unwrap()).shape(), &[2, 15, 48, 48]);
    assert_eq!(tape.value(out.z).shape(), &[2, 50]);
    for q in tape.value(out.rot.unwrap()).data().chunks(4) {
        let n: f32 = q.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((n - 1.0).abs() < 1e-6, "norm {n}");
    }
}

#[test]
fn latent_and_reconstruction_sizes_follow_config() {
    let cfg = LifterConfig { z_size: 10, ..LifterConfig::default() };
    let (tape, out) = forward_default(&cfg, 1);
    assert_eq!(tape.value(out.z).shape(), &[1, 10]);
    for s in [36, 24, 16, 8] {
        let cfg = LifterConfig { hm_size: s, ..LifterConfig::default() };
        let (tape, out) = forward_default(&cfg, 1);
        assert_eq!(tape.value(out.hm.unwrap()).shape(), &[1, 15, s, s]);
    }
    assert!(LifterConfig { z_size: 11, ..LifterConfig::default() }.validate(true).is_err());
    assert!(LifterConfig { hm_size: 30, ..LifterConfig::default() }.validate(true).is_err());
}

#[test]
fn disabled_branches_have_no_parameters_and_no_outputs() {
    let full: LifterModel = LifterModel::init(&LifterConfig::default(), 1, None).unwrap();
    let cfg = LifterConfig { branches: BranchConfig::P3D, ..LifterConfig::default() };
    let p3d: LifterModel = LifterModel::init(&cfg, 1, None).unwrap();
    assert!(p3d.params.names().all(|n| !n.starts_with("lift.rot") && !n.starts_with("lift.hm")));
    assert!(full.params.names().any(|n| n.starts_with("lift.rot")));
    let (tape, out) = forward_default(&cfg, 1);
    assert!(out.rot.is_none() && out.hm.is_none());
    assert_eq!(tape.value(out.pose).shape(), &[1, 16, 3]);
    // shared parameters are initialised identically
    for name in p3d.params.names() {
        assert_eq!(p3d.params.value(name).unwrap(), full.params.value(name).unwrap(), "{name}");
    }
}

#[test]
fn branches_never_change_the_pose_output() {
    let data = small_dataset(16);
    let full: LifterModel = LifterModel::init(&LifterConfig::default(), 5, None).unwrap();
    let mut p3d: LifterModel = full.clone();
    p3d.net.cfg.branches = BranchConfig::P3D;
    let records: Vec<SampleRecord> = data.train.clone();
    let a = predict_records(&full, &records, 2.0, Heads::ALL).unwrap();
    let b = predict_records(&full, &records, 2.0, Heads::POSE_ONLY).unwrap();
    let c = predict_records(&p3d, &records, 2.0, Heads::ALL).unwrap();
    for ((a, b), c) in a.iter().zip(&b).zip(&c) {
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.pose, c.pose);
        assert!(a.hm.is_some() && b.hm.is_none() && c.hm.is_none());
    }
    // training-mode statistics are per layer, so the same holds there
    let batch: Vec<&SampleRecord> = records.iter().collect();
    let input = render_batch::<f32>(&batch, 47, 2.0).unwrap();
    let run = |m: &LifterModel, heads: Heads| {
        let mut tape = Tape::new();
        let mut pass = Pass::new(&mut tape, &m.params, true);
        let x = pass.tape.constant(input.clone());
        let out = m.net.forward(&mut pass, x, heads).unwrap();
        tape.value(out.pose).clone()
    };
    assert_eq!(run(&full, Heads::ALL), run(&p3d, Heads::ALL));
}

#[test]
fn loss_weight_defaults() {
    let w = LossWeights::default();
    assert_eq!((w.lambda_hm, w.lambda_p, w.lambda_r, w.lambda_theta, w.lambda_l), (1e-3, 1e-1, 1e-1, -1e-2, 0.5));
    let parsed: LossWeights = toml::from_str("").unwrap();
    assert_eq!(parsed, w);
    assert!(toml::from_str::<LossWeights>("lambda_x = 1.0").is_err());
}

fn perfect_loss(target: RotationTarget, flip: bool) -> f64 {
    let skel = Skeleton::egocentric();
    let pose = random_pose(11, &skel);
    let rot = extract_rotations(&pose, &skel).unwrap();
    let p = Tensor::<f64>::new(&[1, 16, 3], pose.iter().flatten().copied().collect()).unwrap();
    let q: Vec<f64> = rot.iter().flat_map(|q| if flip { q.neg() } else { *q }.to_array()).collect();
    let r = Tensor::<f64>::new(&[1, 16, 4], rot.iter().flat_map(|q| q.to_array()).collect()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hm = rand_tensor(&mut rng, &[1, 15, 48, 48], 0.0, 1.0);

    let mut tape = Tape::new();
    let out = LifterOutputs {
        pose: tape.leaf(p.clone()),
        rot: Some(tape.leaf(r)),
        hm: Some(tape.leaf(hm.clone())),
        z: tape.leaf(Tensor::zeros(&[1, 50])),
    };
    let targets = AeTargets {
        pose: p,
        rot: Tensor::new(&[1, 16, 4], q).unwrap(),
        hm: Some(hm),
        has_3d: vec![true],
    };
    let (loss, terms) = loss_ae(&mut tape, &out, &targets, &LossWeights::default(), &skel, target).unwrap();
    assert_eq!(tape.value(loss).data()[0], terms.total);
    terms.total
}

#[test]
fn perfect_prediction_loss_is_the_cosine_offset() {
    let want = 0.1 * -0.01 * 15.0;
    for target in [RotationTarget::PredictedPose, RotationTarget::GroundTruth] {
        let l = perfect_loss(target, false);
        assert!((l - want).abs() < 1e-12, "{target:?}: {l}");
        assert!((l + 0.015).abs() < 1e-12);
    }
}

#[test]
fn ground_truth_quaternion_sign_does_not_matter() {
    assert_eq!(perfect_loss(RotationTarget::GroundTruth, false), perfect_loss(RotationTarget::GroundTruth, true));

    let skel = Skeleton::egocentric();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let pose = Tensor::<f64>::from_f64(&[2, 16, 3], &random_pose(1, &skel).repeat(2).concat()).unwrap();
    let rot = rand_tensor(&mut rng, &[2, 16, 4], -1.0, 1.0);
    let out = LifterOutputs {
        pose: tape.leaf(pose.clone()),
        rot: Some(tape.leaf(rot)),
        hm: None,
        z: tape.leaf(Tensor::zeros(&[2, 8])),
    };
    let gt = rand_tensor(&mut rng, &[2, 16, 4], -1.0, 1.0);
    let mut flipped = gt.clone();
    for (k, v) in flipped.data_mut().iter_mut().enumerate() {
        // negate every other quaternion
        if (k / 4) % 2 == 1 {
            *v = -*v;
        }
    }
    let mut eval = |rot: Tensor<f64>| {
        let t = AeTargets { pose: pose.clone(), rot, hm: None, has_3d: vec![true, true] };
        loss_ae(&mut tape, &out, &t, &LossWeights::default(), &skel, RotationTarget::GroundTruth).unwrap().1.total
    };
    assert_eq!(eval(gt), eval(flipped));
}

#[test]
fn three_d_terms_average_over_labelled_rows_only() {
    let skel = Skeleton::egocentric();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rot_all = rand_tensor(&mut rng, &[3, 16, 4], -1.0, 1.0);
    let poses: Vec<Vec<[f64; 3]>> = (0..3).map(|k| random_pose(20 + k, &skel)).collect();
    let truth: Vec<Vec<[f64; 3]>> = (0..3).map(|k| random_pose(30 + k, &skel)).collect();
    let flat = |v: &[Vec<[f64; 3]>]| v.iter().flatten().flatten().copied().collect::<Vec<f64>>();
    let loss_of = |rows: &[usize], has_3d: Vec<bool>| {
        let pick = |v: &[Vec<[f64; 3]>]| rows.iter().map(|&r| v[r].clone()).collect::<Vec<_>>();
        let n = rows.len();
        let mut tape = Tape::new();
        let rot = rot_all.select_rows(rows).unwrap();
        let out = LifterOutputs {
            pose: tape.leaf(Tensor::new(&[n, 16, 3], flat(&pick(&poses))).unwrap()),
            rot: Some(tape.leaf(rot.clone())),
            hm: None,
            z: tape.leaf(Tensor::zeros(&[n, 4])),
        };
        let t = AeTargets { pose: Tensor::new(&[n, 16, 3], flat(&pick(&truth))).unwrap(), rot, hm: None, has_3d };
        loss_ae(&mut tape, &out, &t, &LossWeights::default(), &skel, RotationTarget::PredictedPose).unwrap().1.total
    };
    let mixed = loss_of(&[0, 1, 2], vec![true, false, true]);
    let labelled = loss_of(&[0, 2], vec![true, true]);
    assert!((mixed - labelled).abs() < 1e-12 * labelled.abs().max(1.0), "{mixed} vs {labelled}");
}

#[test]
fn two_d_only_records_supervise_only_the_heatmaps() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let cfg = TrainConfig::default();
    let model: LifterModel<f64> = LifterModel::init(&cfg.lifter, 2, None).unwrap();
    let rec = data.train[3].clone().into_2d_only();
    let batch = vec![&rec];

    let mut tape = Tape::new();
    let (loss, terms, _, out) = lifter_loss(&mut tape, &model, &batch, &cfg, &skel, true).unwrap();
    let target = resample(&render(&rec.joints2d, 47, 2.0).unwrap(), 48).unwrap();
    let recon = tape.value(out.hm.unwrap()).data().to_vec();
    let sq: f64 = recon.iter().zip(&target.data).map(|(a, &b)| (a - b as f64).powi(2)).sum();
    assert_eq!(terms.total, 1e-3 * sq);
    assert_eq!((terms.pose_sq, terms.rot), (0.0, 0.0));

    let mut grads = model.params.clone();
    tape.backward(loss, &mut grads).unwrap();
    let mut checked = 0;
    for name in model.params.names().filter(|n| n.starts_with("lift.pose") || n.starts_with("lift.rot")) {
        if let Some(g) = grads.grad(name) {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name} has a gradient");
            checked += 1;
        }
    }
    assert!(checked > 0);
    let enc = grads.grad("lift.enc0.w").unwrap();
    assert!(enc.data().iter().any(|&v| v != 0.0));
}

#[test]
fn all_2d_batch_leaves_pose_and_rotation_branches_untouched_by_gradients() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let cfg = TrainConfig::default();
    let model: LifterModel = LifterModel::init(&cfg.lifter, 2, None).unwrap();
    let recs: Vec<SampleRecord> = data.train.iter().take(6).map(|r| r.clone().into_2d_only()).collect();
    let batch: Vec<&SampleRecord> = recs.iter().collect();
    let mut tape = Tape::new();
    let (loss, _, _, _) = lifter_loss(&mut tape, &model, &batch, &cfg, &skel, true).unwrap();
    let mut grads = model.params.clone();
    tape.backward(loss, &mut grads).unwrap();
    for name in model.params.names().filter(|n| n.starts_with("lift.pose") || n.starts_with("lift.rot")) {
        if let Some(g) = grads.grad(name) {
            assert!(g.data().iter().all(|&v| v == 0.0), "{name}");
        }
    }
}

fn shrunk_config(hm_size: usize) -> LifterConfig {
    LifterConfig {
        input_size: 16,
        z_size: 8,
        hm_size,
        branches: BranchConfig::FULL,
        encoder_channels: vec![3, 4],
        pose_hidden: vec![6],
        rot_hidden: vec![6],
        hm_hidden: 6,
        hm_channels: 2,
        batchnorm: true,
        leaky_slope: 0.2,
        output_init_scale: 1.0,
    }
}

/// Full autoencoder loss of a shrunken network against central differences.
fn gradcheck_loss_ae(hm_size: usize, target: RotationTarget) {
    let skel = Skeleton::egocentric();
    let cfg = shrunk_config(hm_size);
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let model: LifterModel<f64> = LifterModel::init(&cfg, seed, Some(&random_pose(seed, &skel).concat())).unwrap();
        let input = rand_tensor(&mut rng, &[3, NUM_HEATMAPS, 16, 16], 0.0, 1.0);
        let poses: Vec<f64> = (0..3).flat_map(|b| random_pose(seed * 7 + b, &skel).concat()).collect();
        let rots: Vec<f64> = (0..3)
            .flat_map(|b| {
                let p = random_pose(seed * 7 + b, &skel);
                extract_rotations(&p, &skel).unwrap().into_iter().flat_map(Quaternion::to_array)
            })
            .collect();
        let targets = AeTargets {
            pose: Tensor::new(&[3, 16, 3], poses).unwrap(),
            rot: Tensor::new(&[3, 16, 4], rots).unwrap(),
            hm: Some(rand_tensor(&mut rng, &[3, NUM_HEATMAPS, hm_size, hm_size], 0.0, 1.0)),
            has_3d: vec![true, false, true],
        };
        let err = check_params(&model.params, 1e-6, Some((120, seed)), |tape, store| {
            let mut pass = Pass::new(tape, store, true);
            let x = pass.tape.constant(input.clone());
            let out = model.net.forward(&mut pass, x, Heads::ALL)?;
            Ok(loss_ae(tape, &out, &targets, &LossWeights::default(), &skel, target)?.0)
        })
        .unwrap();
        assert!(err < 1e-4, "hm {hm_size}, {target:?}, seed {seed}: relative error {err:e}");
    }
}

#[test]
fn gradcheck_full_autoencoder_loss() {
    gradcheck_loss_ae(9, RotationTarget::PredictedPose);
    gradcheck_loss_ae(8, RotationTarget::PredictedPose);
    gradcheck_loss_ae(9, RotationTarget::GroundTruth);
}

#[test]
fn gradcheck_rotation_extract_and_quaternion_distance() {
    let skel = Skeleton::egocentric();
    for seed in 0..INSTANCES {
        let pose: Vec<f64> = (0..2).flat_map(|b| random_pose(seed * 3 + b, &skel).concat()).collect();
        let pose = Tensor::new(&[2, 16, 3], pose).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = rand_tensor(&mut rng, &[2, 16, 4], -1.0, 1.0);
        let err = check_inputs(&[pose], 1e-6, |t, v| {
            let r = t.custom(Box::new(RotationExtract::new(&skel)), &[v[0]])?;
            let w = t.constant(weights.clone());
            let m = t.mul(r, w)?;
            t.sum(m)
        })
        .unwrap();
        assert!(err < 1e-4, "rotation extract seed {seed}: {err:e}");

        let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let err = check_inputs(&[a, b], 1e-6, |t, v| t.custom(Box::new(QuatSignDistance), &[v[0], v[1]])).unwrap();
        assert!(err < 1e-4, "quaternion distance seed {seed}: {err:e}");
    }
}

#[test]
fn quaternion_distance_takes_the_nearer_sign() {
    let mut tape: Tape<f64> = Tape::new();
    let a = tape.leaf(Tensor::new(&[2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap());
    let b = tape.constant(Tensor::new(&[2, 4], vec![-1.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.8, 0.0]).unwrap());
    let d = tape.custom(Box::new(QuatSignDistance), &[a, b]).unwrap();
    // first row: exact antipode → 0; second row: |(0, 0.4, -0.8, 0)|² = 0.8
    assert!((tape.value(d).data()[0] - 0.8).abs() < 1e-12);
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let cfg = TrainConfig { lr: 0.0, ..TrainConfig::default() };
    let mut model: LifterModel = LifterModel::init(&cfg.lifter, 0, None).unwrap();
    let before = model.params.clone();
    let batch: Vec<&SampleRecord> = data.train.iter().collect();
    let terms = lifter_step(&mut model, &batch, &cfg, &skel).unwrap();
    assert!(terms.total.is_finite() && terms.total > 0.0);
    for name in before.names().filter(|n| before.get(n).unwrap().trainable) {
        assert_eq!(before.value(name).unwrap(), model.params.value(name).unwrap(), "{name}");
    }
}

#[test]
fn repeated_steps_overfit_a_fixed_batch() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let cfg = TrainConfig::default();
    let mut model: LifterModel = LifterModel::init(&cfg.lifter, 0, None).unwrap();
    let batch: Vec<&SampleRecord> = data.train.iter().take(16).collect();
    let first = lifter_step(&mut model, &batch, &cfg, &skel).unwrap().total;
    let mut last = first;
    for _ in 1..50 {
        last = lifter_step(&mut model, &batch, &cfg, &skel).unwrap().total;
    }
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn step_errors_are_reported() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let cfg = TrainConfig::default();
    let mut model: LifterModel = LifterModel::init(&cfg.lifter, 0, None).unwrap();
    assert!(matches!(lifter_step(&mut model, &[], &cfg, &skel), Err(Error::InvalidArgument(_))));
    let mut w = model.params.value("lift.z.w").unwrap().clone();
    w.data_mut()[0] = f32::NAN;
    model.params.set_value("lift.z.w", w).unwrap();
    let batch: Vec<&SampleRecord> = data.train.iter().take(4).collect();
    match lifter_step(&mut model, &batch, &cfg, &skel) {
        Err(Error::Numeric(msg)) => assert!(!msg.is_empty()),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn masking_keeps_the_requested_share_of_labels() {
    let data = small_dataset(40);
    let cfg = TrainConfig { label_fraction_3d: 0.5, masked_as_2d: true, ..TrainConfig::default() };
    let kept = prepare_train_records(&data.train, &cfg);
    assert_eq!(kept.len(), 40);
    assert_eq!(kept.iter().filter(|r| r.has_3d).count(), 20);
    let dropped = prepare_train_records(&data.train, &TrainConfig { masked_as_2d: false, ..cfg.clone() });
    assert_eq!(dropped.len(), 20);
    assert!(dropped.iter().all(|r| r.has_3d));
    // the same records keep their labels either way
    let a: Vec<_> = kept.iter().filter(|r| r.has_3d).map(|r| (r.character_id, r.frame_id)).collect();
    let b: Vec<_> = dropped.iter().map(|r| (r.character_id, r.frame_id)).collect();
    assert_eq!(a, b);
}

fn checkpoint_bytes(store: &ParamStore) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, store, &Default::default()).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn training_is_deterministic() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(48);
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let run = || {
        let mut losses = Vec::new();
        let out = train(&cfg, &data.train, &data.val, &skel, &ImageSource::default(), InitModels::default(), |e| {
            losses.push(e.clone())
        })
        .unwrap();
        (losses, checkpoint_bytes(&out.lifter.unwrap().params))
    };
    let (la, ca) = run();
    let (lb, cb) = run();
    assert_eq!(la, lb);
    assert_eq!(la.len(), 3);
    assert!(ca == cb, "checkpoint bytes differ");
}

#[test]
fn inference_outputs_are_sane() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(16);
    let model: LifterModel = LifterModel::init(&LifterConfig::default(), 9, None).unwrap();
    let preds = predict_records(&model, &data.test, 2.0, Heads { rot: true, hm: false }).unwrap();
    assert_eq!(preds.len(), data.test.len());
    for (p, r) in preds.iter().zip(&data.test) {
        assert!(p.pose.iter().flatten().all(|v| v.is_finite() && v.abs() < 10.0));
        let rot = p.rotations.as_ref().unwrap();
        assert!(rot.iter().all(|q| q.is_unit(1e-9)));
        assert!(p.hm.is_none());
        // confidences come from the input heatmaps: 1 for visible joints
        for (c, &vis) in p.confidence.iter().zip(&r.joints2d.visible) {
            if vis {
                assert!(*c > 0.5);
            }
        }
        // rotation branch through FK, compared with the pose branch
        let fk = forward_kinematics(rot, &skel, p.pose[0]);
        let e = egopose::eval::mpjpe(&[p.pose.clone()], &[fk]).unwrap();
        assert!(e.is_finite());
    }
    // extreme inputs stay in bounds
    let huge = Tensor::full(&[1, 15, 47, 47], 1e6f32);
    let p = predict_heatmaps(&model, &huge, Heads::POSE_ONLY).unwrap();
    assert!(p[0].pose.iter().flatten().all(|v| v.is_finite() && v.abs() < 10.0));
}

#[test]
fn detector_shapes_determinism_and_loss() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(4);
    let det: DetectorModel = DetectorModel::init(&DetectorConfig::default(), 0).unwrap();
    let src = ImageSource::default();
    let recs: Vec<&SampleRecord> = data.train.iter().take(2).collect();
    let images = image_batch::<f32>(&recs, &skel, &src, stored_statistics(&det.params).unwrap()).unwrap();
    let a = detect(&det, &images).unwrap();
    let b = detect(&det, &images).unwrap();
    assert_eq!(a.shape(), &[2, 15, 47, 47]);
    assert!(a.all_finite());
    assert_eq!(a, b);
    let mut tape = Tape::new();
    let cfg = TrainConfig { stage: Stage::Detector, ..TrainConfig::default() };
    let (loss, _) = detector_loss(&mut tape, &det, &recs, &cfg, &skel, &src, false).unwrap();
    let l = tape.value(loss).data()[0];
    assert!(l.is_finite() && l >= 0.0);

    let bad = Tensor::<f32>::zeros(&[1, 3, 100, 100]);
    assert!(matches!(detect(&det, &bad), Err(Error::Dimension(_))));
    assert!(DetectorConfig { image_size: 300, ..DetectorConfig::default() }.validate().is_err());
}

#[test]
fn end_to_end_step_updates_both_networks() {
    let skel = Skeleton::egocentric();
    let data = small_dataset(4);
    let cfg = TrainConfig { stage: Stage::End2end, ..TrainConfig::default() };
    let mut det: DetectorModel = DetectorModel::init(&cfg.detector, 0).unwrap();
    let mut lifter: LifterModel = LifterModel::init(&cfg.lifter, 0, None).unwrap();
    let (d0, l0) = (det.params.clone(), lifter.params.clone());
    let recs: Vec<&SampleRecord> = data.train.iter().take(2).collect();
    let terms = end2end_step(&mut det, &mut lifter, &recs, &cfg, &skel, &ImageSource::default()).unwrap();
    assert!(terms.total.is_finite());
    assert_ne!(d0.value("det.down0.w").unwrap(), det.params.value("det.down0.w").unwrap());
    assert_ne!(l0.value("lift.enc0.w").unwrap(), lifter.params.value("lift.enc0.w").unwrap());
}

#[test]
fn heatmap_input_shape_is_checked() {
    let model: LifterModel = LifterModel::init(&LifterConfig::default(), 0, None).unwrap();
    let bad = Tensor::<f32>::zeros(&[1, 15, 40, 40]);
    assert!(matches!(predict_heatmaps(&model, &bad, Heads::ALL), Err(Error::Dimension(_))));
    let _unused: Option<Var> = None;
}
