//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! `cargo test -p egopose-cli --test acceptance --release`
//! Set `ACCEPTANCE_ONLY=1,3,9` to run a subset.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use egopose::camera::{FisheyeCamera, Joints2D};
use egopose::eval::{mean_pose, mpjpe, pa_mpjpe, per_action, per_joint};
use egopose::heatmap::{decode, render, DecodeConfig};
use egopose::kinematics::{extract_rotations, forward_kinematics, Quaternion, Skeleton, Vec3, NUM_HEATMAPS};
use egopose::network::*;
use egopose::synth::{load_dataset, write_dataset, Action, SampleRecord};
use egopose::tensor::gradcheck::{check_inputs, check_params};
use egopose::tensor::{load_checkpoint, save_checkpoint, Tape, Tensor, Var};
use egopose_cli::commands::{self, AblationRow};
use egopose_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

const INSTANCES: u64 = 20;
const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;

/// The directional runs (7 and 8) use the default dataset and training
/// config, fixed before any of them were scored.
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn unit(v: Vec3) -> Vec3 {
    let n = dist(v, [0.0; 3]);
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
    [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
}

/// Random zero-twist rotations: free at branching joints, swings about an
/// axis perpendicular to the single child bone, identity at leaves.
fn random_zero_twist(skel: &Skeleton, rng: &mut ChaCha8Rng) -> Vec<Quaternion> {
    (0..skel.len())
        .map(|j| {
            let kids = skel.children(j);
            let q = match kids.len() {
                0 => Quaternion::identity(),
                1 => Quaternion::from_axis_angle(cross(unit(skel.rest_offset[kids[0]]), rand_vec(rng)), rng.gen_range(0.0..2.8)),
                _ => Quaternion::from_axis_angle(rand_vec(rng), rng.gen_range(0.0..2.8)),
            };
            q.canonical()
        })
        .collect()
}

fn random_pose(rng: &mut ChaCha8Rng, skel: &Skeleton) -> Vec<Vec3> {
    let rot = random_zero_twist(skel, rng);
    forward_kinematics(&rot, skel, [rng.gen_range(-0.1..0.1), rng.gen_range(-0.3..0.0), rng.gen_range(0.0..0.3)])
}

// ---- 1 ----

fn weighted_sum(tape: &mut Tape<f64>, y: Var, seed: u64) -> egopose::Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.value(y).shape().to_vec();
    let u = tape.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, u)?;
    tape.sum(p)
}

fn check_op(
    name: &str,
    shapes: &[&[usize]],
    worst: &mut BTreeMap<String, f64>,
    op: impl Fn(&mut Tape<f64>, &[Var]) -> egopose::Result<Var>,
) -> Result<(), String> {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_tensor(&mut rng, s, -1.0, 1.0)).collect();
        let err = check_inputs(&inputs, GRAD_STEP, |t, v| {
            let y = op(t, v)?;
            weighted_sum(t, y, seed)
        })
        .map_err(e2s)?;
        let w = worst.entry(name.to_string()).or_insert(0.0);
        *w = w.max(err);
        ensure(err < GRAD_TOL, || format!("{name} instance {seed}: rel err {err:e}"))?;
    }
    Ok(())
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut worst = BTreeMap::new();
    let w = &mut worst;
    check_op("add", &[&[5], &[5]], w, |t, v| t.add(v[0], v[1]))?;
    check_op("sub", &[&[5], &[5]], w, |t, v| t.sub(v[0], v[1]))?;
    check_op("mul", &[&[5], &[5]], w, |t, v| t.mul(v[0], v[1]))?;
    check_op("div", &[&[5], &[5]], w, |t, v| {
        let sq = t.square(v[1])?;
        let one = t.constant(Tensor::full(&[5], 1.0));
        let d = t.add(sq, one)?;
        t.div(v[0], d)
    })?;
    check_op("scale", &[&[2, 3]], w, |t, v| t.scale(v[0], -0.7))?;
    check_op("square", &[&[5]], w, |t, v| t.square(v[0]))?;
    check_op("sum", &[&[2, 3]], w, |t, v| {
        let s = t.sum(v[0])?;
        t.square(s)
    })?;
    check_op("sum_last", &[&[2, 3, 4]], w, |t, v| t.sum_last(v[0]))?;
    check_op("row_norm", &[&[4, 3]], w, |t, v| t.row_norm(v[0]))?;
    check_op("normalize_rows", &[&[4, 4]], w, |t, v| t.normalize_rows(v[0], 1e-12))?;
    check_op("reshape", &[&[2, 6]], w, |t, v| {
        let r = t.reshape(v[0], &[3, 4])?;
        t.square(r)
    })?;
    check_op("select_rows", &[&[4, 3]], w, |t, v| t.select_rows(v[0], &[2, 0, 2]))?;
    check_op("gather", &[&[2, 4, 3]], w, |t, v| t.gather(v[0], &[3, 0, 0, 2]))?;
    check_op("dense", &[&[3, 5], &[4, 5], &[4]], w, |t, v| t.dense(v[0], v[1], v[2]))?;
    check_op("conv2d", &[&[2, 2, 6, 6], &[3, 2, 4, 4], &[3]], w, |t, v| t.conv2d(v[0], v[1], v[2], 2, 1))?;
    check_op("deconv2d", &[&[2, 2, 3, 3], &[2, 3, 4, 4], &[3]], w, |t, v| t.deconv2d(v[0], v[1], v[2], 2, 1))?;
    check_op("leaky_relu", &[&[4, 6]], w, |t, v| t.leaky_relu(v[0], 0.2))?;
    check_op("batchnorm_train", &[&[4, 3, 2], &[3], &[3]], w, |t, v| {
        t.batchnorm_train(v[0], v[1], v[2], 1e-5).map(|(y, _)| y)
    })?;
    check_op("batchnorm_eval", &[&[2, 3, 2], &[3], &[3]], w, |t, v| {
        t.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[1.0, 0.5, 2.0], 1e-5)
    })?;
    check_op("mse", &[&[3, 4], &[3, 4]], w, |t, v| t.mse(v[0], v[1]))?;
    check_op("quat_sign_distance", &[&[3, 4], &[3, 4]], w, |t, v| t.custom(Box::new(QuatSignDistance), &[v[0], v[1]]))?;

    let skel = Skeleton::egocentric();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pose: Vec<f64> = (0..2).flat_map(|_| random_pose(&mut rng, &skel).concat()).collect();
        let weights = rand_tensor(&mut rng, &[2, 16, 4], -1.0, 1.0);
        let err = check_inputs(&[Tensor::new(&[2, 16, 3], pose).unwrap()], GRAD_STEP, |t, v| {
            let r = t.custom(Box::new(RotationExtract::new(&skel)), &[v[0]])?;
            let wv = t.constant(weights.clone());
            let m = t.mul(r, wv)?;
            t.sum(m)
        })
        .map_err(e2s)?;
        let e = worst.entry("rotation_extract".into()).or_insert(0.0);
        *e = e.max(err);
        ensure(err < GRAD_TOL, || format!("rotation_extract instance {seed}: rel err {err:e}"))?;
    }

    // full autoencoder loss through a shrunken lifter, mixed 3D/2D batch
    let cfg = LifterConfig {
        input_size: 16,
        z_size: 8,
        hm_size: 9,
        branches: BranchConfig::FULL,
        encoder_channels: vec![3, 4],
        pose_hidden: vec![6],
        rot_hidden: vec![6],
        hm_hidden: 6,
        hm_channels: 2,
        batchnorm: true,
        leaky_slope: 0.2,
        output_init_scale: 1.0,
    };
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mean = random_pose(&mut rng, &skel).concat();
        let model: LifterModel<f64> = LifterModel::init(&cfg, seed, Some(&mean)).map_err(e2s)?;
        let poses: Vec<Vec<Vec3>> = (0..3).map(|_| random_pose(&mut rng, &skel)).collect();
        let rots: Vec<f64> = poses
            .iter()
            .flat_map(|p| extract_rotations(p, &skel).unwrap().into_iter().flat_map(Quaternion::to_array))
            .collect();
        let input = rand_tensor(&mut rng, &[3, NUM_HEATMAPS, 16, 16], 0.0, 1.0);
        let targets = AeTargets {
            pose: Tensor::new(&[3, 16, 3], poses.concat().concat()).unwrap(),
            rot: Tensor::new(&[3, 16, 4], rots).unwrap(),
            hm: Some(rand_tensor(&mut rng, &[3, NUM_HEATMAPS, 9, 9], 0.0, 1.0)),
            has_3d: vec![true, false, true],
        };
        let err = check_params(&model.params, GRAD_STEP, Some((120, seed)), |tape, store| {
            let mut pass = Pass::new(tape, store, true);
            let x = pass.tape.constant(input.clone());
            let out = model.net.forward(&mut pass, x, Heads::ALL)?;
            Ok(loss_ae(tape, &out, &targets, &LossWeights::default(), &skel, RotationTarget::default())?.0)
        })
        .map_err(e2s)?;
        let e = worst.entry("loss_ae".into()).or_insert(0.0);
        *e = e.max(err);
        ensure(err < GRAD_TOL, || format!("autoencoder loss instance {seed}: rel err {err:e}"))?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:.1?} (budget 2 min)"))?;
    let (op, max) = worst.iter().fold(("", 0.0f64), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    Ok(format!("{} ops + autoencoder loss ×{INSTANCES}, worst rel err {max:.2e} ({op}), {elapsed:.1?}", worst.len() - 1))
}

// ---- 2 ----

fn kinematics_suite() -> Check {
    let skel = Skeleton::egocentric();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut pos, mut rot) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let r = random_zero_twist(&skel, &mut rng);
        let root = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.3..0.0), rng.gen_range(0.0..0.3)];
        let p = forward_kinematics(&r, &skel, root);
        let back = extract_rotations(&p, &skel).map_err(e2s)?;
        for (a, b) in r.iter().zip(&back) {
            rot = rot.max(a.angle_to(*b));
        }
        let again = forward_kinematics(&back, &skel, p[0]);
        pos = pos.max(p.iter().zip(&again).map(|(a, b)| dist(*a, *b)).fold(0.0, f64::max));
    }
    ensure(pos < 1e-6, || format!("FK(r(P)) off by {pos:e} m"))?;
    ensure(rot < 1e-6, || format!("r(FK(R)) off by {rot:e} rad"))?;

    let mut alg = 0.0f64;
    for _ in 0..1000 {
        let q = |rng: &mut ChaCha8Rng| Quaternion::from_axis_angle(rand_vec(rng), rng.gen_range(0.0..6.28));
        let (a, b, c, v) = (q(&mut rng), q(&mut rng), q(&mut rng), rand_vec(&mut rng));
        alg = alg
            .max(a.mul(a.conjugate()).angle())
            .max(dist(a.mul(b).rotate(v), a.rotate(b.rotate(v))))
            .max(a.mul(b).mul(c).angle_to(a.mul(b.mul(c))))
            .max(dist(a.neg().rotate(v), a.rotate(v)))
            .max(a.angle_to(a.neg()))
            .max((a.mul(b).norm() - 1.0).abs());
    }
    ensure(alg < 1e-6, || format!("quaternion identities off by {alg:e}"))?;
    Ok(format!("FK∘r {pos:.1e} m, r∘FK {rot:.1e} rad, quaternion identities {alg:.1e} (1000 each)"))
}

// ---- 3 ----

fn naive_mpjpe(gt: &[Vec<Vec3>], pred: &[Vec<Vec3>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for f in 0..gt.len() {
        for j in 0..gt[f].len() {
            let mut s = 0.0;
            for k in 0..3 {
                s += (gt[f][j][k] - pred[f][j][k]) * (gt[f][j][k] - pred[f][j][k]);
            }
            total += s.sqrt();
            n += 1;
        }
    }
    1000.0 * total / n as f64
}

fn metric_suite() -> Check {
    let skel = Skeleton::egocentric();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut oracle = 0.0f64;
    let mut pa_zero = 0.0f64;
    let mut pa_over = f64::NEG_INFINITY;
    let mut agg = 0.0f64;
    for _ in 0..200 {
        let n = rng.gen_range(1..20);
        let gt: Vec<Vec<Vec3>> = (0..n).map(|_| random_pose(&mut rng, &skel)).collect();
        let pred: Vec<Vec<Vec3>> = gt
            .iter()
            .map(|p| p.iter().map(|v| v.map(|c| c + rng.gen_range(-0.1..0.1))).collect())
            .collect();
        let m = mpjpe(&gt, &pred).map_err(e2s)?;
        oracle = oracle.max((m - naive_mpjpe(&gt, &pred)).abs());
        let pa = pa_mpjpe(&gt, &pred).map_err(e2s)?;
        pa_over = pa_over.max(pa - m);

        // similarity transform of the ground truth
        let q = Quaternion::from_axis_angle(rand_vec(&mut rng), rng.gen_range(0.0..6.28));
        let (s, t) = (rng.gen_range(0.3..3.0), rand_vec(&mut rng));
        let moved: Vec<Vec<Vec3>> =
            gt.iter().map(|p| p.iter().map(|&v| { let r = q.rotate(v); [s * r[0] + t[0], s * r[1] + t[1], s * r[2] + t[2]] }).collect()).collect();
        pa_zero = pa_zero.max(pa_mpjpe(&gt, &moved).map_err(e2s)?);

        // per-joint mean and frame-weighted per-action mean both recover the overall number
        let pj = per_joint(&gt, &pred).map_err(e2s)?;
        agg = agg.max((pj.iter().sum::<f64>() / pj.len() as f64 - m).abs());
        let actions: Vec<Action> = (0..n).map(|_| Action::ALL[rng.gen_range(0..9)]).collect();
        let report = per_action(&actions, &gt, &pred).map_err(e2s)?;
        let weighted: f64 = report.rows.iter().filter_map(|r| r.mpjpe.map(|e| e * r.frames as f64)).sum::<f64>() / n as f64;
        agg = agg.max((weighted - m).abs()).max((report.overall - m).abs());
    }
    ensure(oracle < 1e-12, || format!("mpjpe vs naive oracle {oracle:e}"))?;
    ensure(pa_zero < 1e-6, || format!("pa_mpjpe under similarity {pa_zero:e} mm"))?;
    ensure(pa_over <= 1e-9, || format!("pa_mpjpe exceeded mpjpe by {pa_over:e}"))?;
    ensure(agg < 1e-9, || format!("aggregation identity off by {agg:e}"))?;
    Ok(format!("oracle {oracle:.1e}, PA under similarity {pa_zero:.1e} mm, max(PA−MPJPE) {pa_over:.2} mm, aggregation {agg:.1e}"))
}

// ---- 4 ----

fn heatmap_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for sigma in [1.5, 2.0, 3.0] {
        for _ in 0..1000 {
            // interior: the decode window and 3σ tails lie inside the 47×47 map
            let (u, v) = (rng.gen_range(9.0..38.0), rng.gen_range(9.0..38.0));
            let hm = render(&Joints2D { uv: vec![[u, v]], visible: vec![true] }, 47, sigma).map_err(e2s)?;
            let d = decode(&hm, &DecodeConfig::default());
            worst = worst.max((d.joints.uv[0][0] - u).hypot(d.joints.uv[0][1] - v));
        }
    }
    ensure(worst < 0.25, || format!("decode error {worst} px"))?;

    let cam = FisheyeCamera::default();
    let r_max = cam.focal * cam.fov / 2.0;
    let mut trip = 0.0f64;
    for _ in 0..1000 {
        let (r, phi) = (rng.gen_range(0.0..r_max), rng.gen_range(0.0..std::f64::consts::TAU));
        let px = [cam.principal_point[0] + r * phi.cos(), cam.principal_point[1] + r * phi.sin()];
        let dir = cam.unproject(px).map_err(e2s)?;
        let scale = rng.gen_range(0.1..3.0);
        let (back, _) = cam.project(dir.map(|c| c * scale)).map_err(e2s)?;
        trip = trip.max((back[0] - px[0]).hypot(back[1] - px[1]));
    }
    ensure(trip < 1e-6, || format!("fisheye round trip {trip:e} px"))?;
    Ok(format!("decode worst {worst:.1e} px over σ∈{{1.5,2,3}} ×1000, fisheye round trip {trip:.1e} px ×1000"))
}

// ---- 5 ----

fn loss_semantics() -> Check {
    let skel = Skeleton::egocentric();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pose = random_pose(&mut rng, &skel);
    let rot = extract_rotations(&pose, &skel).map_err(e2s)?;
    let p = Tensor::<f64>::new(&[1, 16, 3], pose.concat()).unwrap();
    let r = Tensor::<f64>::new(&[1, 16, 4], rot.iter().flat_map(|q| q.to_array()).collect()).unwrap();
    let hm = rand_tensor(&mut rng, &[1, 15, 48, 48], 0.0, 1.0);
    let mut tape = Tape::new();
    let out = LifterOutputs {
        pose: tape.leaf(p.clone()),
        rot: Some(tape.leaf(r.clone())),
        hm: Some(tape.leaf(hm.clone())),
        z: tape.leaf(Tensor::zeros(&[1, 50])),
    };
    let targets = AeTargets { pose: p, rot: r, hm: Some(hm), has_3d: vec![true] };
    let (_, terms) = loss_ae(&mut tape, &out, &targets, &LossWeights::default(), &skel, RotationTarget::default()).map_err(e2s)?;
    let want = 0.1 * -0.01 * 15.0;
    ensure((terms.total - want).abs() < 1e-12, || format!("perfect loss {} (want {want})", terms.total))?;

    // 2D-only records through the real network: exact-zero pose/rot parameter gradients
    let cfg = TrainConfig::default();
    let model: LifterModel<f64> = LifterModel::init(&cfg.lifter, 7, None).map_err(e2s)?;
    let synth = egopose::synth::SynthConfig {
        frames: egopose::synth::PerSplit { train: 8, test: 4, val: 4 },
        characters: egopose::synth::PerSplit { train: 1, test: 1, val: 1 },
        ..Default::default()
    };
    let data = egopose::synth::generate(&synth, &skel, 5).map_err(e2s)?;
    let recs: Vec<SampleRecord> = data.train.iter().take(4).map(|r| r.clone().into_2d_only()).collect();
    let batch: Vec<&SampleRecord> = recs.iter().collect();
    let mut tape = Tape::new();
    let (loss, _, _, _) = lifter_loss(&mut tape, &model, &batch, &cfg, &skel, true).map_err(e2s)?;
    let mut grads = model.params.clone();
    grads.zero_grads();
    tape.backward(loss, &mut grads).map_err(e2s)?;
    let mut checked = 0;
    for name in model.params.names().filter(|n| n.starts_with("lift.pose") || n.starts_with("lift.rot")) {
        if let Some(g) = grads.grad(name) {
            ensure(g.data().iter().all(|&v| v == 0.0), || format!("{name} has a non-zero gradient"))?;
            checked += 1;
        }
    }
    ensure(checked > 0, || "no pose/rot parameters inspected".into())?;
    Ok(format!("perfect loss {:.15}, {checked} pose/rot tensors with zero gradient on 2D-only records", terms.total))
}

// ---- shared fixtures for 6–10 ----

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().expect("temp dir");
        let root = tmp.path().to_path_buf();
        Workspace { _tmp: tmp, root }
    }
}

fn config(sets: &[String]) -> Result<RunConfig, String> {
    RunConfig::load(None, sets, None).map_err(e2s)
}

fn set_path(key: &str, p: &Path) -> String {
    format!("{key}={:?}", p.to_str().unwrap())
}

fn baseline_mm(dir: &Path) -> Result<f64, String> {
    let d = load_dataset(dir).map_err(e2s)?;
    let train: Vec<Vec<Vec3>> = d.data.train.iter().filter_map(|r| r.pose3d.clone()).collect();
    let test: Vec<Vec<Vec3>> = d.data.test.iter().filter_map(|r| r.pose3d.clone()).collect();
    let mp = mean_pose(&train).map_err(e2s)?;
    mpjpe(&test, &vec![mp; test.len()]).map_err(e2s)
}

/// Default 5000-frame set, generated once and shared by 6 and 10.
struct Trained {
    data: PathBuf,
    run: PathBuf,
    test_mm: f64,
    baseline_mm: f64,
}

fn toy_training(ws: &Workspace) -> Result<Trained, String> {
    let data = ws.root.join("default_data");
    let cfg = config(&[])?;
    commands::generate(&cfg, &data).map_err(e2s)?;
    let run = ws.root.join("default_run");
    let cfg = config(&[set_path("data", &data)])?;
    commands::train(&cfg, &run).map_err(e2s)?;
    let cfg = config(&[set_path("data", &data), set_path("lifter_checkpoint", &run.join(commands::LIFTER_CKPT_FILE))])?;
    let report = commands::eval(&cfg, &ws.root.join("default_eval")).map_err(e2s)?;
    Ok(Trained { baseline_mm: baseline_mm(&data)?, data, run, test_mm: report.overall_mpjpe })
}

// ---- 6 ----

fn toy_training_regression(trained: &Result<Trained, String>, elapsed: Duration) -> Check {
    let t = trained.as_ref().map_err(Clone::clone)?;
    let cfg = config(&[])?;
    let ratio = t.test_mm / t.baseline_mm;
    ensure(cfg.train.lifter.branches == BranchConfig::FULL, || "default mode is not p3d+hm+rot".into())?;
    ensure(cfg.train.epochs <= 30, || format!("{} epochs configured", cfg.train.epochs))?;
    ensure(ratio < 0.5, || format!("test {:.2} mm vs baseline {:.2} mm: ratio {ratio:.3}", t.test_mm, t.baseline_mm))?;
    ensure(elapsed < Duration::from_secs(30 * 60), || format!("took {elapsed:.0?}"))?;
    Ok(format!(
        "p3d+hm+rot, {} epochs: test {:.2} mm vs mean-pose {:.2} mm (ratio {ratio:.3}), {elapsed:.0?}",
        cfg.train.epochs, t.test_mm, t.baseline_mm
    ))
}

// ---- 7, 8 ----

fn ablation_data(ws: &Workspace) -> Result<PathBuf, String> {
    let dir = ws.root.join("ablation_data");
    let cfg = config(&[])?;
    commands::generate(&cfg, &dir).map_err(e2s)?;
    Ok(dir)
}

fn ablation(ws: &Workspace, data: &Path, name: &str, extra: &[String]) -> Result<Vec<AblationRow>, String> {
    let mut sets = vec![
        set_path("data", data),
        format!("ablate.seeds={ABLATION_SEEDS:?}"),
    ];
    sets.extend_from_slice(extra);
    commands::ablate(&config(&sets)?, &ws.root.join(name)).map_err(e2s)
}

fn mean_of(rows: &[AblationRow], tag: &str) -> Result<f64, String> {
    rows.iter()
        .find(|r| r.tag == tag && r.seed.is_none())
        .map(|r| r.test_mpjpe_mm)
        .ok_or_else(|| format!("no mean row for {tag}"))
}

fn per_seed(rows: &[AblationRow], tag: &str) -> String {
    rows.iter()
        .filter(|r| r.tag == tag && r.seed.is_some())
        .map(|r| format!("{:.2}", r.test_mpjpe_mm))
        .collect::<Vec<_>>()
        .join("/")
}

fn branch_ablation(ws: &Workspace, data: &Result<PathBuf, String>) -> Check {
    let data = data.as_ref().map_err(Clone::clone)?;
    let rows = ablation(ws, data, "ablate_branches", &[])?;
    let (p3d, rot, hm, full) =
        (mean_of(&rows, "p3d")?, mean_of(&rows, "p3d+rot")?, mean_of(&rows, "p3d+hm")?, mean_of(&rows, "p3d+hm+rot")?);
    let detail = format!(
        "mean of {} seeds: p3d {p3d:.2} [{}], p3d+hm {hm:.2} [{}], p3d+hm+rot {full:.2} [{}], p3d+rot {rot:.2} [{}] (not gated)",
        ABLATION_SEEDS.len(),
        per_seed(&rows, "p3d"),
        per_seed(&rows, "p3d+hm"),
        per_seed(&rows, "p3d+hm+rot"),
        per_seed(&rows, "p3d+rot"),
    );
    ensure(full <= p3d && hm <= p3d, || detail.clone())?;
    Ok(detail)
}

fn mixed_supervision(ws: &Workspace, data: &Result<PathBuf, String>) -> Check {
    let data = data.as_ref().map_err(Clone::clone)?;
    let rows = ablation(ws, data, "ablate_mixed", &["ablate.modes=[]".into(), "ablate.mixed_fraction=0.5".into()])?;
    let (only, mixed) = (mean_of(&rows, "3d-only@0.5")?, mean_of(&rows, "3d+2d@0.5")?);
    let detail = format!(
        "mean of {} seeds: 50% 3D only {only:.2} mm [{}], plus masked half as 2D {mixed:.2} mm [{}]",
        ABLATION_SEEDS.len(),
        per_seed(&rows, "3d-only@0.5"),
        per_seed(&rows, "3d+2d@0.5"),
    );
    ensure(mixed <= only, || detail.clone())?;
    Ok(detail)
}

// ---- 9 ----

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_file()).collect::<Vec<_>>())
        .unwrap_or_default()
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn cli(args: &[&str], sets: &[String]) -> Result<(), String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_egopose"));
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    let o = cmd.output().map_err(e2s)?;
    ensure(o.status.success(), || format!("egopose {args:?} failed: {}", String::from_utf8_lossy(&o.stderr)))
}

fn determinism(ws: &Workspace) -> Check {
    let small: Vec<String> = ["synth.frames={train=300,test=60,val=60}", "synth.characters={train=3,test=1,val=1}", "train.epochs=2"]
        .map(String::from)
        .to_vec();
    let root = ws.root.join("determinism");
    let mut checked = Vec::new();
    for stage in ["generate", "train", "eval"] {
        let mut outs = Vec::new();
        for k in 0..2 {
            let out = root.join(format!("{stage}{k}"));
            let mut sets = small.clone();
            if stage != "generate" {
                sets.push(set_path("data", &root.join("generate0")));
            }
            if stage == "eval" {
                sets.push(set_path("lifter_checkpoint", &root.join("train0").join(commands::LIFTER_CKPT_FILE)));
            }
            cli(&[stage, "--seed", "3", "--out", out.to_str().unwrap()], &sets)?;
            outs.push(files(&out));
        }
        ensure(!outs[0].is_empty() && outs[0] == outs[1], || format!("{stage} outputs differ between identical runs"))?;
        checked.push(format!("{stage} ({} files)", outs[0].len()));
    }

    // checkpoint: load → save gives the same bytes and the same parameter bits
    let ckpt = root.join("train0").join(commands::LIFTER_CKPT_FILE);
    let loaded = load_checkpoint::<f32>(&ckpt).map_err(e2s)?;
    let again = root.join("again.ckpt");
    save_checkpoint(&again, &loaded.store, &loaded.meta).map_err(e2s)?;
    ensure(fs::read(&ckpt).map_err(e2s)? == fs::read(&again).map_err(e2s)?, || "checkpoint re-save differs".into())?;
    let reloaded = load_checkpoint::<f32>(&again).map_err(e2s)?;
    for name in loaded.store.names() {
        let a = loaded.store.value(name).map_err(e2s)?;
        let b = reloaded.store.value(name).map_err(e2s)?;
        let same = a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || format!("parameter {name} changed across a checkpoint round trip"))?;
    }

    // dataset: load → write gives the same files
    let src = root.join("generate0");
    let d = load_dataset(&src).map_err(e2s)?;
    let copy = root.join("dataset_copy");
    write_dataset(&copy, &d.data, &d.manifest.config, &d.skeleton, d.manifest.seed).map_err(e2s)?;
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().filter(|(n, _)| n != "resolved_config.toml").collect::<Vec<_>>();
    ensure(strip(files(&src)) == strip(files(&copy)), || "dataset rewrite differs".into())?;
    let back = load_dataset(&copy).map_err(e2s)?;
    ensure(back.data == d.data, || "dataset records differ after a round trip".into())?;
    checked.push("checkpoint and dataset round trips".into());
    Ok(format!("byte-identical: {}", checked.join(", ")))
}

// ---- 10 ----

fn noise_sweep_shape(ws: &Workspace, trained: &Result<Trained, String>) -> Check {
    let t = trained.as_ref().map_err(Clone::clone)?;
    let ckpt = t.run.join(commands::LIFTER_CKPT_FILE);
    let cfg = config(&[set_path("data", &t.data), set_path("lifter_checkpoint", &ckpt)])?;
    let out = ws.root.join("noise");
    let table = commands::noise_sweep(&cfg, &out).map_err(e2s)?;
    ensure(table.rows.len() == cfg.noise.sigmas.len(), || format!("{} rows for {} sigmas", table.rows.len(), cfg.noise.sigmas.len()))?;
    ensure(table.rows[0].sigma == 0.0 && table.rows[0].mean == t.test_mm, || {
        format!("σ=0 row {} vs eval {}", table.rows[0].mean, t.test_mm)
    })?;
    for (row, &s) in table.rows.iter().zip(&cfg.noise.sigmas) {
        let n = if s == 0.0 { 1 } else { cfg.noise.seeds.len() };
        ensure(row.sigma == s && row.per_seed.len() == n && row.mean.is_finite() && row.std >= 0.0, || {
            format!("malformed row {row:?}")
        })?;
    }
    let tsv = fs::read_to_string(out.join("noise_table.tsv")).map_err(e2s)?;
    let lines: Vec<&str> = tsv.lines().collect();
    ensure(lines.len() == table.rows.len() + 1, || "noise_table.tsv row count".into())?;
    let width = lines[0].split('\t').count();
    ensure(lines.iter().all(|l| l.split('\t').count() == width), || "ragged noise_table.tsv".into())?;
    let means: Vec<String> = table.rows.iter().map(|r| format!("{:.2}", r.mean)).collect();
    Ok(format!(
        "σ=0 equals eval ({:.4} mm); {} rows, means [{}] mm, monotone: {} (reported only)",
        t.test_mm,
        table.rows.len(),
        means.join(", "),
        table.monotone
    ))
}

// ---- driver ----

fn run(n: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    match &outcome {
        Ok(d) => println!("PASS  {n:>2}  {name}: {d}  [{secs:.1} s]"),
        Err(d) => println!("FAIL  {n:>2}  {name}: {d}  [{secs:.1} s]"),
    }
    outcome.is_ok()
}

fn main() {
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().map_or(true, |o| o.contains(&n));
    let ws = Workspace::new();
    let mut results = Vec::new();

    if wanted(1) {
        results.push(run(1, "gradient suite", gradient_suite));
    }
    if wanted(2) {
        results.push(run(2, "kinematics suite", kinematics_suite));
    }
    if wanted(3) {
        results.push(run(3, "metric oracle suite", metric_suite));
    }
    if wanted(4) {
        results.push(run(4, "heatmap and fisheye suite", heatmap_suite));
    }
    if wanted(5) {
        results.push(run(5, "loss semantics", loss_semantics));
    }
    if wanted(6) || wanted(10) {
        let start = Instant::now();
        let trained = toy_training(&ws);
        let elapsed = start.elapsed();
        if wanted(6) {
            results.push(run(6, "toy training regression", || toy_training_regression(&trained, elapsed)));
        }
        if wanted(10) {
            results.push(run(10, "noise sweep shape", || noise_sweep_shape(&ws, &trained)));
        }
    }
    if wanted(7) || wanted(8) {
        let data = ablation_data(&ws);
        if wanted(7) {
            results.push(run(7, "branch-ablation direction", || branch_ablation(&ws, &data)));
        }
        if wanted(8) {
            results.push(run(8, "mixed-supervision direction", || mixed_supervision(&ws, &data)));
        }
    }
    if wanted(9) {
        results.push(run(9, "determinism", || determinism(&ws)));
    }

    let passed = results.iter().filter(|&&r| r).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
