use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egopose::kinematics::{forward_kinematics, Quaternion};
use egopose::synth::load_dataset;
use tempfile::TempDir;

const TINY: &[&str] = &[
    "synth.frames={train=48,test=12,val=12}",
    "synth.characters={train=2,test=1,val=1}",
    "train.batch_size=8",
];

fn egopose(args: &[&str], sets: &[String]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_egopose"));
    cmd.args(args);
    for s in TINY.iter().map(|s| s.to_string()).chain(sets.iter().cloned()) {
        cmd.arg("--set").arg(s);
    }
    cmd.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn dir_str(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

fn set_path(key: &str, p: &Path) -> String {
    format!("{key}={:?}", p.to_str().unwrap())
}

struct Fixture {
    _tmp: TempDir,
    root: PathBuf,
    data: PathBuf,
}

fn dataset() -> Fixture {
    dataset_with(&[])
}

fn dataset_with(sets: &[String]) -> Fixture {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().to_path_buf();
    let data = root.join("data");
    ok(&egopose(&["generate", "--seed", "5", "--out", &dir_str(&data)], sets));
    Fixture { _tmp: tmp, root, data }
}

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().to_string(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn generate_writes_a_manifest_matching_the_config() {
    let f = dataset();
    let loaded = load_dataset(&f.data).unwrap();
    assert_eq!((loaded.data.train.len(), loaded.data.test.len(), loaded.data.val.len()), (48, 12, 12));
    assert!(f.data.join("manifest.json").exists());
    assert!(f.data.join("resolved_config.toml").exists());

    let again = f.root.join("again");
    ok(&egopose(&["generate", "--seed", "5", "--out", &dir_str(&again)], &[]));
    assert_eq!(read_all(&f.data), read_all(&again));
}

#[test]
fn config_errors_exit_2_without_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    for bad in ["synth.keyframes_per_clip=1", "synth.nonsense=3", "train.lr=\"fast\"", "noise"] {
        let o = egopose(&["generate", "--out", &dir_str(&out)], &[bad.to_string()]);
        assert_eq!(o.status.code(), Some(2), "{bad}");
        assert!(!out.exists(), "{bad} left files behind");
    }
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[train]\nepochz = 3\n").unwrap();
    let o = egopose(&["generate", "--config", &dir_str(&cfg), "--out", &dir_str(&out)], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(egopose(&["frobnicate"], &[]).status.code(), Some(2));
}

#[test]
fn missing_artifacts_exit_1() {
    let tmp = TempDir::new().unwrap();
    let nowhere = tmp.path().join("nowhere");
    for cmd in ["train", "eval", "ablate", "animate", "noise-sweep"] {
        let o = egopose(&[cmd, "--out", &dir_str(&tmp.path().join(cmd))], &[set_path("data", &nowhere)]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
    }
    let f = dataset();
    let o = egopose(
        &["eval", "--out", &dir_str(&f.root.join("e"))],
        &[set_path("data", &f.data), set_path("lifter_checkpoint", &f.root.join("none.ckpt"))],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn train_eval_resume_and_determinism() {
    // enough characters for validation to improve within a few epochs
    let larger: Vec<String> = ["synth.frames={train=400,val=60}", "synth.characters={train=4}", "train.batch_size=16"]
        .map(String::from)
        .to_vec();
    let f = dataset_with(&larger);
    let run = f.root.join("run");
    let sets = |extra: &[String]| {
        let mut v = larger.clone();
        v.extend([set_path("data", &f.data), "train.epochs=3".to_string()]);
        v.extend_from_slice(extra);
        v
    };
    ok(&egopose(&["train", "--out", &dir_str(&run)], &sets(&[])));
    let log = fs::read_to_string(run.join("train_log.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = log.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 4);
    let val0: f64 = rows[0][2].parse().unwrap();
    let last: f64 = rows[3][2].parse().unwrap();
    assert!(last < val0, "val loss {val0} -> {last}");
    assert!(run.join("lifter.ckpt").exists() && run.join("resolved_config.toml").exists());

    // same config and seed: identical bytes
    let twin = f.root.join("twin");
    ok(&egopose(&["train", "--out", &dir_str(&twin)], &sets(&[])));
    assert_eq!(read_all(&run), read_all(&twin));

    // resuming starts from the saved validation loss
    let resumed = f.root.join("resumed");
    ok(&egopose(
        &["train", "--out", &dir_str(&resumed)],
        &sets(&["train.epochs=1".into(), set_path("lifter_checkpoint", &run.join("lifter.ckpt"))]),
    ));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("train_summary.json")).unwrap()).unwrap();
    let saved = summary["best_val_loss"].as_f64().unwrap();
    let log = fs::read_to_string(resumed.join("train_log.tsv")).unwrap();
    let first: f64 = log.lines().nth(1).unwrap().split('\t').nth(2).unwrap().parse().unwrap();
    assert_eq!(first, saved);

    // eval: deterministic, echoes the checkpoint's config hash
    let ev = |name: &str| {
        let out = f.root.join(name);
        ok(&egopose(&["eval", "--out", &dir_str(&out)], &sets(&[set_path("lifter_checkpoint", &run.join("lifter.ckpt"))])));
        out
    };
    let (a, b) = (ev("eval_a"), ev("eval_b"));
    assert_eq!(fs::read(a.join("report.json")).unwrap(), fs::read(b.join("report.json")).unwrap());
    assert_eq!(fs::read(a.join("report.tsv")).unwrap(), fs::read(b.join("report.tsv")).unwrap());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    let hash = summary["config_hash"].as_str().unwrap();
    assert_eq!(report["config"]["checkpoint_config_hash"].as_str(), Some(hash));
    assert!(report["overall_mpjpe"].as_f64().unwrap() > 0.0);
    assert_eq!(report["per_joint"].as_array().unwrap().len(), 16);

    // σ = 0 row equals the eval number exactly
    let ns = f.root.join("noise");
    ok(&egopose(
        &["noise-sweep", "--out", &dir_str(&ns)],
        &sets(&[set_path("lifter_checkpoint", &run.join("lifter.ckpt")), "noise.sigmas=[0.0, 0.1, 0.3]".into(), "noise.seeds=[1, 2]".into()]),
    ));
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(ns.join("noise_table.json")).unwrap()).unwrap();
    assert_eq!(table["rows"][0]["mean"].as_f64(), report["overall_mpjpe"].as_f64());
    let tsv = fs::read_to_string(ns.join("noise_table.tsv")).unwrap();
    assert!(tsv.starts_with("sigma\tmean_mpjpe_mm\tstd_mm"));
    assert_eq!(tsv.lines().count(), 4);
}

#[test]
fn zero_epochs_writes_a_usable_initial_checkpoint() {
    let f = dataset();
    let run = f.root.join("init");
    ok(&egopose(&["train", "--out", &dir_str(&run)], &[set_path("data", &f.data), "train.epochs=0".into()]));
    let out = f.root.join("eval");
    ok(&egopose(&["eval", "--out", &dir_str(&out)], &[set_path("data", &f.data), set_path("lifter_checkpoint", &run.join("lifter.ckpt"))]));
    assert!(out.join("report.tsv").exists());
}

#[test]
fn oracle_eval_is_all_zeros() {
    let f = dataset();
    let out = f.root.join("oracle");
    ok(&egopose(&["eval", "--out", &dir_str(&out)], &[set_path("data", &f.data), "eval.oracle=true".into()]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["overall_mpjpe"].as_f64(), Some(0.0));
    assert!(report["pa_mpjpe"].as_f64().unwrap() < 1e-6);
    assert!(report["per_joint"].as_array().unwrap().iter().all(|j| j[1].as_f64() == Some(0.0)));
}

#[test]
fn ablation_rows_and_grids() {
    let f = dataset();
    let sets = vec![set_path("data", &f.data), "train.epochs=1".into()];
    let a = f.root.join("abl_a");
    ok(&egopose(&["ablate", "--out", &dir_str(&a)], &sets));
    let table = fs::read_to_string(a.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    // one seeded row and one mean row per mode
    assert_eq!(rows.len(), 8);
    let modes: Vec<&str> = rows.iter().step_by(2).map(|r| r.split('\t').next().unwrap()).collect();
    assert_eq!(modes, ["p3d", "p3d+rot", "p3d+hm", "p3d+hm+rot"]);

    let b = f.root.join("abl_b");
    ok(&egopose(&["ablate", "--out", &dir_str(&b)], &[sets.clone(), vec!["ablate.modes=[\"p3d\"]".into()]].concat()));
    let first = |dir: &Path| fs::read_to_string(dir.join("ablation.tsv")).unwrap().lines().nth(1).unwrap().to_string();
    assert_eq!(first(&a), first(&b));

    let g = f.root.join("grid");
    ok(&egopose(
        &["ablate", "--out", &dir_str(&g)],
        &[sets, vec!["ablate.modes=[]".into(), "ablate.z_grid=[10, 20, 50]".into()]].concat(),
    ));
    let table = fs::read_to_string(g.join("ablation.tsv")).unwrap();
    let tags: Vec<&str> = table.lines().skip(1).filter(|l| !l.contains("\tmean\t")).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(tags, ["z=10", "z=20", "z=50"]);
}

#[test]
fn animation_export_round_trips_ground_truth() {
    let f = dataset();
    let out = f.root.join("anim");
    ok(&egopose(&["animate", "--out", &dir_str(&out)], &[set_path("data", &f.data), "animate.source=\"ground_truth\"".into()]));
    let loaded = load_dataset(&f.data).unwrap();
    let skel = &loaded.skeleton;
    let mut recs: Vec<_> = loaded.data.test.iter().filter(|r| r.character_id == loaded.data.test[0].character_id).collect();
    recs.sort_by_key(|r| r.frame_id);

    let bvh = egopose::anim::read_bvh(&fs::read_to_string(out.join("motion.bvh")).unwrap(), skel).unwrap();
    assert_eq!(bvh.clip.len(), recs.len());
    for (i, r) in recs.iter().enumerate() {
        let fk = forward_kinematics(&bvh.clip.frames[i], &bvh.skeleton, bvh.clip.root_positions[i]);
        for (a, b) in fk.iter().zip(r.pose3d.as_ref().unwrap()) {
            assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-4), "frame {i}: {a:?} vs {b:?}");
        }
    }
    let motion = egopose::anim::MotionFile::from_json(&fs::read_to_string(out.join("motion.json")).unwrap()).unwrap();
    assert_eq!(motion.frames.len(), recs.len());
    assert!(motion.frames.iter().flat_map(|f| &f.rotations).all(|&q| Quaternion::from_array(q).is_unit(1e-9)));
    let traces = fs::read_to_string(out.join("rotation_traces.tsv")).unwrap();
    assert_eq!(traces.lines().count(), 1 + 16 * recs.len());

    // predicted motion from a trained checkpoint
    let run = f.root.join("run");
    ok(&egopose(&["train", "--out", &dir_str(&run)], &[set_path("data", &f.data), "train.epochs=1".into()]));
    let pred = f.root.join("anim_pred");
    ok(&egopose(
        &["animate", "--out", &dir_str(&pred)],
        &[set_path("data", &f.data), set_path("lifter_checkpoint", &run.join("lifter.ckpt")), "animate.max_frames=5".into()],
    ));
    let motion = egopose::anim::MotionFile::from_json(&fs::read_to_string(pred.join("motion.json")).unwrap()).unwrap();
    assert_eq!(motion.frames.len(), 5);
    assert!(motion.frames.iter().flat_map(|f| &f.rotations).all(|&q| Quaternion::from_array(q).is_unit(1e-9)));
}
