use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use egopose::anim::{write_bvh, MotionFile};
use egopose::eval::{pa_mpjpe, rotation_trace, root_relative, EvalReport, NoiseTable, TraceAngle};
use egopose::kinematics::{extract_rotations, Skeleton, Vec3};
use egopose::network::{
    predict_images, predict_noisy_records, train as train_models, BranchConfig, DetectorConfig, DetectorModel, Detector,
    EpochLog, Heads, ImageSource, InitModels, Lifter, LifterConfig, LifterModel, Stage, TrainConfig,
};
use egopose::synth::{generate_dataset, load_dataset, LoadedDataset, MotionClip, SampleRecord};
use egopose::tensor::{load_checkpoint, save_checkpoint};
use serde::{Deserialize, Serialize};

use crate::config::{InputSource, MotionSource, RunConfig};
use crate::error::{runtime, CliError, CliResult};

pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const LIFTER_CKPT_FILE: &str = "lifter.ckpt";
pub const DETECTOR_CKPT_FILE: &str = "detector.ckpt";

fn load_skeleton(cfg: &RunConfig) -> CliResult<Skeleton> {
    Ok(match &cfg.skeleton {
        Some(p) => Skeleton::load(p).map_err(|e| match e {
            egopose::Error::Io(io) => runtime(format!("cannot read skeleton {}: {io}", p.display())),
            other => other.into(),
        })?,
        None => Skeleton::egocentric(),
    })
}

fn load_data(cfg: &RunConfig) -> CliResult<LoadedDataset> {
    load_dataset(&cfg.data).map_err(|e| runtime(format!("cannot load dataset {}: {e}", cfg.data.display())))
}

fn image_source(d: &LoadedDataset) -> ImageSource {
    ImageSource { camera: d.manifest.config.camera, style: d.manifest.config.style.clone() }
}

pub fn generate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let skel = load_skeleton(cfg)?;
    let manifest = generate_dataset(&cfg.synth, &skel, cfg.seed, out)?;
    cfg.echo(out)?;
    for (name, s) in &manifest.splits {
        eprintln!("{name}: {} records ({} with 3D)", s.records, s.records_3d);
    }
    Ok(())
}

// ---- checkpoints ----

fn meta_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("config serialises")
}

pub fn save_lifter(path: &Path, m: &LifterModel, mut meta: BTreeMap<String, String>) -> CliResult<()> {
    meta.insert("kind".into(), "lifter".into());
    meta.insert("lifter_config".into(), meta_json(&m.net.cfg));
    save_checkpoint(path, &m.params, &meta)?;
    Ok(())
}

pub fn save_detector(path: &Path, m: &DetectorModel, mut meta: BTreeMap<String, String>) -> CliResult<()> {
    meta.insert("kind".into(), "detector".into());
    meta.insert("detector_config".into(), meta_json(&m.net.cfg));
    save_checkpoint(path, &m.params, &meta)?;
    Ok(())
}

fn read_ckpt(path: &Path, kind: &str) -> CliResult<egopose::tensor::Checkpoint> {
    let ck = load_checkpoint::<f32>(path).map_err(|e| runtime(format!("cannot load checkpoint {}: {e}", path.display())))?;
    match ck.meta.get("kind") {
        Some(k) if k == kind => Ok(ck),
        other => Err(runtime(format!("{} is not a {kind} checkpoint (kind {other:?})", path.display()))),
    }
}

fn meta_config<T: for<'de> Deserialize<'de>>(meta: &BTreeMap<String, String>, key: &str) -> CliResult<T> {
    let text = meta.get(key).ok_or_else(|| runtime(format!("checkpoint lacks {key}")))?;
    serde_json::from_str(text).map_err(|e| runtime(format!("checkpoint {key}: {e}")))
}

pub fn load_lifter(path: &Path) -> CliResult<(LifterModel, BTreeMap<String, String>)> {
    let ck = read_ckpt(path, "lifter")?;
    let cfg: LifterConfig = meta_config(&ck.meta, "lifter_config")?;
    Ok((LifterModel { net: Lifter::new(cfg)?, params: ck.store }, ck.meta))
}

pub fn load_detector(path: &Path) -> CliResult<(DetectorModel, BTreeMap<String, String>)> {
    let ck = read_ckpt(path, "detector")?;
    let cfg: DetectorConfig = meta_config(&ck.meta, "detector_config")?;
    Ok((DetectorModel { net: Detector::new(cfg)?, params: ck.store }, ck.meta))
}

// ---- training ----

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

pub fn log_line(e: &EpochLog) -> String {
    format!("{}\t{}\t{}\t{}", e.epoch, fmt_opt(e.train_loss), fmt_opt(e.val_loss), fmt_opt(e.val_mpjpe_mm))
}

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tval_loss\tval_mpjpe_mm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub stage: Stage,
    pub best_epoch: usize,
    pub best_val_loss: Option<f64>,
    pub config_hash: String,
}

pub fn train(cfg: &RunConfig, out: &Path) -> CliResult<TrainSummary> {
    let data = load_data(cfg)?;
    let src = image_source(&data);
    let init = InitModels {
        lifter: cfg.lifter_checkpoint.as_deref().map(load_lifter).transpose()?.map(|m| m.0),
        detector: cfg.detector_checkpoint.as_deref().map(load_detector).transpose()?.map(|m| m.0),
    };
    if let Some(l) = &init.lifter {
        if l.net.cfg != cfg.train.lifter {
            eprintln!("note: resuming with the lifter architecture stored in the checkpoint");
        }
    }
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    let mut log = format!("{LOG_HEADER}\n");
    let outcome = train_models(&cfg.train, &data.data.train, &data.data.val, &data.skeleton, &src, init, |e| {
        eprintln!("{}", log_line(e));
        log.push_str(&log_line(e));
        log.push('\n');
    })?;
    fs::write(out.join(TRAIN_LOG_FILE), &log)?;

    let hash = cfg.hash();
    let best_val = outcome.log.get(outcome.best_epoch).and_then(|e| e.val_loss);
    let mut meta = BTreeMap::new();
    meta.insert("config_hash".to_string(), hash.clone());
    meta.insert("best_epoch".to_string(), outcome.best_epoch.to_string());
    meta.insert("val_loss".to_string(), fmt_opt(best_val));
    meta.insert("stage".to_string(), format!("{:?}", cfg.train.stage).to_lowercase());
    if let Some(l) = &outcome.lifter {
        save_lifter(&out.join(LIFTER_CKPT_FILE), l, meta.clone())?;
    }
    if let Some(d) = &outcome.detector {
        save_detector(&out.join(DETECTOR_CKPT_FILE), d, meta)?;
    }
    let summary = TrainSummary { stage: cfg.train.stage, best_epoch: outcome.best_epoch, best_val_loss: best_val, config_hash: hash };
    fs::write(out.join("train_summary.json"), serde_json::to_string_pretty(&summary).expect("serialises") + "\n")?;
    Ok(summary)
}

// ---- evaluation ----

/// Models used to score a split. `None` for the oracle.
pub struct Models {
    pub lifter: LifterModel,
    pub detector: Option<DetectorModel>,
    pub lifter_meta: BTreeMap<String, String>,
}

fn load_models(cfg: &RunConfig) -> CliResult<Models> {
    let path = cfg.lifter_checkpoint.as_deref().ok_or_else(|| runtime("lifter_checkpoint is not set"))?;
    let (lifter, lifter_meta) = load_lifter(path)?;
    let detector = match cfg.eval.input {
        InputSource::Images => {
            let p = cfg.detector_checkpoint.as_deref().ok_or_else(|| runtime("image input needs detector_checkpoint"))?;
            Some(load_detector(p)?.0)
        }
        InputSource::Heatmaps => None,
    };
    Ok(Models { lifter, detector, lifter_meta })
}

fn labelled(records: &[SampleRecord]) -> Vec<SampleRecord> {
    records.iter().filter(|r| r.has_3d).cloned().collect()
}

fn predict_poses(
    cfg: &RunConfig,
    models: &Models,
    records: &[SampleRecord],
    skel: &Skeleton,
    src: &ImageSource,
    noise: Option<(f64, u64)>,
) -> CliResult<Vec<Vec<Vec3>>> {
    let preds = match &models.detector {
        Some(d) => predict_images(d, &models.lifter, records, skel, src, Heads::POSE_ONLY, noise)?,
        None => predict_noisy_records(&models.lifter, records, cfg.train.sigma, Heads::POSE_ONLY, noise)?,
    };
    Ok(preds.into_iter().map(|p| p.pose).collect())
}

fn build_report(
    cfg: &RunConfig,
    skel: &Skeleton,
    records: &[SampleRecord],
    pred: Vec<Vec<Vec3>>,
    mut config: BTreeMap<String, String>,
) -> CliResult<EvalReport> {
    let mut gt: Vec<Vec<Vec3>> = records.iter().map(|r| r.pose3d.clone().expect("labelled")).collect();
    let mut pred = pred;
    if cfg.eval.root_relative {
        gt = root_relative(&gt);
        pred = root_relative(&pred);
    }
    let actions: Vec<_> = records.iter().map(|r| r.action).collect();
    config.insert("config_hash".into(), cfg.hash());
    config.insert("split".into(), cfg.eval.split.name().into());
    config.insert("root_relative".into(), cfg.eval.root_relative.to_string());
    Ok(EvalReport::build(skel, &actions, &gt, &pred, config)?)
}

fn report_config(cfg: &RunConfig, models: Option<&Models>) -> BTreeMap<String, String> {
    let mut c = BTreeMap::new();
    match models {
        None => {
            c.insert("mode".into(), "oracle".into());
        }
        Some(m) => {
            c.insert("mode".into(), "model".into());
            c.insert("input".into(), format!("{:?}", cfg.eval.input).to_lowercase());
            c.insert(
                "checkpoint_config_hash".into(),
                m.lifter_meta.get("config_hash").cloned().unwrap_or_else(|| "unknown".into()),
            );
        }
    }
    c
}

pub fn eval(cfg: &RunConfig, out: &Path) -> CliResult<EvalReport> {
    let data = load_data(cfg)?;
    let records = labelled(data.data.split(cfg.eval.split));
    if records.is_empty() {
        return Err(runtime(format!("split {} has no 3D-labelled records", cfg.eval.split.name())));
    }
    let (pred, models) = if cfg.eval.oracle {
        (records.iter().map(|r| r.pose3d.clone().expect("labelled")).collect(), None)
    } else {
        let m = load_models(cfg)?;
        (predict_poses(cfg, &m, &records, &data.skeleton, &image_source(&data), None)?, Some(m))
    };
    let report = build_report(cfg, &data.skeleton, &records, pred, report_config(cfg, models.as_ref()))?;
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    fs::write(out.join("report.json"), report.to_json() + "\n")?;
    fs::write(out.join("report.tsv"), report.to_table())?;
    eprintln!("mpjpe {:.3} mm, pa-mpjpe {:.3} mm over {} frames", report.overall_mpjpe, report.pa_mpjpe, report.n_frames);
    Ok(report)
}

pub fn noise_sweep(cfg: &RunConfig, out: &Path) -> CliResult<NoiseTable> {
    let data = load_data(cfg)?;
    let records = labelled(data.data.split(cfg.eval.split));
    if records.is_empty() {
        return Err(runtime(format!("split {} has no 3D-labelled records", cfg.eval.split.name())));
    }
    let models = load_models(cfg)?;
    let src = image_source(&data);
    let table = egopose::eval::noise_sweep(&cfg.noise.sigmas, &cfg.noise.seeds, |sigma, seed| {
        let noise = (sigma > 0.0).then_some((sigma, seed));
        let pred = predict_poses(cfg, &models, &records, &data.skeleton, &src, noise).map_err(to_core)?;
        let report = build_report(cfg, &data.skeleton, &records, pred, BTreeMap::new()).map_err(to_core)?;
        eprintln!("sigma {sigma} seed {seed}: {:.3} mm", report.overall_mpjpe);
        Ok(report.overall_mpjpe)
    })?;
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    fs::write(out.join("noise_table.tsv"), table.to_table())?;
    fs::write(out.join("noise_table.json"), serde_json::to_string_pretty(&table).expect("serialises") + "\n")?;
    if !table.monotone {
        eprintln!("note: the mean error is not monotone in sigma");
    }
    Ok(table)
}

fn to_core(e: CliError) -> egopose::Error {
    match e {
        CliError::Config(m) => egopose::Error::Config(m),
        CliError::Runtime(m) => egopose::Error::InvalidArgument(m),
    }
}

// ---- ablation ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tag: String,
    pub mode: String,
    pub z_size: usize,
    pub hm_size: usize,
    pub label_fraction_3d: f64,
    pub masked_as_2d: bool,
    /// `None` on the mean-over-seeds row.
    pub seed: Option<u64>,
    pub test_mpjpe_mm: f64,
    pub test_pa_mpjpe_mm: f64,
    pub best_epoch: Option<usize>,
}

fn ablation_runs(cfg: &RunConfig) -> CliResult<Vec<(String, TrainConfig)>> {
    let mut runs = Vec::new();
    for m in &cfg.ablate.modes {
        let mut t = cfg.train.clone();
        t.lifter.branches = BranchConfig::parse(m)?;
        runs.push((m.clone(), t));
    }
    for &z in &cfg.ablate.z_grid {
        let mut t = cfg.train.clone();
        t.lifter.branches = BranchConfig::FULL;
        t.lifter.z_size = z;
        t.lifter.validate(true)?;
        runs.push((format!("z={z}"), t));
    }
    for &s in &cfg.ablate.hm_grid {
        let mut t = cfg.train.clone();
        t.lifter.branches = BranchConfig::FULL;
        t.lifter.hm_size = s;
        t.lifter.validate(true)?;
        runs.push((format!("hm={s}"), t));
    }
    if let Some(f) = cfg.ablate.mixed_fraction {
        for (tag, as_2d) in [("3d-only", false), ("3d+2d", true)] {
            let mut t = cfg.train.clone();
            t.lifter.branches = BranchConfig::FULL;
            t.label_fraction_3d = f;
            t.masked_as_2d = as_2d;
            runs.push((format!("{tag}@{f}"), t));
        }
    }
    Ok(runs)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "tag\tmode\tz_size\thm_size\tlabel_fraction_3d\tmasked_as_2d\tseed\ttest_mpjpe_mm\ttest_pa_mpjpe_mm\tbest_epoch\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            r.tag,
            r.mode,
            r.z_size,
            r.hm_size,
            r.label_fraction_3d,
            r.masked_as_2d,
            r.seed.map_or_else(|| "mean".to_string(), |s| s.to_string()),
            r.test_mpjpe_mm,
            r.test_pa_mpjpe_mm,
            r.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string()),
        );
    }
    s
}

/// Trains and scores every configured variant for every seed, followed by
/// one mean row per variant.
pub fn ablate(cfg: &RunConfig, out: &Path) -> CliResult<Vec<AblationRow>> {
    let data = load_data(cfg)?;
    let src = image_source(&data);
    let runs = ablation_runs(cfg)?;
    if runs.is_empty() {
        return Err(CliError::Config("nothing to ablate".into()));
    }
    let seeds = if cfg.ablate.seeds.is_empty() { vec![cfg.seed] } else { cfg.ablate.seeds.clone() };
    let test = labelled(&data.data.test);
    if test.is_empty() {
        return Err(runtime("test split has no 3D-labelled records"));
    }
    let gt: Vec<Vec<Vec3>> = test.iter().map(|r| r.pose3d.clone().expect("labelled")).collect();
    fs::create_dir_all(out.join("logs"))?;
    cfg.echo(out)?;

    let mut rows = Vec::new();
    for (tag, tcfg) in &runs {
        let mut per_seed = Vec::new();
        for &seed in &seeds {
            let t = TrainConfig { seed, stage: Stage::Lifter, ..tcfg.clone() };
            let mut log = format!("{LOG_HEADER}\n");
            let outcome = train_models(&t, &data.data.train, &data.data.val, &data.skeleton, &src, InitModels::default(), |e| {
                log.push_str(&log_line(e));
                log.push('\n');
            })?;
            let name = tag.replace(['@', '='], "_").replace('+', "-");
            fs::write(out.join("logs").join(format!("{name}_seed{seed}.tsv")), &log)?;
            let lifter = outcome.lifter.expect("lifter stage");
            let models = Models { lifter, detector: None, lifter_meta: BTreeMap::new() };
            let pred = predict_poses(cfg, &models, &test, &data.skeleton, &src, None)?;
            let row = AblationRow {
                tag: tag.clone(),
                mode: t.lifter.branches.name().to_string(),
                z_size: t.lifter.z_size,
                hm_size: t.lifter.hm_size,
                label_fraction_3d: t.label_fraction_3d,
                masked_as_2d: t.masked_as_2d,
                seed: Some(seed),
                test_mpjpe_mm: egopose::eval::mpjpe(&gt, &pred)?,
                test_pa_mpjpe_mm: pa_mpjpe(&gt, &pred)?,
                best_epoch: Some(outcome.best_epoch),
            };
            eprintln!("{tag} seed {seed}: {:.3} mm (best epoch {})", row.test_mpjpe_mm, outcome.best_epoch);
            per_seed.push(row);
        }
        let n = per_seed.len() as f64;
        let mean = AblationRow {
            seed: None,
            test_mpjpe_mm: per_seed.iter().map(|r| r.test_mpjpe_mm).sum::<f64>() / n,
            test_pa_mpjpe_mm: per_seed.iter().map(|r| r.test_pa_mpjpe_mm).sum::<f64>() / n,
            best_epoch: None,
            ..per_seed[0].clone()
        };
        rows.extend(per_seed);
        rows.push(mean);
    }
    fs::write(out.join("ablation.tsv"), ablation_table(&rows))?;
    fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&rows).expect("serialises") + "\n")?;
    Ok(rows)
}

// ---- animation ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnimateSummary {
    pub character: u32,
    pub frames: usize,
    pub source: MotionSource,
}

fn clip_records(cfg: &RunConfig, data: &LoadedDataset) -> CliResult<(u32, Vec<SampleRecord>)> {
    let split = labelled(data.data.split(cfg.animate.split));
    let character = match cfg.animate.character {
        Some(c) => c,
        None => split.first().map(|r| r.character_id).ok_or_else(|| runtime("split has no 3D-labelled records"))?,
    };
    let mut recs: Vec<SampleRecord> = split.into_iter().filter(|r| r.character_id == character).collect();
    if recs.is_empty() {
        return Err(runtime(format!("character {character} has no frames in split {}", cfg.animate.split.name())));
    }
    recs.sort_by_key(|r| r.frame_id);
    if let Some(n) = cfg.animate.max_frames {
        recs.truncate(n);
    }
    Ok((character, recs))
}

pub fn animate(cfg: &RunConfig, out: &Path) -> CliResult<AnimateSummary> {
    let data = load_data(cfg)?;
    let skel = &data.skeleton;
    let (character, recs) = clip_records(cfg, &data)?;
    let fps = egopose::synth::DEFAULT_FPS;
    let action = recs[0].action;
    let gt = MotionClip {
        frames: recs.iter().map(|r| r.rotations.clone().expect("labelled")).collect(),
        root_positions: recs.iter().map(|r| r.pose3d.as_ref().expect("labelled")[0]).collect(),
        fps,
        action,
    };
    let motion = match cfg.animate.source {
        MotionSource::GroundTruth => gt.clone(),
        MotionSource::Prediction => {
            let path = cfg.lifter_checkpoint.as_deref().ok_or_else(|| runtime("lifter_checkpoint is not set"))?;
            let (lifter, _) = load_lifter(path)?;
            let heads = Heads { rot: lifter.net.cfg.branches.rot, hm: false };
            let preds = predict_noisy_records(&lifter, &recs, cfg.train.sigma, heads, None)?;
            let mut frames = Vec::with_capacity(preds.len());
            let mut roots = Vec::with_capacity(preds.len());
            for p in preds {
                // without a rotation branch the rotations come from the pose
                let rot = match p.rotations {
                    Some(r) => r,
                    None => extract_rotations(&p.pose, skel)?,
                };
                frames.push(rot.into_iter().map(|q| q.canonical()).collect());
                roots.push(p.pose[0]);
            }
            MotionClip { frames, root_positions: roots, fps, action }
        }
    };
    fs::create_dir_all(out)?;
    cfg.echo(out)?;
    fs::write(out.join("motion.json"), MotionFile::from_clip(&motion, skel)?.to_json() + "\n")?;
    fs::write(out.join("motion.bvh"), write_bvh(&motion, skel)?)?;

    let mut traces = String::from("joint\tframe\tgt_deg\tpred_deg\terror_deg\n");
    let mut summary = String::from("joint\tgt_jitter_deg\tpred_jitter_deg\tmean_error_deg\n");
    for j in 0..skel.len() {
        let tr = rotation_trace(&gt, &motion.frames, j, TraceAngle::Geodesic)?;
        let name = &skel.joint_names[j];
        for f in 0..tr.gt.len() {
            let _ = writeln!(traces, "{name}\t{f}\t{:.6}\t{:.6}\t{:.6}", tr.gt[f], tr.pred[f], tr.error[f]);
        }
        let mean_err = tr.error.iter().sum::<f64>() / tr.error.len() as f64;
        let _ = writeln!(summary, "{name}\t{:.6}\t{:.6}\t{:.6}", tr.gt_jitter, tr.pred_jitter, mean_err);
    }
    fs::write(out.join("rotation_traces.tsv"), traces)?;
    fs::write(out.join("rotation_trace_summary.tsv"), summary)?;
    Ok(AnimateSummary { character, frames: motion.len(), source: cfg.animate.source })
}
