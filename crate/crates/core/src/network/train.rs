use serde::{Deserialize, Serialize};

use super::config::{DetectorConfig, LifterConfig, LossWeights, RotationTarget};
use super::detector::{image_statistics, normalize_image, stored_statistics, Detector, IMAGE_MEAN, IMAGE_STD};
use super::layers::{update_running_stats, Pass};
use super::lifter::{Heads, Lifter, LifterOutputs};
use super::loss::{loss_2d, loss_ae, AeTargets, LossTerms};
use crate::camera::FisheyeCamera;
use crate::error::{Error, Result};
use crate::heatmap::{render, resample, HeatmapStack, DEFAULT_SIGMA};
use crate::kinematics::{Quaternion, Skeleton, NUM_HEATMAPS, NUM_JOINTS};
use crate::rng;
use crate::synth::{SampleRecord, StickStyle};
use crate::tensor::{BatchStats, Element, OptimizerConfig, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Detector,
    #[default]
    Lifter,
    End2end,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Width of the heatmaps rendered from 2D annotations.
    pub sigma: f64,
    pub weights: LossWeights,
    pub rotation_target: RotationTarget,
    pub lifter: LifterConfig,
    pub detector: DetectorConfig,
    /// Fraction of the 3D-labelled training records that keep their labels.
    pub label_fraction_3d: f64,
    /// Whether records losing their 3D labels stay as 2D-only samples
    /// (otherwise they are dropped).
    pub masked_as_2d: bool,
    /// Use only the first `n` training records.
    pub max_train_records: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::default(),
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            sigma: DEFAULT_SIGMA,
            weights: LossWeights::default(),
            rotation_target: RotationTarget::default(),
            lifter: LifterConfig::default(),
            detector: DetectorConfig::default(),
            label_fraction_3d: 1.0,
            masked_as_2d: true,
            max_train_records: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.lifter.validate(false)?;
        if self.stage != Stage::Lifter {
            self.detector.validate()?;
            if self.detector.heatmap_size != self.lifter.input_size {
                return Err(Error::Config("detector heatmap size must match the lifter input".into()));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config("lr must be non-negative and sigma positive".into()));
        }
        if !(0.0..=1.0).contains(&self.label_fraction_3d) {
            return Err(Error::Config("label_fraction_3d must lie in [0, 1]".into()));
        }
        if !(self.weights.pose_unit_m > 0.0 && self.weights.pose_unit_m.is_finite()) {
            return Err(Error::Config("weights.pose_unit_m must be positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig::adam(self.lr)
    }
}

#[derive(Clone, Debug)]
pub struct LifterModel<T: Element = f32> {
    pub net: Lifter,
    pub params: ParamStore<T>,
}

#[derive(Clone, Debug)]
pub struct DetectorModel<T: Element = f32> {
    pub net: Detector,
    pub params: ParamStore<T>,
}

impl<T: Element> LifterModel<T> {
    pub fn init(cfg: &LifterConfig, seed: u64, pose_mean: Option<&[f64]>) -> Result<Self> {
        let net = Lifter::new(cfg.clone())?;
        let mut params = ParamStore::new();
        net.init_params(&mut params, rng::derive_seed(seed, "lifter-init", 0), pose_mean)?;
        Ok(LifterModel { net, params })
    }
}

impl<T: Element> DetectorModel<T> {
    pub fn init(cfg: &DetectorConfig, seed: u64) -> Result<Self> {
        let net = Detector::new(cfg.clone())?;
        let mut params = ParamStore::new();
        net.init_params(&mut params, rng::derive_seed(seed, "detector-init", 0))?;
        Ok(DetectorModel { net, params })
    }

    pub fn set_image_statistics(&mut self, mean: [f64; 3], std: [f64; 3]) -> Result<()> {
        self.params.set_value(IMAGE_MEAN, Tensor::from_f64(&[3], &mean)?)?;
        self.params.set_value(IMAGE_STD, Tensor::from_f64(&[3], &std)?)
    }
}

/// Camera and drawing style used to turn records into detector images.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageSource {
    pub camera: FisheyeCamera,
    pub style: StickStyle,
}

/// Mean training pose, flattened to 48 values.
pub fn mean_pose_flat(records: &[SampleRecord]) -> Option<Vec<f64>> {
    let poses: Vec<_> = records.iter().filter_map(|r| r.pose3d.clone()).collect();
    let mean = crate::eval::mean_pose(&poses).ok()?;
    Some(mean.into_iter().flatten().collect())
}

/// `B×15×S×S` heatmaps rendered from the records' 2D joints.
pub fn render_batch<T: Element>(records: &[&SampleRecord], size: usize, sigma: f64) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(records.len() * NUM_HEATMAPS * size * size);
    for r in records {
        let hm = render(&r.joints2d, size, sigma)?;
        data.extend(hm.data.iter().map(|&v| T::c(v as f64)));
    }
    Tensor::new(&[records.len(), NUM_HEATMAPS, size, size], data)
}

/// Resamples each stack of a `B×15×S×S` tensor to `size`.
pub fn resample_batch<T: Element>(t: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [b, c, h, w] = *t.shape() else {
        return Err(Error::dim("expected a B×C×H×W heatmap batch"));
    };
    let per = c * h * w;
    let mut data = Vec::with_capacity(b * c * size * size);
    for i in 0..b {
        let hm = HeatmapStack {
            channels: c,
            height: h,
            width: w,
            data: t.data()[i * per..(i + 1) * per].iter().map(|v| v.to_f32().unwrap_or(0.0)).collect(),
        };
        data.extend(resample(&hm, size)?.data.into_iter().map(|v| T::c(v as f64)));
    }
    Tensor::new(&[b, c, size, size], data)
}

/// Stacks `B` normalised images from the records.
pub fn image_batch<T: Element>(
    records: &[&SampleRecord],
    skel: &Skeleton,
    src: &ImageSource,
    stats: ([f64; 3], [f64; 3]),
) -> Result<Tensor<T>> {
    let imgs: Vec<Tensor<T>> = records
        .iter()
        .map(|r| normalize_image(&r.image_or_render(skel, &src.camera, &src.style), stats.0, stats.1))
        .collect();
    Tensor::stack(&imgs)
}

fn ae_targets<T: Element>(records: &[&SampleRecord], hm: Option<Tensor<T>>) -> Result<AeTargets<T>> {
    let mut pose = Vec::with_capacity(records.len() * NUM_JOINTS * 3);
    let mut rot = Vec::with_capacity(records.len() * NUM_JOINTS * 4);
    for r in records {
        match (&r.pose3d, &r.rotations, r.has_3d) {
            (Some(p), Some(q), true) => {
                pose.extend(p.iter().flatten().map(|&v| T::c(v)));
                rot.extend(q.iter().flat_map(|q| q.to_array()).map(T::c));
            }
            (_, _, true) => return Err(Error::arg("record marked 3D has no pose or rotations")),
            _ => {
                pose.extend(std::iter::repeat(T::zero()).take(NUM_JOINTS * 3));
                let ident = Quaternion::identity().to_array().map(T::c);
                rot.extend((0..NUM_JOINTS).flat_map(|_| ident));
            }
        }
    }
    Ok(AeTargets {
        pose: Tensor::new(&[records.len(), NUM_JOINTS, 3], pose)?,
        rot: Tensor::new(&[records.len(), NUM_JOINTS, 4], rot)?,
        hm,
        has_3d: records.iter().map(|r| r.has_3d).collect(),
    })
}

/// Adds every bound parameter's gradient to whichever store owns it.
fn distribute_grads<T: Element>(tape: &Tape<T>, stores: &mut [&mut ParamStore<T>]) -> Result<()> {
    for (name, var) in tape.bound_params() {
        if !tape.requires_grad(var) {
            continue;
        }
        let store = stores
            .iter_mut()
            .find(|s| s.get(name).is_some())
            .ok_or_else(|| Error::arg(format!("no store owns {name:?}")))?;
        let g = tape.grad(var).unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()));
        store.accumulate_grad(name, &g)?;
    }
    Ok(())
}

fn numeric_guard(r: Result<Var>, what: &str) -> Result<Var> {
    r.map_err(|e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{what}: {m}; training aborted")),
        other => other,
    })
}

fn split_stats<T: Element>(stats: Vec<(String, BatchStats<T>)>) -> (Vec<(String, BatchStats<T>)>, Vec<(String, BatchStats<T>)>) {
    stats.into_iter().partition(|(n, _)| n.starts_with("det."))
}

/// Forward pass and loss of the lifter on a batch, with heatmap inputs
/// rendered from the 2D annotations.
pub fn lifter_loss<T: Element>(
    tape: &mut Tape<T>,
    model: &LifterModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    train: bool,
) -> Result<(Var, LossTerms, Vec<(String, BatchStats<T>)>, LifterOutputs)> {
    let lc = &model.net.cfg;
    let input = render_batch::<T>(batch, lc.input_size, cfg.sigma)?;
    let hm_target = if lc.branches.hm { Some(resample_batch(&input, lc.hm_size)?) } else { None };
    let targets = ae_targets(batch, hm_target)?;
    let mut pass = Pass::new(tape, &model.params, train);
    let x = pass.tape.constant(input);
    let out = model.net.forward(&mut pass, x, Heads::ALL)?;
    let stats = pass.stats;
    let (loss, terms) = loss_ae(tape, &out, &targets, &cfg.weights, skel, cfg.rotation_target)?;
    Ok((loss, terms, stats, out))
}

/// One optimiser step of the lifter; returns the loss before the step.
pub fn lifter_step<T: Element>(
    model: &mut LifterModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut tape = Tape::new();
    let (loss, terms, stats, _) = lifter_loss(&mut tape, model, batch, cfg, skel, true)?;
    numeric_guard(Ok(loss), "lifter loss")?;
    tape.backward(loss, &mut model.params)?;
    model.params.step(&cfg.optimizer())?;
    update_running_stats(&mut model.params, &stats)?;
    Ok(terms)
}

pub fn detector_loss<T: Element>(
    tape: &mut Tape<T>,
    model: &DetectorModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    src: &ImageSource,
    train: bool,
) -> Result<(Var, Vec<(String, BatchStats<T>)>)> {
    let stats = stored_statistics(&model.params)?;
    let images = image_batch::<T>(batch, skel, src, stats)?;
    let target = render_batch::<T>(batch, model.net.cfg.heatmap_size, cfg.sigma)?;
    let mut pass = Pass::new(tape, &model.params, train);
    let x = pass.tape.constant(images);
    let pred = model.net.forward(&mut pass, x)?;
    let bn = pass.stats;
    let loss = numeric_guard(loss_2d(tape, pred, &target), "detector loss")?;
    Ok((loss, bn))
}

pub fn detector_step<T: Element>(
    model: &mut DetectorModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    src: &ImageSource,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut tape = Tape::new();
    let (loss, stats) = detector_loss(&mut tape, model, batch, cfg, skel, src, true)?;
    let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    tape.backward(loss, &mut model.params)?;
    model.params.step(&cfg.optimizer())?;
    update_running_stats(&mut model.params, &stats)?;
    Ok(value)
}

/// Detector output fed into the lifter; the reconstruction target is the
/// detector output itself, resampled and held constant.
#[allow(clippy::too_many_arguments)]
pub fn end2end_loss<T: Element>(
    tape: &mut Tape<T>,
    det: &DetectorModel<T>,
    lifter: &LifterModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    src: &ImageSource,
    train: bool,
) -> Result<(Var, LossTerms, Vec<(String, BatchStats<T>)>)> {
    let stats = stored_statistics(&det.params)?;
    let images = image_batch::<T>(batch, skel, src, stats)?;
    let target2d = render_batch::<T>(batch, det.net.cfg.heatmap_size, cfg.sigma)?;
    let mut bn = Vec::new();
    let mut pass = Pass::new(tape, &det.params, train);
    let x = pass.tape.constant(images);
    let hm = det.net.forward(&mut pass, x)?;
    bn.append(&mut pass.stats);
    let l2d = loss_2d(tape, hm, &target2d)?;

    let lc = &lifter.net.cfg;
    let hm_target = if lc.branches.hm { Some(resample_batch(tape.value(hm), lc.hm_size)?) } else { None };
    let targets = ae_targets(batch, hm_target)?;
    let mut pass = Pass::new(tape, &lifter.params, train);
    let out = lifter.net.forward(&mut pass, hm, Heads::ALL)?;
    bn.append(&mut pass.stats);
    let (lae, mut terms) = loss_ae(tape, &out, &targets, &cfg.weights, skel, cfg.rotation_target)?;
    let total = numeric_guard(tape.add(l2d, lae), "end-to-end loss")?;
    terms.total = tape.value(total).data()[0].to_f64().unwrap_or(f64::NAN);
    Ok((total, terms, bn))
}

pub fn end2end_step<T: Element>(
    det: &mut DetectorModel<T>,
    lifter: &mut LifterModel<T>,
    batch: &[&SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    src: &ImageSource,
) -> Result<LossTerms> {
    if batch.is_empty() {
        return Err(Error::arg("empty training batch"));
    }
    let mut tape = Tape::new();
    let (loss, terms, bn) = end2end_loss(&mut tape, det, lifter, batch, cfg, skel, src, true)?;
    tape.backward_only(loss)?;
    distribute_grads(&tape, &mut [&mut det.params, &mut lifter.params])?;
    let opt = cfg.optimizer();
    det.params.step(&opt)?;
    lifter.params.step(&opt)?;
    let (det_bn, lift_bn) = split_stats(bn);
    update_running_stats(&mut det.params, &det_bn)?;
    update_running_stats(&mut lifter.params, &lift_bn)?;
    Ok(terms)
}

/// Per-epoch summary. Epoch 0 is the untrained starting point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_mpjpe_mm: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss (the last
    /// epoch without validation data).
    pub lifter: Option<LifterModel>,
    pub detector: Option<DetectorModel>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// Training records after the 3D-label fraction is applied.
pub fn prepare_train_records(records: &[SampleRecord], cfg: &TrainConfig) -> Vec<SampleRecord> {
    let mut recs: Vec<SampleRecord> = match cfg.max_train_records {
        Some(n) => records.iter().take(n).cloned().collect(),
        None => records.to_vec(),
    };
    if cfg.label_fraction_3d < 1.0 {
        let labelled: Vec<usize> = (0..recs.len()).filter(|&i| recs[i].has_3d).collect();
        let keep = (cfg.label_fraction_3d * labelled.len() as f64).round() as usize;
        let mut order = labelled.clone();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng::stream(cfg.seed, "label-mask", 0));
        let mut drop = vec![false; recs.len()];
        for &i in order.iter().skip(keep) {
            if cfg.masked_as_2d {
                recs[i] = recs[i].clone().into_2d_only();
            } else {
                drop[i] = true;
            }
        }
        recs = recs.into_iter().zip(drop).filter(|(_, d)| !d).map(|(r, _)| r).collect();
    }
    recs
}

fn batches(n: usize, size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, "epoch", epoch as u64));
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

/// Mean validation loss and pose error in evaluation mode.
pub fn validate_lifter(
    model: &LifterModel,
    det: Option<&DetectorModel>,
    val: &[SampleRecord],
    cfg: &TrainConfig,
    skel: &Skeleton,
    src: &ImageSource,
) -> Result<(f64, Option<f64>)> {
    let mut loss_sum = 0.0;
    for chunk in val.chunks(64) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let mut tape = Tape::new();
        let value = match det {
            Some(d) => end2end_loss(&mut tape, d, model, &refs, cfg, skel, src, false)?.1.total,
            None => lifter_loss(&mut tape, model, &refs, cfg, skel, false)?.1.total,
        };
        loss_sum += value * chunk.len() as f64;
    }
    let labelled: Vec<SampleRecord> = val.iter().filter(|r| r.has_3d).cloned().collect();
    let mpjpe = if labelled.is_empty() {
        None
    } else {
        let preds = match det {
            Some(d) => super::infer::predict_images(d, model, &labelled, skel, src, Heads::POSE_ONLY, None)?,
            None => super::infer::predict_records(model, &labelled, cfg.sigma, Heads::POSE_ONLY)?,
        };
        let gt: Vec<_> = labelled.iter().map(|r| r.pose3d.clone().expect("labelled")).collect();
        let pr: Vec<_> = preds.into_iter().map(|p| p.pose).collect();
        Some(crate::eval::mpjpe(&gt, &pr)?)
    };
    Ok((loss_sum / val.len().max(1) as f64, mpjpe))
}

fn validate_detector(model: &DetectorModel, val: &[SampleRecord], cfg: &TrainConfig, skel: &Skeleton, src: &ImageSource) -> Result<f64> {
    let mut sum = 0.0;
    for chunk in val.chunks(16) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let mut tape = Tape::new();
        let (loss, _) = detector_loss(&mut tape, model, &refs, cfg, skel, src, false)?;
        sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(sum / val.len().max(1) as f64)
}

/// Starting networks for [`train`]; missing ones are freshly initialised.
#[derive(Default)]
pub struct InitModels {
    pub lifter: Option<LifterModel>,
    pub detector: Option<DetectorModel>,
}

/// Runs `cfg.epochs` epochs of the configured stage. `on_epoch` sees every
/// log entry as it is produced.
pub fn train(
    cfg: &TrainConfig,
    train_records: &[SampleRecord],
    val: &[SampleRecord],
    skel: &Skeleton,
    src: &ImageSource,
    init: InitModels,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let recs = prepare_train_records(train_records, cfg);
    if recs.is_empty() {
        return Err(Error::arg("no training records"));
    }
    let mut lifter = match (cfg.stage, init.lifter) {
        (Stage::Detector, _) => None,
        (_, Some(m)) => Some(m),
        (_, None) => Some(LifterModel::init(&cfg.lifter, cfg.seed, mean_pose_flat(&recs).as_deref())?),
    };
    let mut detector = match (cfg.stage, init.detector) {
        (Stage::Lifter, _) => None,
        (_, Some(m)) => Some(m),
        (_, None) => {
            let mut d = DetectorModel::init(&cfg.detector, cfg.seed)?;
            let sample: Vec<_> = recs.iter().take(64).map(|r| r.image_or_render(skel, &src.camera, &src.style)).collect();
            let (mean, std) = image_statistics(sample.iter())?;
            d.set_image_statistics(mean, std)?;
            Some(d)
        }
    };

    let evaluate = |lifter: &Option<LifterModel>, detector: &Option<DetectorModel>| -> Result<(Option<f64>, Option<f64>)> {
        if val.is_empty() {
            return Ok((None, None));
        }
        Ok(match (cfg.stage, lifter, detector) {
            (Stage::Detector, _, Some(d)) => (Some(validate_detector(d, val, cfg, skel, src)?), None),
            (Stage::Lifter, Some(l), _) => {
                let (v, m) = validate_lifter(l, None, val, cfg, skel, src)?;
                (Some(v), m)
            }
            (Stage::End2end, Some(l), Some(d)) => {
                let (v, m) = validate_lifter(l, Some(d), val, cfg, skel, src)?;
                (Some(v), m)
            }
            _ => unreachable!("stage networks initialised above"),
        })
    };

    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let (v0, m0) = evaluate(&lifter, &detector)?;
    let first = EpochLog { epoch: 0, train_loss: None, val_loss: v0, val_mpjpe_mm: m0 };
    on_epoch(&first);
    log.push(first);
    let mut best = (v0.unwrap_or(f64::INFINITY), 0usize, lifter.clone(), detector.clone());

    for epoch in 1..=cfg.epochs {
        let mut sum = 0.0;
        for idx in batches(recs.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch: Vec<&SampleRecord> = idx.iter().map(|&i| &recs[i]).collect();
            let loss = match (cfg.stage, lifter.as_mut(), detector.as_mut()) {
                (Stage::Detector, _, Some(d)) => detector_step(d, &batch, cfg, skel, src)?,
                (Stage::Lifter, Some(l), _) => lifter_step(l, &batch, cfg, skel)?.total,
                (Stage::End2end, Some(l), Some(d)) => end2end_step(d, l, &batch, cfg, skel, src)?.total,
                _ => unreachable!("stage networks initialised above"),
            };
            sum += loss * batch.len() as f64;
        }
        let (v, m) = evaluate(&lifter, &detector)?;
        let entry = EpochLog { epoch, train_loss: Some(sum / recs.len() as f64), val_loss: v, val_mpjpe_mm: m };
        on_epoch(&entry);
        log.push(entry);
        // without validation data the last epoch wins
        let score = v.unwrap_or(f64::NEG_INFINITY);
        if score < best.0 || (v.is_none() && epoch == cfg.epochs) {
            best = (score, epoch, lifter.clone(), detector.clone());
        }
    }
    Ok(TrainOutcome { lifter: best.2, detector: best.3, best_epoch: best.1, log })
}
