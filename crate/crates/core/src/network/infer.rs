use rand_distr::{Distribution, Normal};

use super::detector::stored_statistics;
use super::layers::Pass;
use super::lifter::Heads;
use super::train::{image_batch, render_batch, DetectorModel, ImageSource, LifterModel};
use crate::error::{Error, Result};
use crate::heatmap::{decode, DecodeConfig, HeatmapStack};
use crate::kinematics::{LocalRotations, Pose3D, Quat, Skeleton, NUM_JOINTS, POSE_BOUND_M};
use crate::rng;
use crate::synth::SampleRecord;
use crate::tensor::{Element, Tape, Tensor};

const CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub pose: Pose3D,
    pub rotations: Option<LocalRotations>,
    pub hm: Option<HeatmapStack>,
    /// Peak height of each input heatmap.
    pub confidence: Vec<f64>,
}

fn stack_at(t: &Tensor<f32>, i: usize) -> HeatmapStack {
    let [_, c, h, w] = *t.shape() else { unreachable!("checked by callers") };
    let per = c * h * w;
    HeatmapStack { channels: c, height: h, width: w, data: t.data()[i * per..(i + 1) * per].to_vec() }
}

/// Runs the encoder and the requested branches in evaluation mode on a
/// `B×15×S×S` batch.
pub fn predict_heatmaps(model: &LifterModel, input: &Tensor<f32>, heads: Heads) -> Result<Vec<Prediction>> {
    if input.shape().len() != 4 {
        return Err(Error::dim(format!("expected a B×15×S×S batch, got {:?}", input.shape())));
    }
    let mut tape = Tape::new();
    let mut pass = Pass::new(&mut tape, &model.params, false);
    let x = pass.tape.constant(input.clone());
    let out = model.net.forward(&mut pass, x, heads)?;

    let pose = tape.value(out.pose).data();
    let rot = out.rot.map(|r| tape.value(r).data().to_vec());
    let hm = out.hm.map(|h| tape.value(h).clone());
    let bound = POSE_BOUND_M * (1.0 - 1e-9);
    let mut preds = Vec::with_capacity(input.shape()[0]);
    for b in 0..input.shape()[0] {
        let p = &pose[b * NUM_JOINTS * 3..(b + 1) * NUM_JOINTS * 3];
        let pose: Pose3D = p.chunks(3).map(|c| [0, 1, 2].map(|k| (c[k] as f64).clamp(-bound, bound))).collect();
        let rotations = rot.as_ref().map(|r| {
            r[b * NUM_JOINTS * 4..(b + 1) * NUM_JOINTS * 4]
                .chunks(4)
                .map(|q| Quat::new(q[0] as f64, q[1] as f64, q[2] as f64, q[3] as f64).normalize())
                .collect()
        });
        let confidence = decode(&stack_at(input, b), &DecodeConfig::default()).confidence;
        preds.push(Prediction { pose, rotations, hm: hm.as_ref().map(|t| stack_at(t, b)), confidence });
    }
    Ok(preds)
}

/// Lifts heatmaps rendered from each record's 2D annotation.
pub fn predict_records(model: &LifterModel, records: &[SampleRecord], sigma: f64, heads: Heads) -> Result<Vec<Prediction>> {
    predict_noisy_records(model, records, sigma, heads, None)
}

/// As [`predict_records`], with white Gaussian noise `(sigma, seed)` added
/// to the rendered heatmaps.
pub fn predict_noisy_records(
    model: &LifterModel,
    records: &[SampleRecord],
    sigma: f64,
    heads: Heads,
    noise: Option<(f64, u64)>,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(records.len());
    for (ci, chunk) in records.chunks(CHUNK).enumerate() {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let mut input = render_batch::<f32>(&refs, model.net.cfg.input_size, sigma)?;
        if let Some((s, seed)) = noise {
            add_image_noise(&mut input, s, seed, ci * CHUNK)?;
        }
        out.extend(predict_heatmaps(model, &input, heads)?);
    }
    Ok(out)
}

/// Detector heatmaps for normalised `B×3×S×S` images.
pub fn detect(det: &DetectorModel, images: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let mut pass = Pass::new(&mut tape, &det.params, false);
    let x = pass.tape.constant(images.clone());
    let hm = det.net.forward(&mut pass, x)?;
    Ok(tape.value(hm).clone())
}

/// Adds white Gaussian noise to a batch (normalised images or heatmaps); `first` is the index of
/// the first image within the evaluated set, so every image has its own
/// stream.
pub fn add_image_noise<T: Element>(images: &mut Tensor<T>, sigma: f64, seed: u64, first: usize) -> Result<()> {
    if sigma == 0.0 {
        return Ok(());
    }
    let n = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let per = images.len() / images.shape()[0];
    for (i, img) in images.data_mut().chunks_mut(per).enumerate() {
        let mut r = rng::stream(seed, "image-noise", (first + i) as u64);
        img.iter_mut().for_each(|v| *v = *v + T::c(n.sample(&mut r)));
    }
    Ok(())
}

/// Full pipeline: image, detector heatmaps, lifted pose. `noise` is
/// `(sigma, seed)` in normalised intensity units.
pub fn predict_images(
    det: &DetectorModel,
    lifter: &LifterModel,
    records: &[SampleRecord],
    skel: &Skeleton,
    src: &ImageSource,
    heads: Heads,
    noise: Option<(f64, u64)>,
) -> Result<Vec<Prediction>> {
    let stats = stored_statistics(&det.params)?;
    let mut out = Vec::with_capacity(records.len());
    for (ci, chunk) in records.chunks(CHUNK).enumerate() {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let mut images = image_batch::<f32>(&refs, skel, src, stats)?;
        if let Some((sigma, seed)) = noise {
            add_image_noise(&mut images, sigma, seed, ci * CHUNK)?;
        }
        let hm = detect(det, &images)?;
        out.extend(predict_heatmaps(lifter, &hm, heads)?);
    }
    Ok(out)
}
