//! Record generation and the `EGODATA1` container.
//!
//! Layout (little-endian): magic, `u64` record count, then per record
//! `u32 character_id, u32 frame_id, u8 action, u8 has_3d, u8 has_image`,
//! 15×2 `f64` joints (heatmap cells), `u16` visibility mask, 16×3 `f64`
//! positions, 16×4 `f64` quaternions (`w x y z`; zeros without 3D), and a
//! `u32`-length-prefixed image payload (`u16 w, u16 h`, RGB bytes).

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::clip::interpolate_clip;
use super::pose::{default_limits, sample_pose, Action, JointLimit, PoseLimits};
use super::raster::{rasterize_joints, Image, StickStyle};
use crate::camera::{FisheyeCamera, Joints2D, DEFAULT_ROT_SIGMA_RAD, DEFAULT_TRANS_SIGMA_M, HEATMAP_SCALE};
use crate::error::{Error, Result};
use crate::kinematics::{
    extract_rotations, forward_kinematics, validate_pose, LocalRotations, Pose3D, Quaternion, Skeleton, Vec3,
    NUM_HEATMAPS, NUM_JOINTS,
};
use crate::rng;

const MAGIC: &[u8; 8] = b"EGODATA1";

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub character_id: u32,
    pub frame_id: u32,
    pub action: Action,
    pub has_3d: bool,
    /// Heatmap-cell coordinates of the heatmap joints.
    pub joints2d: Joints2D,
    /// Camera-frame positions; `None` for 2D-only records.
    pub pose3d: Option<Pose3D>,
    pub rotations: Option<LocalRotations>,
    pub image: Option<Image>,
}

impl SampleRecord {
    /// Stored image, or the stick figure drawn from the 2D joints.
    pub fn image_or_render(&self, skel: &Skeleton, cam: &FisheyeCamera, style: &StickStyle) -> Image {
        match &self.image {
            Some(img) => img.clone(),
            None => rasterize_joints(&self.joints2d.scaled(1.0 / HEATMAP_SCALE), skel, cam, style),
        }
    }

    /// Drops the 3D payload, as for records with 2D annotation only.
    pub fn into_2d_only(mut self) -> Self {
        self.has_3d = false;
        self.pose3d = None;
        self.rotations = None;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Val,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Val];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Val => "val",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerSplit<T> {
    pub train: T,
    pub test: T,
    pub val: T,
}

impl<T: Copy> PerSplit<T> {
    pub fn get(&self, s: Split) -> T {
        match s {
            Split::Train => self.train,
            Split::Test => self.test,
            Split::Val => self.val,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub frames: PerSplit<usize>,
    /// Characters per split; ids are assigned consecutively, train first.
    pub characters: PerSplit<usize>,
    pub keyframes_per_clip: usize,
    pub steps_between: usize,
    /// Neck position in the headset rig frame, metres.
    pub root_position: Vec3,
    pub camera: FisheyeCamera,
    pub jitter_trans_sigma: f64,
    pub jitter_rot_sigma: f64,
    pub limits: Vec<JointLimit>,
    /// Fraction of train records written without 3D labels.
    pub train_2d_only_fraction: f64,
    pub store_images: bool,
    pub style: StickStyle,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: PerSplit { train: 5000, test: 1000, val: 500 },
            characters: PerSplit { train: 6, test: 2, val: 1 },
            keyframes_per_clip: 4,
            steps_between: 9,
            root_position: [0.0, -0.15, 0.12],
            camera: FisheyeCamera::default(),
            jitter_trans_sigma: DEFAULT_TRANS_SIGMA_M,
            jitter_rot_sigma: DEFAULT_ROT_SIGMA_RAD,
            limits: default_limits(),
            train_2d_only_fraction: 0.0,
            store_images: false,
            style: StickStyle::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.keyframes_per_clip < 2 {
            return Err(Error::Config("keyframes_per_clip must be at least 2".into()));
        }
        for s in Split::ALL {
            if self.frames.get(s) > 0 && self.characters.get(s) == 0 {
                return Err(Error::Config(format!("split {} has frames but no characters", s.name())));
            }
        }
        if !(0.0..=1.0).contains(&self.train_2d_only_fraction) {
            return Err(Error::Config("train_2d_only_fraction must lie in [0, 1]".into()));
        }
        if !(self.jitter_trans_sigma >= 0.0 && self.jitter_rot_sigma >= 0.0) {
            return Err(Error::Config("jitter sigmas must be non-negative".into()));
        }
        Ok(())
    }

    fn first_character(&self, split: Split) -> usize {
        match split {
            Split::Train => 0,
            Split::Test => self.characters.train,
            Split::Val => self.characters.train + self.characters.test,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[SampleRecord] {
        match s {
            Split::Train => &self.train,
            Split::Test => &self.test,
            Split::Val => &self.val,
        }
    }

    fn split_mut(&mut self, s: Split) -> &mut Vec<SampleRecord> {
        match s {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
            Split::Val => &mut self.val,
        }
    }
}

/// One frame's annotations from a rig-frame rotation set, under a
/// (possibly jittered) camera.
pub fn annotate(
    rot_rig: &[Quaternion],
    root_rig: Vec3,
    cam: &FisheyeCamera,
    skel: &Skeleton,
) -> Result<(Pose3D, LocalRotations, Joints2D)> {
    let pose_rig = forward_kinematics(rot_rig, skel, root_rig);
    let pose: Pose3D = pose_rig.iter().map(|&p| cam.rig_to_camera(p)).collect();
    validate_pose(&pose)?;
    let rotations = extract_rotations(&pose, skel)?;
    let check = forward_kinematics(&rotations, skel, pose[0]);
    let drift = pose
        .iter()
        .zip(&check)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    if drift > 1e-6 {
        return Err(Error::Numeric(format!("rotation extraction drifted by {drift:.3e} m")));
    }
    let joints = cam.project_joints(&pose, skel)?.scaled(HEATMAP_SCALE);
    Ok((pose, rotations, joints))
}

/// Builds all three splits in memory. Clips rotate through the split's
/// characters and then through the actions; each clip gets its own mount
/// jitter. Records are ordered by `(character_id, frame_id)`.
pub fn generate(config: &SynthConfig, skel: &Skeleton, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let limits = PoseLimits::new(skel, &config.limits)?;
    let mut out = Dataset::default();
    for split in Split::ALL {
        let total = config.frames.get(split);
        let chars = config.characters.get(split);
        let first = config.first_character(split);
        let mut per_char: Vec<Vec<SampleRecord>> = vec![Vec::new(); chars];
        let mut produced = 0;
        let mut clip_index = 0u64;
        while produced < total {
            let c = clip_index as usize % chars;
            let action = Action::ALL[(clip_index as usize / chars) % Action::ALL.len()];
            let label = format!("{}/clip", split.name());
            let clip_seed = rng::derive_seed(seed, &label, clip_index);
            let scaled = limits.scaled_for(skel, action);
            let keys: Vec<LocalRotations> = (0..config.keyframes_per_clip)
                .map(|k| sample_pose(rng::derive_seed(clip_seed, "keyframe", k as u64), &scaled, skel))
                .collect();
            let clip = interpolate_clip(&keys, config.steps_between)?.with_action(action).with_root(config.root_position);
            let cam = config.camera.jitter_mount(
                rng::derive_seed(clip_seed, "mount", 0),
                config.jitter_trans_sigma,
                config.jitter_rot_sigma,
            )?;
            for (rot, root) in clip.frames.iter().zip(&clip.root_positions) {
                if produced == total {
                    break;
                }
                let (pose, rotations, joints2d) = annotate(rot, *root, &cam, skel)?;
                let image = config.store_images.then(|| {
                    rasterize_joints(&joints2d.scaled(1.0 / HEATMAP_SCALE), skel, &config.camera, &config.style)
                });
                let bucket = &mut per_char[c];
                bucket.push(SampleRecord {
                    character_id: (first + c) as u32,
                    frame_id: bucket.len() as u32,
                    action,
                    has_3d: true,
                    joints2d,
                    pose3d: Some(pose),
                    rotations: Some(rotations),
                    image,
                });
                produced += 1;
            }
            clip_index += 1;
        }
        *out.split_mut(split) = per_char.into_iter().flatten().collect();
    }
    let n2d = (config.train_2d_only_fraction * out.train.len() as f64).round() as usize;
    mask_3d(&mut out.train, n2d, rng::derive_seed(seed, "mask2d", 0));
    Ok(out)
}

/// Strips the 3D payload from exactly `count` records chosen by `seed`.
pub fn mask_3d(records: &mut [SampleRecord], count: usize, seed: u64) {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.shuffle(&mut rng::stream(seed, "shuffle", 0));
    for &i in idx.iter().take(count) {
        let r = records[i].clone();
        records[i] = r.into_2d_only();
    }
}

fn put_f64s(w: &mut Vec<u8>, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_records(mut w: impl Write, records: &[SampleRecord]) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + records.len() * 1024);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.joints2d.len() != NUM_HEATMAPS {
            return Err(Error::dim(format!("record has {} 2D joints", r.joints2d.len())));
        }
        buf.extend_from_slice(&r.character_id.to_le_bytes());
        buf.extend_from_slice(&r.frame_id.to_le_bytes());
        buf.push(r.action.index());
        buf.push(r.has_3d as u8);
        buf.push(r.image.is_some() as u8);
        put_f64s(&mut buf, r.joints2d.uv.iter().flatten().copied());
        buf.extend_from_slice(&r.joints2d.visibility_mask().to_le_bytes());
        match (&r.pose3d, &r.rotations, r.has_3d) {
            (Some(p), Some(q), true) if p.len() == NUM_JOINTS && q.len() == NUM_JOINTS => {
                put_f64s(&mut buf, p.iter().flatten().copied());
                put_f64s(&mut buf, q.iter().flat_map(|q| q.to_array()));
            }
            (None, None, false) => put_f64s(&mut buf, std::iter::repeat(0.0).take(NUM_JOINTS * 7)),
            _ => return Err(Error::Format("has_3d disagrees with the 3D payload".into())),
        }
        match &r.image {
            None => buf.extend_from_slice(&0u32.to_le_bytes()),
            Some(img) => {
                buf.extend_from_slice(&((4 + img.data.len()) as u32).to_le_bytes());
                buf.extend_from_slice(&(img.width as u16).to_le_bytes());
                buf.extend_from_slice(&(img.height as u16).to_le_bytes());
                buf.extend_from_slice(&img.data);
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return Err(Error::Format("dataset file is truncated".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_records(mut r: impl Read) -> Result<Vec<SampleRecord>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, at: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format("not a dataset file (bad magic)".into()));
    }
    let n = u64::from_le_bytes(c.take(8)?.try_into().expect("8 bytes")) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let character_id = c.u32()?;
        let frame_id = c.u32()?;
        let action = Action::from_index(c.u8()?)?;
        let has_3d = c.u8()? != 0;
        let has_image = c.u8()? != 0;
        let mut uv = Vec::with_capacity(NUM_HEATMAPS);
        for _ in 0..NUM_HEATMAPS {
            uv.push([c.f64()?, c.f64()?]);
        }
        let mask = c.u16()?;
        let visible = (0..NUM_HEATMAPS).map(|j| mask & (1 << j) != 0).collect();
        let mut pose = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..NUM_JOINTS {
            pose.push([c.f64()?, c.f64()?, c.f64()?]);
        }
        let mut rot = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..NUM_JOINTS {
            rot.push(Quaternion::new(c.f64()?, c.f64()?, c.f64()?, c.f64()?));
        }
        let len = c.u32()? as usize;
        let image = if len > 0 {
            let width = c.u16()? as usize;
            let height = c.u16()? as usize;
            let data = c.take(len - 4)?.to_vec();
            if data.len() != width * height * 3 {
                return Err(Error::Format("image payload size disagrees with its dimensions".into()));
            }
            Some(Image { width, height, data })
        } else {
            None
        };
        if has_image != image.is_some() {
            return Err(Error::Format("has_image flag disagrees with the payload".into()));
        }
        out.push(SampleRecord {
            character_id,
            frame_id,
            action,
            has_3d,
            joints2d: Joints2D { uv, visible },
            pose3d: has_3d.then_some(pose),
            rotations: has_3d.then_some(rot),
            image,
        });
    }
    if c.at != bytes.len() {
        return Err(Error::Format("trailing bytes after the last record".into()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub file: String,
    pub records: usize,
    pub records_3d: usize,
    pub per_action: BTreeMap<String, usize>,
    pub characters: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub skeleton_file: String,
    pub splits: BTreeMap<String, SplitSummary>,
    pub config: SynthConfig,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SKELETON_FILE: &str = "skeleton.toml";

pub fn summarize(records: &[SampleRecord], file: &str) -> SplitSummary {
    let mut per_action: BTreeMap<String, usize> = Action::ALL.iter().map(|a| (a.name().to_string(), 0)).collect();
    let mut characters: Vec<u32> = Vec::new();
    for r in records {
        *per_action.get_mut(r.action.name()).expect("all actions listed") += 1;
        if !characters.contains(&r.character_id) {
            characters.push(r.character_id);
        }
    }
    characters.sort_unstable();
    SplitSummary {
        file: file.to_string(),
        records: records.len(),
        records_3d: records.iter().filter(|r| r.has_3d).count(),
        per_action,
        characters,
    }
}

/// Writes `<split>.egodata` per split, the skeleton used and a manifest.
pub fn write_dataset(dir: &Path, data: &Dataset, config: &SynthConfig, skel: &Skeleton, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut splits = BTreeMap::new();
    for s in Split::ALL {
        let file = format!("{}.egodata", s.name());
        let mut buf = Vec::new();
        write_records(&mut buf, data.split(s))?;
        fs::write(dir.join(&file), buf)?;
        splits.insert(s.name().to_string(), summarize(data.split(s), &file));
    }
    fs::write(dir.join(SKELETON_FILE), skel.to_toml())?;
    let manifest = Manifest {
        format: "EGODATA1".into(),
        seed,
        skeleton_file: SKELETON_FILE.into(),
        splits,
        config: config.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(manifest)
}

pub fn generate_dataset(config: &SynthConfig, skel: &Skeleton, seed: u64, dir: &Path) -> Result<Manifest> {
    let data = generate(config, skel, seed)?;
    write_dataset(dir, &data, config, skel, seed)
}

pub struct LoadedDataset {
    pub data: Dataset,
    pub manifest: Manifest,
    pub skeleton: Skeleton,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset> {
    let manifest = Manifest::load(dir)?;
    let skeleton = Skeleton::load(&dir.join(&manifest.skeleton_file))?;
    let mut data = Dataset::default();
    for s in Split::ALL {
        let summary = manifest
            .splits
            .get(s.name())
            .ok_or_else(|| Error::Format(format!("manifest lacks the {} split", s.name())))?;
        let path: PathBuf = dir.join(&summary.file);
        let records = read_records(fs::File::open(&path)?)?;
        if records.len() != summary.records {
            return Err(Error::Format(format!("{} holds {} records, manifest says {}", path.display(), records.len(), summary.records)));
        }
        *data.split_mut(s) = records;
    }
    Ok(LoadedDataset { data, manifest, skeleton })
}
