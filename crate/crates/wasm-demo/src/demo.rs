//! Plain-Rust side of the demo, kept free of JS types so it can be tested natively.

use egopose::camera::{FisheyeCamera, Joints2D, HEATMAP_SCALE, HEATMAP_SIZE};
use egopose::eval::{mpjpe, pa_mpjpe};
use egopose::heatmap::{decode, render, DecodeConfig};
use egopose::kinematics::{LocalRotations, Pose3D, Quaternion, Skeleton};
use egopose::synth::{annotate, default_limits, rasterize_joints, sample_pose, Action, PoseLimits, StickStyle, SynthConfig};
use egopose::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct View {
    pub skel: Skeleton,
    pub cam: FisheyeCamera,
    pub action: Action,
    pub pose: Pose3D,
    pub rotations: LocalRotations,
    /// Heatmap-grid coordinates.
    pub joints: Joints2D,
}

impl View {
    /// One sampled pose of `action`, seen by the headset camera pitched by `tilt_deg`.
    pub fn sample(seed: u64, action: u8, tilt_deg: f64) -> Result<View> {
        let skel = Skeleton::egocentric();
        let action = Action::from_index(action)?;
        let limits = PoseLimits::new(&skel, &default_limits())?.scaled_for(&skel, action);
        let rot = sample_pose(seed, &limits, &skel);
        let cam = FisheyeCamera {
            mount_rotation: Quaternion::from_axis_angle([1.0, 0.0, 0.0], tilt_deg.to_radians()),
            ..FisheyeCamera::default()
        };
        let (pose, rotations, joints) = annotate(&rot, SynthConfig::default().root_position, &cam, &skel)?;
        Ok(View { skel, cam, action, pose, rotations, joints })
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        let img = rasterize_joints(&self.joints.scaled(1.0 / HEATMAP_SCALE), &self.skel, &self.cam, &StickStyle::default());
        img.data.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
    }

    /// `(u, v, visible)` per heatmap joint, in image pixels.
    pub fn joints_px(&self) -> Vec<f64> {
        let px = self.joints.scaled(1.0 / HEATMAP_SCALE);
        px.uv.iter().zip(&px.visible).flat_map(|(p, &v)| [p[0], p[1], v as u8 as f64]).collect()
    }

    /// Channel-wise maximum of the rendered heatmaps, as a grey RGBA image.
    pub fn heatmap_rgba(&self, sigma: f64) -> Result<Vec<u8>> {
        let hm = render(&self.joints, HEATMAP_SIZE, sigma)?;
        let cells = hm.height * hm.width;
        Ok((0..cells)
            .flat_map(|i| {
                let m = (0..hm.channels).map(|c| hm.channel(c)[i]).fold(0.0f32, f32::max);
                let g = (m.clamp(0.0, 1.0) * 255.0).round() as u8;
                [g, g, g, 255]
            })
            .collect())
    }

    /// Decode error per joint in heatmap cells; NaN for joints outside the image.
    pub fn decode_errors(&self, sigma: f64) -> Result<Vec<f64>> {
        let hm = render(&self.joints, HEATMAP_SIZE, sigma)?;
        let d = decode(&hm, &DecodeConfig::default());
        Ok(self
            .joints
            .uv
            .iter()
            .zip(&self.joints.visible)
            .zip(&d.joints.uv)
            .map(|((t, &vis), p)| if vis { (t[0] - p[0]).hypot(t[1] - p[1]) } else { f64::NAN })
            .collect())
    }

    /// `[MPJPE, PA-MPJPE]` in mm after adding isotropic Gaussian noise of
    /// `sigma_mm` to every joint.
    pub fn noise_metrics(&self, sigma_mm: f64, seed: u64) -> Result<[f64; 2]> {
        let normal = Normal::new(0.0, sigma_mm.max(0.0) / 1000.0).map_err(|e| egopose::Error::InvalidArgument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Pose3D = self.pose.iter().map(|p| p.map(|c| c + normal.sample(&mut rng))).collect();
        let (gt, pred) = (vec![self.pose.clone()], vec![noisy]);
        Ok([mpjpe(&gt, &pred)?, pa_mpjpe(&gt, &pred)?])
    }
}

/// Renders a single joint at heatmap cell `(u, v)` and decodes it back:
/// `[u', v', error]`.
pub fn probe_decode(u: f64, v: f64, sigma: f64) -> Result<[f64; 3]> {
    let joints = Joints2D { uv: vec![[u, v]], visible: vec![true] };
    let hm = render(&joints, HEATMAP_SIZE, sigma)?;
    let d = decode(&hm, &DecodeConfig::default());
    let [du, dv] = d.joints.uv[0];
    Ok([du, dv, (du - u).hypot(dv - v)])
}

pub fn action_names() -> Vec<&'static str> {
    Action::ALL.iter().map(|a| a.name()).collect()
}
