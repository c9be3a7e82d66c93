//! Equidistant fisheye camera looking down from the headset.
//!
//! Camera-frame points have +Z along the optical axis (down the body), +X
//! towards the wearer's left and +Y forward. Pixel centres sit at integer
//! coordinates, so the image covers `[-0.5, W - 0.5] × [-0.5, H - 0.5]`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Quaternion, Skeleton, Vec3};

pub const IMAGE_SIZE: usize = 368;
pub const HEATMAP_SIZE: usize = 47;
pub const DEFAULT_TRANS_SIGMA_M: f64 = 0.005;
pub const DEFAULT_ROT_SIGMA_RAD: f64 = 2.0 * PI / 180.0;

/// Image pixels → heatmap cells.
pub const HEATMAP_SCALE: f64 = HEATMAP_SIZE as f64 / IMAGE_SIZE as f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FisheyeCamera {
    /// Pixels per radian off the optical axis.
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub image_size: [usize; 2],
    pub fov: f64,
    /// Orientation of the camera in the headset rig frame.
    pub mount_rotation: Quaternion,
    /// Camera centre in the rig frame, metres.
    pub mount_translation: Vec3,
}

impl Default for FisheyeCamera {
    /// A 180° lens whose image circle touches the borders of a 368×368 image.
    fn default() -> Self {
        let half = IMAGE_SIZE as f64 / 2.0;
        FisheyeCamera {
            focal: half / (PI / 2.0),
            principal_point: [half, half],
            image_size: [IMAGE_SIZE, IMAGE_SIZE],
            fov: PI,
            mount_rotation: Quaternion::identity(),
            mount_translation: [0.0; 3],
        }
    }
}

/// 2D joints for the heatmap joints of a skeleton, with visibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joints2D {
    pub uv: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

impl Joints2D {
    pub fn len(&self) -> usize {
        self.uv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uv.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Joints2D {
        Joints2D { uv: self.uv.iter().map(|p| [p[0] * s, p[1] * s]).collect(), visible: self.visible.clone() }
    }

    /// Bit `j` set when joint `j` is visible.
    pub fn visibility_mask(&self) -> u16 {
        self.visible.iter().enumerate().fold(0, |m, (j, &v)| if v { m | (1 << j) } else { m })
    }
}

impl FisheyeCamera {
    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        let [cx, cy] = self.principal_point;
        if !(self.focal > 0.0) {
            return Err(Error::Config("camera focal must be positive".into()));
        }
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI) {
            return Err(Error::Config("camera fov must lie in (0, 2π]".into()));
        }
        if !(0.0..=w as f64).contains(&cx) || !(0.0..=h as f64).contains(&cy) {
            return Err(Error::Config("principal point lies outside the image".into()));
        }
        if !self.mount_rotation.is_unit(1e-6) {
            return Err(Error::Config("mount rotation must be a unit quaternion".into()));
        }
        Ok(())
    }

    /// Rig-frame point expressed in this camera's frame.
    pub fn rig_to_camera(&self, p: Vec3) -> Vec3 {
        let d = [0, 1, 2].map(|k| p[k] - self.mount_translation[k]);
        self.mount_rotation.conjugate().rotate(d)
    }

    pub fn camera_to_rig(&self, p: Vec3) -> Vec3 {
        let r = self.mount_rotation.rotate(p);
        [0, 1, 2].map(|k| r[k] + self.mount_translation[k])
    }

    /// Pixel of a camera-frame point and whether it is inside the lens
    /// field of view and the image.
    pub fn project(&self, p: Vec3) -> Result<([f64; 2], bool)> {
        let rho = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if rho == 0.0 && p[2] == 0.0 {
            return Err(Error::arg("cannot project the camera centre"));
        }
        let theta = rho.atan2(p[2]);
        let r = self.focal * theta;
        let (dx, dy) = if rho > 0.0 { (p[0] / rho, p[1] / rho) } else { (0.0, 0.0) };
        let px = [self.principal_point[0] + r * dx, self.principal_point[1] + r * dy];
        Ok((px, theta <= self.fov / 2.0 && self.in_bounds(px)))
    }

    pub fn in_bounds(&self, px: [f64; 2]) -> bool {
        let [w, h] = self.image_size;
        (-0.5..=w as f64 - 0.5).contains(&px[0]) && (-0.5..=h as f64 - 0.5).contains(&px[1])
    }

    /// Unit viewing ray through a pixel.
    pub fn unproject(&self, px: [f64; 2]) -> Result<Vec3> {
        let (dx, dy) = (px[0] - self.principal_point[0], px[1] - self.principal_point[1]);
        let r = (dx * dx + dy * dy).sqrt();
        let r_max = self.focal * self.fov / 2.0;
        if r > r_max * (1.0 + 1e-12) {
            return Err(Error::arg(format!("pixel radius {r:.3} exceeds the lens radius {r_max:.3}")));
        }
        let theta = r.min(r_max) / self.focal;
        if r == 0.0 {
            return Ok([0.0, 0.0, 1.0]);
        }
        let s = theta.sin();
        Ok([s * dx / r, s * dy / r, theta.cos()])
    }

    /// Perturbs the mount: Gaussian translation per axis, and a rotation by
    /// a Gaussian axis-angle vector applied on top of the current mount.
    pub fn jitter_mount(&self, seed: u64, trans_sigma: f64, rot_sigma: f64) -> Result<FisheyeCamera> {
        if !(trans_sigma >= 0.0 && rot_sigma >= 0.0) {
            return Err(Error::arg("jitter sigmas must be non-negative"));
        }
        let mut out = *self;
        if trans_sigma == 0.0 && rot_sigma == 0.0 {
            return Ok(out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if trans_sigma > 0.0 {
            let n = Normal::new(0.0, trans_sigma).expect("valid sigma");
            for k in 0..3 {
                out.mount_translation[k] += n.sample(&mut rng);
            }
        }
        if rot_sigma > 0.0 {
            let n = Normal::new(0.0, rot_sigma).expect("valid sigma");
            let w: [f64; 3] = [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)];
            let angle = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
            if angle > 0.0 {
                out.mount_rotation = Quaternion::from_axis_angle(w, angle).mul(self.mount_rotation).canonical();
            }
        }
        Ok(out)
    }

    /// Projects the heatmap joints of a camera-frame pose, in image pixels.
    pub fn project_joints(&self, pose: &[Vec3], skel: &Skeleton) -> Result<Joints2D> {
        let mut uv = Vec::with_capacity(skel.heatmap_joints.len());
        let mut visible = Vec::with_capacity(skel.heatmap_joints.len());
        for &j in &skel.heatmap_joints {
            let (p, v) = self.project(pose[j])?;
            uv.push(p);
            visible.push(v);
        }
        Ok(Joints2D { uv, visible })
    }
}
