use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{LocalRotations, Quaternion};
use crate::synth::MotionClip;

/// Which scalar to follow through time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAngle {
    /// Rotation angle (geodesic distance from identity).
    #[default]
    Geodesic,
    /// One Z-X-Y Euler component: 0 = Z, 1 = X, 2 = Y.
    Euler(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationTrace {
    pub joint: usize,
    /// Degrees per frame.
    pub gt: Vec<f64>,
    pub pred: Vec<f64>,
    /// Geodesic distance between prediction and truth, degrees.
    pub error: Vec<f64>,
    pub gt_jitter: f64,
    pub pred_jitter: f64,
}

/// Mean absolute second difference; zero below three samples.
pub fn jitter(series: &[f64]) -> f64 {
    if series.len() < 3 {
        return 0.0;
    }
    let n = series.len() - 2;
    series.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).abs()).sum::<f64>() / n as f64
}

/// Z-X-Y intrinsic Euler angles in degrees, `R = Rz · Rx · Ry`.
pub fn euler_zxy_deg(q: Quaternion) -> [f64; 3] {
    let m = q.to_matrix();
    let x = m[2][1].clamp(-1.0, 1.0).asin();
    let (z, y) = if m[2][1].abs() < 1.0 - 1e-12 {
        ((-m[0][1]).atan2(m[1][1]), (-m[2][0]).atan2(m[2][2]))
    } else {
        // gimbal lock: fold everything into Z
        (m[1][0].atan2(m[0][0]), 0.0)
    };
    [z.to_degrees(), x.to_degrees(), y.to_degrees()]
}

/// Inverse of [`euler_zxy_deg`].
pub fn quat_from_euler_zxy_deg(e: [f64; 3]) -> Quaternion {
    let rz = Quaternion::from_axis_angle([0.0, 0.0, 1.0], e[0].to_radians());
    let rx = Quaternion::from_axis_angle([1.0, 0.0, 0.0], e[1].to_radians());
    let ry = Quaternion::from_axis_angle([0.0, 1.0, 0.0], e[2].to_radians());
    rz.mul(rx).mul(ry)
}

fn angle_of(q: Quaternion, kind: TraceAngle) -> f64 {
    match kind {
        TraceAngle::Geodesic => q.angle().to_degrees(),
        TraceAngle::Euler(k) => euler_zxy_deg(q)[k.min(2)],
    }
}

pub fn rotation_trace(clip: &MotionClip, pred: &[LocalRotations], joint: usize, kind: TraceAngle) -> Result<RotationTrace> {
    if clip.frames.len() != pred.len() {
        return Err(Error::dim(format!("clip has {} frames, prediction {}", clip.frames.len(), pred.len())));
    }
    if clip.frames.iter().chain(pred).any(|f| joint >= f.len()) {
        return Err(Error::arg(format!("joint {joint} out of range")));
    }
    let gt: Vec<f64> = clip.frames.iter().map(|f| angle_of(f[joint], kind)).collect();
    let pr: Vec<f64> = pred.iter().map(|f| angle_of(f[joint], kind)).collect();
    let error = clip.frames.iter().zip(pred).map(|(g, p)| g[joint].angle_to(p[joint]).to_degrees()).collect();
    Ok(RotationTrace { joint, gt_jitter: jitter(&gt), pred_jitter: jitter(&pr), gt, pred: pr, error })
}
