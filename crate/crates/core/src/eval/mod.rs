//! Pose-error metrics, report tables, noise sweeps and rotation traces.

mod metrics;
mod report;
mod trace;

pub use metrics::{joint_errors, mean_pose, mpjpe, pa_mpjpe, per_joint, procrustes_align, root_relative};
pub use report::{noise_sweep, per_action, ActionReport, ActionRow, EvalReport, NoiseRow, NoiseTable};
pub use trace::{euler_zxy_deg, jitter, quat_from_euler_zxy_deg, rotation_trace, RotationTrace, TraceAngle};
