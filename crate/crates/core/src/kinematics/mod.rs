//! Skeleton, quaternions, forward kinematics and rotation extraction.

mod fk;
mod quat;
pub mod real;
mod skeleton;

pub use fk::{
    extract_rotations, forward_kinematics, global_rotations, is_zero_twist, limb_vectors,
    triad_children, validate_pose, LocalRotations, Pose3D, POSE_BOUND_M,
};
pub use quat::{Quat, Quaternion};
pub use real::{Dual, Real, Vec3};
pub use skeleton::{Skeleton, DEFAULT_SKELETON_TOML, NUM_HEATMAPS, NUM_JOINTS, NUM_LIMBS};
