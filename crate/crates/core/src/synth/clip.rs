use serde::{Deserialize, Serialize};

use super::pose::Action;
use crate::error::{Error, Result};
use crate::kinematics::{LocalRotations, Vec3};

pub const DEFAULT_FPS: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub frames: Vec<LocalRotations>,
    pub root_positions: Vec<Vec3>,
    pub fps: f64,
    pub action: Action,
}

impl MotionClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn with_root(mut self, root: Vec3) -> Self {
        self.root_positions = vec![root; self.frames.len()];
        self
    }

    pub fn with_action(mut self, action: Action) -> Self {
        self.action = action;
        self
    }
}

/// Slerps every joint between consecutive keyframes, inserting
/// `steps_between` frames per gap. Keyframes appear verbatim in the clip.
pub fn interpolate_clip(keyframes: &[LocalRotations], steps_between: usize) -> Result<MotionClip> {
    if keyframes.len() < 2 {
        return Err(Error::arg("a clip needs at least two keyframes"));
    }
    let joints = keyframes[0].len();
    if keyframes.iter().any(|k| k.len() != joints) {
        return Err(Error::dim("keyframes disagree on the joint count"));
    }
    let mut frames = Vec::with_capacity((keyframes.len() - 1) * (steps_between + 1) + 1);
    for pair in keyframes.windows(2) {
        frames.push(pair[0].clone());
        for s in 1..=steps_between {
            let t = s as f64 / (steps_between + 1) as f64;
            frames.push(pair[0].iter().zip(&pair[1]).map(|(a, b)| a.slerp(*b, t).canonical()).collect());
        }
    }
    frames.push(keyframes[keyframes.len() - 1].clone());
    let n = frames.len();
    Ok(MotionClip { frames, root_positions: vec![[0.0; 3]; n], fps: DEFAULT_FPS, action: Action::Gaming })
}
