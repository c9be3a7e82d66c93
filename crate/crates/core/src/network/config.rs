use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::RECONSTRUCTION_SIZES;

pub const Z_SIZES: [usize; 6] = [10, 20, 50, 70, 100, 500];

/// Which decoder branches exist. The pose branch always does.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchConfig {
    pub rot: bool,
    pub hm: bool,
}

impl Default for BranchConfig {
    fn default() -> Self {
        BranchConfig { rot: true, hm: true }
    }
}

impl BranchConfig {
    pub const P3D: BranchConfig = BranchConfig { rot: false, hm: false };
    pub const P3D_ROT: BranchConfig = BranchConfig { rot: true, hm: false };
    pub const P3D_HM: BranchConfig = BranchConfig { rot: false, hm: true };
    pub const FULL: BranchConfig = BranchConfig { rot: true, hm: true };
    pub const ALL: [BranchConfig; 4] = [Self::P3D, Self::P3D_ROT, Self::P3D_HM, Self::FULL];

    pub fn name(self) -> &'static str {
        match (self.hm, self.rot) {
            (false, false) => "p3d",
            (false, true) => "p3d+rot",
            (true, false) => "p3d+hm",
            (true, true) => "p3d+hm+rot",
        }
    }

    pub fn parse(s: &str) -> Result<BranchConfig> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch mode {s:?}; expected p3d, p3d+rot, p3d+hm or p3d+hm+rot")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_r: f64,
    pub lambda_hm: f64,
    pub lambda_theta: f64,
    pub lambda_l: f64,
    /// Length unit of the position terms, in metres (0.01 measures them in
    /// centimetres). The cosine and rotation terms are unit-free.
    pub pose_unit_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_p: 1e-1, lambda_r: 1e-1, lambda_hm: 1e-3, lambda_theta: -1e-2, lambda_l: 0.5, pose_unit_m: 0.01 }
    }
}

/// What the rotation branch is regressed onto.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RotationTarget {
    /// Rotations extracted from the predicted pose, differentiated through.
    #[default]
    PredictedPose,
    /// The same rotations as a constant: the pose branch gets no gradient
    /// from the rotation term.
    DetachedPredictedPose,
    /// The stored ground-truth rotations.
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifterConfig {
    pub input_size: usize,
    pub z_size: usize,
    pub hm_size: usize,
    pub branches: BranchConfig,
    /// Output channels of the stride-2, kernel-4 encoder convolutions.
    pub encoder_channels: Vec<usize>,
    /// Hidden widths of the pose and rotation branches (two hidden layers
    /// plus the output layer make three dense layers each).
    pub pose_hidden: Vec<usize>,
    pub rot_hidden: Vec<usize>,
    /// Hidden width of the heatmap branch's first dense layer.
    pub hm_hidden: usize,
    /// Channels entering the heatmap branch's first deconvolution.
    pub hm_channels: usize,
    pub batchnorm: bool,
    pub leaky_slope: f64,
    /// Multiplier on the Xavier draw of each branch's output layer, so the
    /// untrained outputs start near their biases.
    pub output_init_scale: f64,
}

impl Default for LifterConfig {
    fn default() -> Self {
        LifterConfig {
            input_size: 47,
            z_size: 50,
            hm_size: 48,
            branches: BranchConfig::default(),
            encoder_channels: vec![16, 32, 64, 64],
            pose_hidden: vec![256, 256],
            rot_hidden: vec![256, 256],
            hm_hidden: 256,
            hm_channels: 16,
            batchnorm: true,
            leaky_slope: 0.2,
            output_init_scale: 0.1,
        }
    }
}

impl LifterConfig {
    pub fn validate(&self, strict_grid: bool) -> Result<()> {
        if strict_grid && !Z_SIZES.contains(&self.z_size) {
            return Err(Error::Config(format!("z_size must be one of {Z_SIZES:?}")));
        }
        if strict_grid && !RECONSTRUCTION_SIZES.contains(&self.hm_size) {
            return Err(Error::Config(format!("hm_size must be one of {RECONSTRUCTION_SIZES:?}")));
        }
        if self.z_size == 0 || self.hm_size == 0 || self.encoder_channels.is_empty() {
            return Err(Error::Config("lifter sizes must be positive".into()));
        }
        if self.encoder_spatial().is_none() {
            return Err(Error::Config("input too small for the encoder depth".into()));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::Config("leaky_slope must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Spatial size after the encoder convolutions.
    pub fn encoder_spatial(&self) -> Option<usize> {
        let mut s = self.input_size;
        for _ in &self.encoder_channels {
            s = crate::tensor::conv_out_size(s, 4, 2, 1)?;
        }
        (s > 0).then_some(s)
    }

    /// `(base size, number of stride-2 deconvolutions)` of the heatmap
    /// branch: as many doublings (at most three) as divide `hm_size`.
    pub fn hm_plan(&self) -> (usize, usize) {
        let mut base = self.hm_size;
        let mut n = 0;
        while n < 3 && base % 2 == 0 {
            base /= 2;
            n += 1;
        }
        (base, n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub image_size: usize,
    /// Stride-2, kernel-4 downsampling convolutions.
    pub down_channels: Vec<usize>,
    /// Stride-1, kernel-3 blocks at the bottleneck resolution.
    pub mid_blocks: usize,
    pub head_channels: usize,
    pub heatmap_size: usize,
    pub leaky_slope: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            image_size: 368,
            down_channels: vec![8, 16, 32, 32],
            mid_blocks: 2,
            head_channels: 16,
            heatmap_size: 47,
            leaky_slope: 0.2,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let mut s = self.image_size;
        for _ in &self.down_channels {
            s = crate::tensor::conv_out_size(s, 4, 2, 1)
                .ok_or_else(|| Error::Config("image too small for the detector".into()))?;
        }
        // kernel-3 stride-2 unpadded deconvolution: 2s + 1
        if 2 * s + 1 != self.heatmap_size {
            return Err(Error::Config(format!(
                "detector bottleneck {s} does not upsample to {}",
                self.heatmap_size
            )));
        }
        Ok(())
    }
}
