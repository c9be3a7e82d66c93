//! Procedural motion, stick-figure images and dataset files.

mod clip;
mod dataset;
mod pose;
mod raster;

pub use clip::{interpolate_clip, MotionClip, DEFAULT_FPS};
pub use dataset::{
    annotate, generate, generate_dataset, load_dataset, mask_3d, read_records, summarize, write_dataset,
    write_records, Dataset, LoadedDataset, Manifest, PerSplit, SampleRecord, Split, SplitSummary, SynthConfig,
    MANIFEST_FILE, SKELETON_FILE,
};
pub use pose::{default_limits, sample_pose, within_limit, Action, JointLimit, Limit, LimitKind, PoseLimits};
pub use raster::{rasterize, rasterize_joints, Background, Image, StickStyle};
