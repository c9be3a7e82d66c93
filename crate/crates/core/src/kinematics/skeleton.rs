use std::path::Path;

use serde::{Deserialize, Serialize};

use super::real::{norm, Vec3};
use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 16;
pub const NUM_HEATMAPS: usize = 15;
pub const NUM_LIMBS: usize = NUM_JOINTS - 1;

/// Joint hierarchy with rest-pose bone offsets, in the camera axes
/// convention: +X towards the wearer's left, +Y forward, +Z down.
///
/// Joints are stored so that every parent precedes its children.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    pub joint_names: Vec<String>,
    pub parent: Vec<Option<usize>>,
    pub rest_offset: Vec<Vec3>,
    pub heatmap_joints: Vec<usize>,
    children: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointSpec {
    name: String,
    #[serde(default)]
    parent: Option<String>,
    offset: Vec3,
    #[serde(default = "yes")]
    heatmap: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    joint: Vec<JointSpec>,
}

/// The shipped default skeleton definition.
pub const DEFAULT_SKELETON_TOML: &str = include_str!("../../assets/skeleton.toml");

impl Skeleton {
    pub fn new(
        joint_names: Vec<String>,
        parent: Vec<Option<usize>>,
        rest_offset: Vec<Vec3>,
        heatmap_joints: Vec<usize>,
    ) -> Result<Self> {
        let n = joint_names.len();
        if parent.len() != n || rest_offset.len() != n {
            return Err(Error::Config("skeleton arrays differ in length".into()));
        }
        let roots = parent.iter().filter(|p| p.is_none()).count();
        if roots != 1 || parent[0].is_some() {
            return Err(Error::Config("skeleton needs exactly one root, stored first".into()));
        }
        let mut children = vec![Vec::new(); n];
        for (j, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                // parents before children rules out cycles
                if p >= j {
                    return Err(Error::Config(format!(
                        "joint {} must come after its parent",
                        joint_names[j]
                    )));
                }
                if norm(rest_offset[j]) <= 0.0 {
                    return Err(Error::Config(format!(
                        "joint {} has a zero rest offset",
                        joint_names[j]
                    )));
                }
                children[p].push(j);
            }
        }
        let excluded: Vec<usize> = (0..n).filter(|j| !heatmap_joints.contains(j)).collect();
        if excluded.len() != 1 || joint_names[excluded[0]] != "Head" {
            return Err(Error::Config("heatmap joints must exclude exactly the Head joint".into()));
        }
        if heatmap_joints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("heatmap joints must be in increasing order".into()));
        }
        Ok(Skeleton { joint_names, parent, rest_offset, heatmap_joints, children })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SkeletonFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let names: Vec<String> = file.joint.iter().map(|j| j.name.clone()).collect();
        let mut parent = Vec::with_capacity(names.len());
        for j in &file.joint {
            parent.push(match &j.parent {
                None => None,
                Some(p) => Some(names.iter().position(|n| n == p).ok_or_else(|| {
                    Error::Config(format!("joint {} has unknown parent {p}", j.name))
                })?),
            });
        }
        let offsets = file.joint.iter().map(|j| j.offset).collect();
        let heatmaps = file.joint.iter().enumerate().filter(|(_, j)| j.heatmap).map(|(i, _)| i).collect();
        Skeleton::new(names, parent, offsets, heatmaps)
    }

    pub fn to_toml(&self) -> String {
        let file = SkeletonFile {
            joint: (0..self.len())
                .map(|j| JointSpec {
                    name: self.joint_names[j].clone(),
                    parent: self.parent[j].map(|p| self.joint_names[p].clone()),
                    offset: self.rest_offset[j],
                    heatmap: self.heatmap_joints.contains(&j),
                })
                .collect(),
        };
        toml::to_string(&file).expect("skeleton serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Neck-rooted 16-joint skeleton in a symmetric A-pose, about 1.7 m tall.
    pub fn egocentric() -> Self {
        Self::from_toml(DEFAULT_SKELETON_TOML).expect("shipped skeleton is valid")
    }

    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// `(child, parent)` per limb, ordered by child index.
    pub fn limbs(&self) -> Vec<(usize, usize)> {
        (0..self.len()).filter_map(|j| self.parent[j].map(|p| (j, p))).collect()
    }

    /// Rest-pose joint positions with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vec3> {
        let mut pos = vec![[0.0; 3]; self.len()];
        for j in 1..self.len() {
            let p = self.parent[j].expect("non-root");
            pos[j] = super::real::add(pos[p], self.rest_offset[j]);
        }
        pos
    }
}
