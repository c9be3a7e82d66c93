//! Animation export: a JSON motion file and BVH text with Z-X-Y Euler
//! channels in degrees.
//!
//! BVH composes `child = parent · T(offset) · Rz · Rx · Ry`, which is the
//! same chain [`forward_kinematics`](crate::kinematics::forward_kinematics)
//! evaluates, so joint offsets are written unchanged (metres).

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{euler_zxy_deg, quat_from_euler_zxy_deg};
use crate::kinematics::{Quaternion, Skeleton, Vec3};
use crate::synth::{Action, MotionClip};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub root: Vec3,
    /// `[w, x, y, z]` per joint, skeleton order.
    pub rotations: Vec<[f64; 4]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionFile {
    pub fps: f64,
    pub action: Action,
    pub joint_names: Vec<String>,
    pub parents: Vec<Option<String>>,
    pub offsets: Vec<Vec3>,
    pub frames: Vec<MotionFrame>,
}

fn check_clip(clip: &MotionClip, skel: &Skeleton) -> Result<()> {
    if clip.root_positions.len() != clip.frames.len() {
        return Err(Error::dim("clip needs one root position per frame"));
    }
    if clip.frames.iter().any(|f| f.len() != skel.len()) {
        return Err(Error::dim("clip frames do not match the skeleton"));
    }
    Ok(())
}

impl MotionFile {
    pub fn from_clip(clip: &MotionClip, skel: &Skeleton) -> Result<MotionFile> {
        check_clip(clip, skel)?;
        Ok(MotionFile {
            fps: clip.fps,
            action: clip.action,
            joint_names: skel.joint_names.clone(),
            parents: skel.parent.iter().map(|p| p.map(|p| skel.joint_names[p].clone())).collect(),
            offsets: skel.rest_offset.clone(),
            frames: clip
                .frames
                .iter()
                .zip(&clip.root_positions)
                .map(|(f, &root)| MotionFrame { root, rotations: f.iter().map(|q| q.to_array()).collect() })
                .collect(),
        })
    }

    pub fn to_clip(&self) -> MotionClip {
        MotionClip {
            frames: self.frames.iter().map(|f| f.rotations.iter().map(|&q| Quaternion::from_array(q)).collect()).collect(),
            root_positions: self.frames.iter().map(|f| f.root).collect(),
            fps: self.fps,
            action: self.action,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("motion serialises")
    }

    pub fn from_json(text: &str) -> Result<MotionFile> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("motion file: {e}")))
    }
}

/// Joints in depth-first order, as BVH lists them.
fn dfs_order(skel: &Skeleton) -> Vec<usize> {
    let mut order = Vec::with_capacity(skel.len());
    let mut stack = vec![0];
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(skel.children(j).iter().rev());
    }
    order
}

pub fn write_bvh(clip: &MotionClip, skel: &Skeleton) -> Result<String> {
    check_clip(clip, skel)?;
    if !(clip.fps > 0.0) {
        return Err(Error::arg("clip fps must be positive"));
    }
    let mut out = String::from("HIERARCHY\n");
    fn joint(out: &mut String, skel: &Skeleton, j: usize, depth: usize) {
        let pad = "  ".repeat(depth);
        let o = if j == 0 { [0.0; 3] } else { skel.rest_offset[j] };
        let kind = if j == 0 { "ROOT" } else { "JOINT" };
        let _ = writeln!(out, "{pad}{kind} {}\n{pad}{{", skel.joint_names[j]);
        let _ = writeln!(out, "{pad}  OFFSET {:.9} {:.9} {:.9}", o[0], o[1], o[2]);
        if j == 0 {
            let _ = writeln!(out, "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation");
        } else {
            let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Xrotation Yrotation");
        }
        if skel.children(j).is_empty() {
            let _ = writeln!(out, "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET 0 0 0\n{pad}  }}");
        }
        for &c in skel.children(j) {
            joint(out, skel, c, depth + 1);
        }
        let _ = writeln!(out, "{pad}}}");
    }
    joint(&mut out, skel, 0, 0);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {:.9}", clip.frames.len(), 1.0 / clip.fps);
    let order = dfs_order(skel);
    for (f, root) in clip.frames.iter().zip(&clip.root_positions) {
        let mut vals: Vec<String> = root.iter().map(|v| format!("{v:.9}")).collect();
        for &j in &order {
            vals.extend(euler_zxy_deg(f[j]).iter().map(|v| format!("{v:.9}")));
        }
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvhMotion {
    /// The reference skeleton with the offsets read from the file.
    pub skeleton: Skeleton,
    pub clip: MotionClip,
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(format!("bvh: {}", msg.into()))
}

/// Parses BVH written by [`write_bvh`] for the joints of `skel`; the
/// hierarchy in the file must match it.
pub fn read_bvh(text: &str, skel: &Skeleton) -> Result<BvhMotion> {
    let mut tokens = text.split_whitespace().peekable();
    let mut next = || tokens.next().ok_or_else(|| fmt_err("unexpected end of file"));
    let num = |t: &str| t.parse::<f64>().map_err(|_| fmt_err(format!("bad number {t:?}")));

    if next()? != "HIERARCHY" {
        return Err(fmt_err("missing HIERARCHY"));
    }
    let index: HashMap<&str, usize> = skel.joint_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut offsets = vec![[0.0; 3]; skel.len()];
    let mut seen = vec![false; skel.len()];
    let mut order = Vec::new();
    let mut stack: Vec<Option<usize>> = Vec::new();
    loop {
        let t = next()?;
        match t {
            "ROOT" | "JOINT" => {
                let name = next()?;
                let j = *index.get(name).ok_or_else(|| fmt_err(format!("unknown joint {name}")))?;
                let parent = stack.iter().rev().find_map(|s| *s);
                if seen[j] || parent != skel.parent[j] || (t == "ROOT") != (j == 0) {
                    return Err(fmt_err(format!("joint {name} does not match the skeleton hierarchy")));
                }
                seen[j] = true;
                order.push(j);
                if next()? != "{" || next()? != "OFFSET" {
                    return Err(fmt_err(format!("joint {name}: expected an offset")));
                }
                for o in offsets[j].iter_mut() {
                    *o = num(next()?)?;
                }
                if next()? != "CHANNELS" {
                    return Err(fmt_err(format!("joint {name}: expected channels")));
                }
                let want: &[&str] = if j == 0 {
                    &["6", "Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation"]
                } else {
                    &["3", "Zrotation", "Xrotation", "Yrotation"]
                };
                for w in want {
                    if next()? != *w {
                        return Err(fmt_err(format!("joint {name}: unsupported channel layout")));
                    }
                }
                stack.push(Some(j));
            }
            "End" => {
                if next()? != "Site" || next()? != "{" || next()? != "OFFSET" {
                    return Err(fmt_err("malformed End Site"));
                }
                for _ in 0..3 {
                    num(next()?)?;
                }
                stack.push(None);
            }
            "}" => {
                stack.pop().ok_or_else(|| fmt_err("unbalanced braces"))?;
            }
            "MOTION" if stack.is_empty() => break,
            other => return Err(fmt_err(format!("unexpected token {other:?}"))),
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(fmt_err("file is missing skeleton joints"));
    }
    let (a, b) = (next()?, next()?);
    if a != "Frames:" {
        return Err(fmt_err("missing frame count"));
    }
    let n: usize = b.parse().map_err(|_| fmt_err("bad frame count"))?;
    if next()? != "Frame" || next()? != "Time:" {
        return Err(fmt_err("missing frame time"));
    }
    let dt = num(next()?)?;
    if !(dt > 0.0) {
        return Err(fmt_err("frame time must be positive"));
    }
    let mut frames = Vec::with_capacity(n);
    let mut roots = Vec::with_capacity(n);
    for _ in 0..n {
        let root = [num(next()?)?, num(next()?)?, num(next()?)?];
        let mut rot = vec![Quaternion::identity(); skel.len()];
        for &j in &order {
            let e = [num(next()?)?, num(next()?)?, num(next()?)?];
            rot[j] = quat_from_euler_zxy_deg(e).canonical();
        }
        frames.push(rot);
        roots.push(root);
    }
    if next().is_ok() {
        return Err(fmt_err("trailing data after the last frame"));
    }
    let skeleton = Skeleton::new(skel.joint_names.clone(), skel.parent.clone(), offsets, skel.heatmap_joints.clone())?;
    Ok(BvhMotion { skeleton, clip: MotionClip { frames, root_positions: roots, fps: 1.0 / dt, action: Action::Gaming } })
}
