use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{LocalRotations, Quaternion, Skeleton, Vec3};
use crate::rng;

/// Action labels used to group clips and report per-action errors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Gaming,
    Gesticulating,
    Greeting,
    LowerStretching,
    Patting,
    Reacting,
    Talking,
    UpperStretching,
    Walking,
}

impl Action {
    pub const ALL: [Action; 9] = [
        Action::Gaming,
        Action::Gesticulating,
        Action::Greeting,
        Action::LowerStretching,
        Action::Patting,
        Action::Reacting,
        Action::Talking,
        Action::UpperStretching,
        Action::Walking,
    ];

    pub fn index(self) -> u8 {
        Action::ALL.iter().position(|&a| a == self).expect("listed") as u8
    }

    pub fn from_index(i: u8) -> Result<Action> {
        Action::ALL.get(i as usize).copied().ok_or_else(|| Error::Format(format!("unknown action index {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Gaming => "Gaming",
            Action::Gesticulating => "Gesticulating",
            Action::Greeting => "Greeting",
            Action::LowerStretching => "LowerStretching",
            Action::Patting => "Patting",
            Action::Reacting => "Reacting",
            Action::Talking => "Talking",
            Action::UpperStretching => "UpperStretching",
            Action::Walking => "Walking",
        }
    }

    /// How strongly each body part moves: `[root, head, arms, legs]`, as
    /// fractions of the configured joint limits. The labels only steer the
    /// procedural motion; they make no claim about what the action looks like.
    pub fn profile(self) -> [f64; 4] {
        match self {
            Action::Gaming => [0.2, 0.3, 0.6, 0.15],
            Action::Gesticulating => [0.3, 0.5, 0.9, 0.2],
            Action::Greeting => [0.3, 0.4, 1.0, 0.2],
            Action::LowerStretching => [1.0, 0.3, 0.5, 1.0],
            Action::Patting => [0.4, 0.3, 0.8, 0.3],
            Action::Reacting => [0.6, 0.7, 0.7, 0.5],
            Action::Talking => [0.15, 0.6, 0.5, 0.1],
            Action::UpperStretching => [0.6, 0.4, 1.0, 0.3],
            Action::Walking => [0.25, 0.3, 0.5, 0.9],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Action> {
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown action {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Limit {
    /// Swing about a uniformly random axis perpendicular to the child bone,
    /// by at most `max_deg`.
    Swing { max_deg: f64 },
    /// Rotation about `axis` (made perpendicular to the child bone) by an
    /// angle in `[min_deg, max_deg]`.
    Hinge { axis: Vec3, min_deg: f64, max_deg: f64 },
    /// Any axis, angle at most `max_deg`. Meant for the branching root.
    Free { max_deg: f64 },
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Swing,
    Hinge,
    Free,
    Fixed,
}

/// Config-file form of a joint limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointLimit {
    pub joint: String,
    pub kind: LimitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Vec3>,
}

impl JointLimit {
    pub fn new(joint: &str, limit: Limit) -> Self {
        let mut out = JointLimit { joint: joint.into(), kind: LimitKind::Fixed, max_deg: None, min_deg: None, axis: None };
        match limit {
            Limit::Swing { max_deg } => (out.kind, out.max_deg) = (LimitKind::Swing, Some(max_deg)),
            Limit::Free { max_deg } => (out.kind, out.max_deg) = (LimitKind::Free, Some(max_deg)),
            Limit::Hinge { axis, min_deg, max_deg } => {
                (out.kind, out.axis, out.min_deg, out.max_deg) = (LimitKind::Hinge, Some(axis), Some(min_deg), Some(max_deg))
            }
            Limit::Fixed => {}
        }
        out
    }

    pub fn limit(&self) -> Result<Limit> {
        let need = |v: Option<f64>, what: &str| {
            v.ok_or_else(|| Error::Config(format!("{}: {:?} limit needs {what}", self.joint, self.kind)))
        };
        let unused = match self.kind {
            LimitKind::Fixed => self.max_deg.is_some() || self.min_deg.is_some() || self.axis.is_some(),
            LimitKind::Swing | LimitKind::Free => self.min_deg.is_some() || self.axis.is_some(),
            LimitKind::Hinge => false,
        };
        if unused {
            return Err(Error::Config(format!("{}: field does not apply to a {:?} limit", self.joint, self.kind)));
        }
        Ok(match self.kind {
            LimitKind::Fixed => Limit::Fixed,
            LimitKind::Swing => Limit::Swing { max_deg: need(self.max_deg, "max_deg")? },
            LimitKind::Free => Limit::Free { max_deg: need(self.max_deg, "max_deg")? },
            LimitKind::Hinge => Limit::Hinge {
                axis: self.axis.ok_or_else(|| Error::Config(format!("{}: hinge limit needs an axis", self.joint)))?,
                min_deg: need(self.min_deg, "min_deg")?,
                max_deg: need(self.max_deg, "max_deg")?,
            },
        })
    }
}

/// Which body part a joint's limit is scaled by in an action profile.
fn body_part(name: &str) -> usize {
    if name == "Neck" {
        0
    } else if name == "Head" {
        1
    } else if name.contains("Arm") || name.contains("Elbow") || name.contains("Hand") {
        2
    } else {
        3
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseLimits {
    limits: Vec<Limit>,
}

impl PoseLimits {
    /// Resolves named limits against a skeleton; unnamed joints are fixed.
    pub fn new(skel: &Skeleton, specs: &[JointLimit]) -> Result<Self> {
        let mut limits = vec![Limit::Fixed; skel.len()];
        for s in specs {
            let j = skel
                .index_of(&s.joint)
                .ok_or_else(|| Error::Config(format!("limit for unknown joint {:?}", s.joint)))?;
            let kids = skel.children(j);
            let limit = s.limit()?;
            match &limit {
                Limit::Swing { max_deg } | Limit::Free { max_deg } if !(0.0..=180.0).contains(max_deg) => {
                    return Err(Error::Config(format!("{}: max_deg must lie in [0, 180]", s.joint)));
                }
                Limit::Hinge { min_deg, max_deg, axis } => {
                    if !(min_deg <= max_deg && min_deg.abs() <= 180.0 && max_deg.abs() <= 180.0) {
                        return Err(Error::Config(format!("{}: hinge range is malformed", s.joint)));
                    }
                    if kids.len() != 1 || perpendicular_part(*axis, skel.rest_offset[kids[0]]).is_none() {
                        return Err(Error::Config(format!(
                            "{}: hinge needs one child bone not parallel to the axis",
                            s.joint
                        )));
                    }
                }
                _ => {}
            }
            let bad_swing = matches!(limit, Limit::Swing { .. }) && kids.len() != 1;
            let bad_free = matches!(limit, Limit::Free { .. }) && kids.len() < 2;
            if (!matches!(limit, Limit::Fixed) && kids.is_empty()) || bad_swing || bad_free {
                return Err(Error::Config(format!(
                    "{}: swing and hinge limits need exactly one child, free limits a branching joint",
                    s.joint
                )));
            }
            limits[j] = limit;
        }
        Ok(PoseLimits { limits })
    }

    pub fn get(&self, j: usize) -> &Limit {
        &self.limits[j]
    }

    /// Same limits with every angle range multiplied by the action's
    /// per-body-part factor.
    pub fn scaled_for(&self, skel: &Skeleton, action: Action) -> PoseLimits {
        let profile = action.profile();
        let limits = self
            .limits
            .iter()
            .enumerate()
            .map(|(j, l)| {
                let s = profile[body_part(&skel.joint_names[j])];
                match l {
                    Limit::Swing { max_deg } => Limit::Swing { max_deg: max_deg * s },
                    Limit::Free { max_deg } => Limit::Free { max_deg: max_deg * s },
                    Limit::Hinge { axis, min_deg, max_deg } => {
                        Limit::Hinge { axis: *axis, min_deg: min_deg * s, max_deg: max_deg * s }
                    }
                    Limit::Fixed => Limit::Fixed,
                }
            })
            .collect();
        PoseLimits { limits }
    }
}

/// Default plausibility ranges, in degrees. Elbows and knees are hinges
/// bending forward and backward respectively.
pub fn default_limits() -> Vec<JointLimit> {
    let mut v = vec![JointLimit::new("Neck", Limit::Free { max_deg: 25.0 }), JointLimit::new("Head", Limit::Fixed)];
    for side in ["Left", "Right"] {
        v.extend([
            JointLimit::new(&format!("{side}Arm"), Limit::Swing { max_deg: 80.0 }),
            JointLimit::new(&format!("{side}Elbow"), Limit::Hinge { axis: [-1.0, 0.0, 0.0], min_deg: 0.0, max_deg: 150.0 }),
            JointLimit::new(&format!("{side}Leg"), Limit::Swing { max_deg: 45.0 }),
            JointLimit::new(&format!("{side}Knee"), Limit::Hinge { axis: [1.0, 0.0, 0.0], min_deg: 0.0, max_deg: 110.0 }),
            JointLimit::new(&format!("{side}Foot"), Limit::Swing { max_deg: 25.0 }),
        ]);
    }
    v
}

fn perpendicular_part(axis: Vec3, bone: Vec3) -> Option<Vec3> {
    let n = (bone[0] * bone[0] + bone[1] * bone[1] + bone[2] * bone[2]).sqrt();
    let d = bone.map(|c| c / n);
    let p = axis[0] * d[0] + axis[1] * d[1] + axis[2] * d[2];
    let r = [axis[0] - p * d[0], axis[1] - p * d[1], axis[2] - p * d[2]];
    let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    (rn > 1e-6).then(|| r.map(|c| c / rn))
}

/// Unit axis perpendicular to the unit vector `d` at angle `phi` around it.
fn axis_around(d: Vec3, phi: f64) -> Vec3 {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let e1 = perpendicular_part(helper, d).expect("helper not parallel");
    let e2 = [d[1] * e1[2] - d[2] * e1[1], d[2] * e1[0] - d[0] * e1[2], d[0] * e1[1] - d[1] * e1[0]];
    let (s, c) = phi.sin_cos();
    [c * e1[0] + s * e2[0], c * e1[1] + s * e2[1], c * e1[2] + s * e2[2]]
}

fn random_unit(r: &mut impl Rng) -> Vec3 {
    loop {
        let v: Vec3 = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

/// Independent random rotation per joint within its limit. Swings and
/// hinges have no twist about the child bone, so the result is exactly
/// what [`crate::kinematics::extract_rotations`] recovers from the pose.
pub fn sample_pose(seed: u64, limits: &PoseLimits, skel: &Skeleton) -> LocalRotations {
    let mut out = Vec::with_capacity(skel.len());
    for j in 0..skel.len() {
        let mut r = rng::stream(seed, "joint", j as u64);
        let q = match limits.get(j) {
            Limit::Fixed => Quaternion::identity(),
            Limit::Swing { max_deg } => {
                let d = unit(skel.rest_offset[skel.children(j)[0]]);
                let axis = axis_around(d, r.gen_range(0.0..std::f64::consts::TAU));
                Quaternion::from_axis_angle(axis, r.gen_range(0.0..=max_deg.to_radians()))
            }
            Limit::Hinge { axis, min_deg, max_deg } => {
                let a = perpendicular_part(*axis, skel.rest_offset[skel.children(j)[0]]).expect("validated");
                Quaternion::from_axis_angle(a, r.gen_range(min_deg.to_radians()..=max_deg.to_radians()))
            }
            Limit::Free { max_deg } => {
                Quaternion::from_axis_angle(random_unit(&mut r), r.gen_range(0.0..=max_deg.to_radians()))
            }
        };
        out.push(q.canonical());
    }
    out
}

fn unit(v: Vec3) -> Vec3 {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

/// Whether a joint rotation honours its limit (angles within `tol` rad).
pub fn within_limit(q: Quaternion, limit: &Limit, rest_child: Option<Vec3>, tol: f64) -> bool {
    let angle = q.angle();
    match limit {
        Limit::Fixed => angle <= tol,
        Limit::Free { max_deg } => angle <= max_deg.to_radians() + tol,
        Limit::Swing { max_deg } => {
            let d = unit(rest_child.expect("swing joints have a child"));
            let v = q.vector();
            angle <= max_deg.to_radians() + tol && (v[0] * d[0] + v[1] * d[1] + v[2] * d[2]).abs() <= tol
        }
        Limit::Hinge { axis, min_deg, max_deg } => {
            let a = perpendicular_part(*axis, rest_child.expect("hinge joints have a child")).expect("validated");
            let v = q.vector();
            let along = v[0] * a[0] + v[1] * a[1] + v[2] * a[2];
            let off = ((v[0] - along * a[0]).powi(2) + (v[1] - along * a[1]).powi(2) + (v[2] - along * a[2]).powi(2)).sqrt();
            let signed = 2.0 * along.atan2(q.w);
            off <= tol && signed >= min_deg.to_radians() - tol && signed <= max_deg.to_radians() + tol
        }
    }
}
