use super::quat::Quat;
use super::real::{add, dot, lift, norm, scale, sub, Real, Vec3};
use super::skeleton::Skeleton;
use crate::error::{Error, Result};

/// Joint positions in metres, camera frame, skeleton index order.
pub type Pose3D<T = f64> = Vec<Vec3<T>>;

/// Per-joint rotation relative to the parent joint's frame.
pub type LocalRotations<T = f64> = Vec<Quat<T>>;

/// Coordinates beyond this are treated as corrupt.
pub const POSE_BOUND_M: f64 = 10.0;

/// Global frame of every joint: `G[j] = G[parent] · local[j]`.
pub fn global_rotations<T: Real>(rot: &[Quat<T>], skel: &Skeleton) -> Vec<Quat<T>> {
    let mut g: Vec<Quat<T>> = Vec::with_capacity(skel.len());
    for j in 0..skel.len() {
        g.push(match skel.parent[j] {
            None => rot[j],
            Some(p) => g[p].mul(rot[j]),
        });
    }
    g
}

pub fn forward_kinematics<T: Real>(rot: &[Quat<T>], skel: &Skeleton, root_pos: Vec3<T>) -> Pose3D<T> {
    assert_eq!(rot.len(), skel.len(), "one rotation per joint");
    let g = global_rotations(rot, skel);
    let mut pos = vec![root_pos; skel.len()];
    for j in 1..skel.len() {
        let p = skel.parent[j].expect("non-root joint has a parent");
        pos[j] = add(pos[p], g[p].rotate(lift(skel.rest_offset[j])));
    }
    pos
}

/// Vector from parent to joint for every non-root joint, in index order.
pub fn limb_vectors<T: Real>(pose: &[Vec3<T>], skel: &Skeleton) -> Vec<Vec3<T>> {
    skel.limbs().into_iter().map(|(c, p)| sub(pose[c], pose[p])).collect()
}

pub fn validate_pose(pose: &[Vec3]) -> Result<()> {
    for (j, p) in pose.iter().enumerate() {
        if p.iter().any(|c| !c.is_finite() || c.abs() >= POSE_BOUND_M) {
            return Err(Error::Numeric(format!("joint {j} has an invalid position {p:?}")));
        }
    }
    Ok(())
}

/// The two children used to pin down a branching joint's full rotation:
/// the longest rest bone, then the one closest to perpendicular to it
/// (lowest index on ties).
pub fn triad_children(skel: &Skeleton, j: usize) -> Option<(usize, usize)> {
    let kids = skel.children(j);
    if kids.len() < 2 {
        return None;
    }
    let len = |c: usize| norm(skel.rest_offset[c]);
    let mut primary = kids[0];
    for &c in &kids[1..] {
        if len(c) > len(primary) {
            primary = c;
        }
    }
    let a = skel.rest_offset[primary];
    let cos = |c: usize| (dot(a, skel.rest_offset[c]) / (len(c) * len(primary))).abs();
    let mut secondary = None::<usize>;
    for &c in kids.iter().filter(|&&c| c != primary) {
        if secondary.map_or(true, |s| cos(c) < cos(s)) {
            secondary = Some(c);
        }
    }
    Some((primary, secondary.expect("at least two children")))
}

/// Local rotations explaining `pose`. Single-child joints get the minimal
/// (zero-twist) swing from the rest bone to the observed bone; branching
/// joints are fixed by two of their bones; leaves stay at identity.
pub fn extract_rotations<T: Real>(pose: &[Vec3<T>], skel: &Skeleton) -> Result<LocalRotations<T>> {
    if pose.len() != skel.len() {
        return Err(Error::dim(format!("pose has {} joints, skeleton {}", pose.len(), skel.len())));
    }
    for (c, p) in skel.limbs() {
        if norm(sub(pose[c], pose[p])).value() <= 1e-9 {
            return Err(Error::ZeroLengthBone(skel.joint_names[c].clone()));
        }
    }
    let mut local = vec![Quat::<T>::identity(); skel.len()];
    let mut global = vec![Quat::<T>::identity(); skel.len()];
    for j in 0..skel.len() {
        let parent_g = skel.parent[j].map_or(Quat::identity(), |p| global[p]);
        let inv = parent_g.conjugate();
        let observed = |c: usize| inv.rotate(sub(pose[c], pose[j]));
        let kids = skel.children(j);
        let q = if kids.is_empty() {
            Quat::identity()
        } else if let Some((a, b)) = triad_children(skel, j) {
            let da = observed(a);
            let q1 = Quat::from_two_vectors(lift(skel.rest_offset[a]), da)?;
            let axis = scale(da, T::one() / norm(da));
            let reject = |v: Vec3<T>| sub(v, scale(axis, dot(v, axis)));
            let from = reject(q1.rotate(lift(skel.rest_offset[b])));
            let to = reject(observed(b));
            let q2 = Quat::about_axis_between(from, to, axis)?;
            q2.mul(q1)
        } else {
            let c = kids[0];
            Quat::from_two_vectors(lift(skel.rest_offset[c]), observed(c))?
        };
        local[j] = q.canonical();
        global[j] = parent_g.mul(local[j]);
    }
    Ok(local)
}

/// Whether `q` (a non-leaf local rotation) has no twist about the rest
/// direction of the joint's single child.
pub fn is_zero_twist(q: Quat<f64>, rest_child: Vec3) -> bool {
    let a = scale(rest_child, 1.0 / norm(rest_child));
    dot(q.vector(), a).abs() <= 1e-9
}
